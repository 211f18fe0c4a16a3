use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use esbcpo_cli::config::{parse_override, RunConfig, OUTPUT_ROOT_VAR};
use esbcpo_cli::{compare, replay, run};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "esbcpo", version, about = "Constrained policy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one algorithm over several seeds.
    Train(RunArgs),
    /// Run cpo, esb-cpo-g1 and esb-cpo on shared seeds.
    Ablation(RunArgs),
    /// Tabulate final return and cost of completed runs.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output CSV; defaults to comparison.csv under the output root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-simulate a trajectory log and check its costs.
    Replay { log: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Flat JSON config or a run manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long = "env")]
    environment: Option<String>,
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    cost_limit: Option<f64>,
    /// Comma-separated seed list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    /// Any configuration key, e.g. `--set trust.delta=0.02`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut flags: Vec<(&str, Value)> = Vec::new();
        if let Some(v) = &self.algorithm {
            flags.push(("algorithm", Value::from(v.as_str())));
        }
        if let Some(v) = &self.environment {
            flags.push(("environment", Value::from(v.as_str())));
        }
        if let Some(v) = &self.layout {
            flags.push(("layout", Value::from(v.as_str())));
        }
        if let Some(v) = self.cost_limit {
            flags.push(("cost_limit", Value::from(v)));
        }
        if let Some(v) = &self.seeds {
            flags.push(("seeds", Value::from(v.as_str())));
        }
        if let Some(v) = self.epochs {
            flags.push(("epochs", Value::from(v)));
        }
        if let Some(v) = self.steps_per_epoch {
            flags.push(("steps_per_epoch", Value::from(v)));
        }
        if let Some(v) = &self.output {
            flags.push(("output", Value::from(v.to_string_lossy().into_owned())));
        }
        if let Some(v) = &self.name {
            flags.push(("name", Value::from(v.as_str())));
        }
        for (k, v) in flags {
            cfg.set(k, &v)?;
        }
        for o in &self.overrides {
            let (k, v) = parse_override(o)?;
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let report = run::train(&args.resolve()?)?;
            println!("{}", report.dir.display());
        }
        Command::Ablation(args) => {
            for (label, report) in run::ablation(&args.resolve()?)? {
                println!("{label}\t{}", report.dir.display());
            }
        }
        Command::Compare { runs, out } => {
            let out = out.unwrap_or_else(|| {
                std::env::var_os(OUTPUT_ROOT_VAR)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("runs"))
                    .join("comparison.csv")
            });
            for r in compare::compare(&runs, &out)? {
                let flag = if r.over_limit { "over-limit" } else { "ok" };
                println!(
                    "{}\t{}\treturn {:.3}\tcost {:.3} (limit {})\t{flag}",
                    r.run, r.algorithm, r.final_return, r.final_cost, r.cost_limit
                );
            }
            println!("{}", out.display());
        }
        Command::Replay { log } => {
            let r = replay::replay(&log)?;
            if !r.matches() {
                anyhow::bail!(
                    "replay diverged: {} cost and {} other mismatches in {} transitions",
                    r.cost_mismatches,
                    r.other_mismatches,
                    r.transitions
                );
            }
            println!("{} episodes, {} transitions reproduced", r.episodes, r.transitions);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}
