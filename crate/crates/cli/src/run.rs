//! Multi-seed training runs and the ablation driver.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use esbcpo::cmdp::{write_trajectory_log, LogHeader};
use esbcpo::envs::EnvSpec;
use esbcpo::policy::Checkpoint;
use esbcpo::trainer::{Algorithm, EpochMetrics, Trainer};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::metrics_csv::{self, MetricsWriter, MERGED_COMMENT};

pub const MANIFEST: &str = "manifest.json";
pub const MERGED: &str = "merged.csv";
pub const METRICS: &str = "metrics.csv";
pub const FAILED: &str = "FAILED";
pub const TRAJECTORIES: &str = "trajectories.log";

/// Sub-runs of an ablation, with their directory labels.
pub const ABLATION: [(&str, Algorithm); 3] = [
    ("cpo", Algorithm::Cpo),
    ("esb-cpo-g1", Algorithm::EsbCpoG1),
    ("esb-cpo-full", Algorithm::EsbCpo),
];

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    /// Per-seed metrics in seed order.
    pub seeds: Vec<(u64, Vec<EpochMetrics>)>,
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed-{seed}"))
}

/// Environment label stored in trajectory logs; carries what a replay needs
/// beyond the environment name.
pub fn env_label(spec: &EnvSpec) -> String {
    format!("{};layout={};horizon={}", spec.name(), spec.layout, spec.horizon)
}

pub fn spec_from_label(label: &str) -> Result<EnvSpec> {
    let mut parts = label.split(';');
    let mut spec = EnvSpec::by_name(parts.next().unwrap_or_default())?;
    for p in parts {
        match p.split_once('=') {
            Some(("layout", v)) => spec.layout = v.parse()?,
            Some(("horizon", v)) => spec.horizon = v.parse().map_err(|_| anyhow!("bad horizon `{v}`"))?,
            _ => bail!("unrecognized environment field `{p}`"),
        }
    }
    Ok(spec)
}

pub fn manifest(cfg: &RunConfig) -> Value {
    json!({
        "version": format!("esbcpo {}", env!("CARGO_PKG_VERSION")),
        "columns": esbcpo::trainer::EpochMetrics::COLUMNS,
        "config": Value::Object(cfg.to_json()),
    })
}

fn write_checkpoint(dir: &Path, t: &Trainer) -> Result<()> {
    let dir = dir.join(format!("epoch-{:04}", t.epoch()));
    fs::create_dir_all(&dir)?;
    let save = |name: &str, c: &Checkpoint| -> Result<()> {
        let f = File::create(dir.join(name))?;
        c.write(BufWriter::new(f))?;
        Ok(())
    };
    save("policy.ckpt", &Checkpoint::from_policy(t.policy()))?;
    let [r, c] = Checkpoint::from_critics(t.critics());
    save("critic-reward.ckpt", &r)?;
    save("critic-cost.ckpt", &c)?;
    Ok(())
}

fn run_seed(cfg: &RunConfig, run_dir: &Path, seed: u64) -> Result<Vec<EpochMetrics>> {
    let dir = seed_dir(run_dir, seed);
    fs::create_dir_all(&dir)?;
    let marker = dir.join(FAILED);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    let result = (|| -> Result<Vec<EpochMetrics>> {
        let mut writer = MetricsWriter::create(&dir.join(METRICS))?;
        let mut trainer = Trainer::new(cfg.env_spec(), cfg.algo_config(), seed)?;
        let epochs = cfg.algo.epochs;
        let ckpt_dir = dir.join("checkpoints");
        let metrics = trainer.run(|m, t| {
            writer.push(m).map_err(|e| esbcpo::Error::Io(e.to_string()))?;
            let done = t.epoch();
            let periodic = cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0;
            if periodic || done == epochs {
                write_checkpoint(&ckpt_dir, t).map_err(|e| esbcpo::Error::Io(e.to_string()))?;
            }
            Ok(())
        })?;
        if cfg.log_trajectories {
            let batch = trainer.sample_batch()?;
            let spec = trainer.spec();
            let header = LogHeader {
                env: env_label(spec),
                obs_dim: spec.obs_dim,
                act_dim: spec.action_space.action_len(),
            };
            let f = File::create(dir.join(TRAJECTORIES))?;
            write_trajectory_log(BufWriter::new(f), &header, &batch.trajectories)?;
        }
        Ok(metrics)
    })();
    if let Err(e) = &result {
        fs::write(&marker, format!("{e:#}\n"))?;
    }
    result
}

/// Trains every seed concurrently and merges the per-seed metrics.
pub fn train(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let marker = dir.join(FAILED);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest(cfg))? + "\n")?;

    let results: Vec<(u64, Result<Vec<EpochMetrics>>)> = cfg
        .seeds
        .par_iter()
        .map(|&s| (s, run_seed(cfg, &dir, s)))
        .collect();

    let mut failures = Vec::new();
    let mut seeds = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(m) => seeds.push((seed, m)),
            Err(e) => failures.push(format!("seed {seed}: {e:#}")),
        }
    }
    if !failures.is_empty() {
        fs::write(&marker, failures.join("\n") + "\n")?;
        bail!("{} of {} seeds failed; first: {}", failures.len(), cfg.seeds.len(), failures[0]);
    }
    let per_seed: Vec<Vec<EpochMetrics>> = seeds.iter().map(|(_, m)| m.clone()).collect();
    metrics_csv::write_table(&dir.join(MERGED), MERGED_COMMENT, &metrics_csv::merge(&per_seed))?;
    Ok(RunReport { dir, seeds })
}

/// The three ablation variants under one directory, sharing seeds and
/// every other setting.
pub fn ablation(cfg: &RunConfig) -> Result<Vec<(&'static str, RunReport)>> {
    let base = cfg.output.join(
        cfg.name
            .clone()
            .unwrap_or_else(|| format!("ablation-{}", cfg.environment)),
    );
    ABLATION
        .iter()
        .map(|&(label, algorithm)| {
            let mut sub = cfg.with_algorithm(algorithm);
            sub.output = base.clone();
            sub.name = Some(label.to_string());
            train(&sub).map(|r| (label, r))
        })
        .collect()
}
