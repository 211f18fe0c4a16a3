//! Run configuration: a flat key space with dotted module prefixes, loaded
//! from JSON and overridden key by key.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use esbcpo::envs::{EnvKind, EnvSpec, Layout};
use esbcpo::trainer::{AlgoConfig, Algorithm};
use serde_json::{Map, Value};

/// Overrides the default output root.
pub const OUTPUT_ROOT_VAR: &str = "ESBCPO_OUTPUT_ROOT";

/// Every accepted key, in manifest order.
pub const KEYS: &[&str] = &[
    "name",
    "algorithm",
    "environment",
    "layout",
    "cost_limit",
    "seeds",
    "epochs",
    "steps_per_epoch",
    "output",
    "checkpoint_every",
    "log_trajectories",
    "cmdp.gamma",
    "cmdp.horizon",
    "trainer.gae_lambda",
    "trust.delta",
    "trust.cg_iters",
    "trust.cg_tol",
    "trust.damping",
    "trust.backtrack_ratio",
    "trust.max_backtracks",
    "adaptation.lambda",
    "adaptation.k",
    "adaptation.eta",
    "policy.hidden",
    "policy.log_std_init",
    "critic.epochs",
    "critic.lr",
    "critic.minibatch",
    "critic.holdout_fraction",
    "lagrangian.init",
    "lagrangian.lr",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Directory name under `output`; defaults to `<algorithm>-<environment>`.
    pub name: Option<String>,
    pub environment: EnvKind,
    pub layout: Layout,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    /// Checkpoint period in epochs; the final epoch is always saved.
    pub checkpoint_every: usize,
    /// Write the last epoch's trajectories of every seed.
    pub log_trajectories: bool,
    /// Horizon override; the environment default when unset.
    pub horizon: Option<usize>,
    pub algo: AlgoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let output = std::env::var_os(OUTPUT_ROOT_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        let mut algo = AlgoConfig::default();
        algo.cmdp.cost_limit = 5.0;
        Self {
            name: None,
            environment: EnvKind::PointCircle,
            layout: Layout::default(),
            seeds: vec![0, 1, 2, 3, 4],
            output,
            checkpoint_every: 50,
            log_trajectories: false,
            horizon: None,
            algo,
        }
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .ok_or_else(|| anyhow!("key `{key}` expects a number, got {v}"))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Number(n) => n.as_u64().map(|u| u as usize),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .ok_or_else(|| anyhow!("key `{key}` expects a non-negative integer, got {v}"))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| anyhow!("key `{key}` expects a string, got {v}"))
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
    .ok_or_else(|| anyhow!("key `{key}` expects true or false, got {v}"))
}

/// Accepts `[1, 2]` or `"1,2"`.
fn as_usize_list(key: &str, v: &Value) -> Result<Vec<usize>> {
    match v {
        Value::Array(items) => items.iter().map(|i| as_usize(key, i)).collect(),
        Value::Number(_) => Ok(vec![as_usize(key, v)?]),
        Value::String(s) => s
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| anyhow!("key `{key}`: bad entry `{p}`")))
            .collect(),
        _ => bail!("key `{key}` expects a list of integers, got {v}"),
    }
}

/// Parses the right-hand side of `--set key=value`: JSON when it parses,
/// otherwise the raw text as a string.
pub fn parse_override(assignment: &str) -> Result<(String, Value)> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not of the form key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let a = &mut self.algo;
        match key {
            "name" => self.name = Some(as_str(key, v)?.to_string()),
            "algorithm" => a.algorithm = as_str(key, v)?.parse()?,
            "environment" => self.environment = as_str(key, v)?.parse()?,
            "layout" => self.layout = as_str(key, v)?.parse()?,
            "cost_limit" => a.cmdp.cost_limit = as_f64(key, v)?,
            "seeds" => self.seeds = as_usize_list(key, v)?.into_iter().map(|s| s as u64).collect(),
            "epochs" => a.epochs = as_usize(key, v)?,
            "steps_per_epoch" => a.steps_per_epoch = as_usize(key, v)?,
            "output" => self.output = PathBuf::from(as_str(key, v)?),
            "checkpoint_every" => self.checkpoint_every = as_usize(key, v)?,
            "log_trajectories" => self.log_trajectories = as_bool(key, v)?,
            "cmdp.gamma" => a.cmdp.gamma = as_f64(key, v)?,
            "cmdp.horizon" => self.horizon = Some(as_usize(key, v)?),
            "trainer.gae_lambda" => a.gae_lambda = as_f64(key, v)?,
            "trust.delta" => a.trust.delta = as_f64(key, v)?,
            "trust.cg_iters" => a.trust.cg_iters = as_usize(key, v)?,
            "trust.cg_tol" => a.trust.cg_tol = as_f64(key, v)?,
            "trust.damping" => a.trust.damping = as_f64(key, v)?,
            "trust.backtrack_ratio" => a.trust.backtrack_ratio = as_f64(key, v)?,
            "trust.max_backtracks" => a.trust.max_backtracks = as_usize(key, v)?,
            "adaptation.lambda" => {
                let s = a.adaptation;
                a.adaptation = esbcpo::adaptation::AlphaState::new(as_f64(key, v)?, s.k, s.eta);
            }
            "adaptation.k" => {
                let s = a.adaptation;
                a.adaptation = esbcpo::adaptation::AlphaState::new(s.lambda, as_f64(key, v)?, s.eta);
            }
            "adaptation.eta" => a.adaptation.eta = as_f64(key, v)?,
            "policy.hidden" => a.hidden = as_usize_list(key, v)?,
            "policy.log_std_init" => a.log_std_init = as_f64(key, v)?,
            "critic.epochs" => a.critic.epochs = as_usize(key, v)?,
            "critic.lr" => a.critic.lr = as_f64(key, v)?,
            "critic.minibatch" => a.critic.minibatch = as_usize(key, v)?,
            "critic.holdout_fraction" => a.holdout_fraction = as_f64(key, v)?,
            "lagrangian.init" => a.lagrangian_init = as_f64(key, v)?,
            "lagrangian.lr" => a.lagrangian_lr = as_f64(key, v)?,
            _ => bail!("unknown configuration key `{key}`"),
        }
        Ok(())
    }

    /// Applies every entry of a flat object. A run manifest is accepted too:
    /// its `config` member is used.
    pub fn apply_json(&mut self, value: &Value) -> Result<()> {
        let obj = value
            .get("config")
            .unwrap_or(value)
            .as_object()
            .ok_or_else(|| anyhow!("configuration must be a JSON object"))?;
        for (k, v) in obj {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let mut cfg = Self::default();
        cfg.apply_json(&value)?;
        Ok(cfg)
    }

    pub fn name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("{}-{}", self.algo.algorithm, self.environment))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output.join(self.name())
    }

    pub fn env_spec(&self) -> EnvSpec {
        let mut spec = EnvSpec::new(self.environment);
        spec.layout = self.layout;
        if let Some(h) = self.horizon {
            spec.horizon = h;
        }
        spec
    }

    /// Algorithm settings with the horizon resolved against the environment.
    pub fn algo_config(&self) -> AlgoConfig {
        let mut a = self.algo.clone();
        a.cmdp.horizon = self.env_spec().horizon;
        a
    }

    pub fn with_algorithm(&self, algorithm: Algorithm) -> Self {
        let mut c = self.clone();
        c.algo.algorithm = algorithm;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            bail!("seeds must be distinct");
        }
        if self.name().is_empty() || self.name().contains(['/', '\\']) {
            bail!("run name must be a non-empty single path component");
        }
        self.env_spec().validate()?;
        self.algo_config().validate()?;
        Ok(())
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn to_json(&self) -> Map<String, Value> {
        let a = self.algo_config();
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        put("name", Value::from(self.name()));
        put("algorithm", Value::from(a.algorithm.to_string()));
        put("environment", Value::from(self.environment.to_string()));
        put("layout", Value::from(self.layout.to_string()));
        put("cost_limit", Value::from(a.cmdp.cost_limit));
        put("seeds", Value::from(self.seeds.clone()));
        put("epochs", Value::from(a.epochs));
        put("steps_per_epoch", Value::from(a.steps_per_epoch));
        put("output", Value::from(self.output.to_string_lossy().into_owned()));
        put("checkpoint_every", Value::from(self.checkpoint_every));
        put("log_trajectories", Value::from(self.log_trajectories));
        put("cmdp.gamma", Value::from(a.cmdp.gamma));
        put("cmdp.horizon", Value::from(a.cmdp.horizon));
        put("trainer.gae_lambda", Value::from(a.gae_lambda));
        put("trust.delta", Value::from(a.trust.delta));
        put("trust.cg_iters", Value::from(a.trust.cg_iters));
        put("trust.cg_tol", Value::from(a.trust.cg_tol));
        put("trust.damping", Value::from(a.trust.damping));
        put("trust.backtrack_ratio", Value::from(a.trust.backtrack_ratio));
        put("trust.max_backtracks", Value::from(a.trust.max_backtracks));
        put("adaptation.lambda", Value::from(a.adaptation.lambda));
        put("adaptation.k", Value::from(a.adaptation.k));
        put("adaptation.eta", Value::from(a.adaptation.eta));
        put("policy.hidden", Value::from(a.hidden.clone()));
        put("policy.log_std_init", Value::from(a.log_std_init));
        put("critic.epochs", Value::from(a.critic.epochs));
        put("critic.lr", Value::from(a.critic.lr));
        put("critic.minibatch", Value::from(a.critic.minibatch));
        put("critic.holdout_fraction", Value::from(a.holdout_fraction));
        put("lagrangian.init", Value::from(a.lagrangian_init));
        put("lagrangian.lr", Value::from(a.lagrangian_lr));
        m
    }
}
