//! Final-window comparison of completed runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::Value;

use crate::metrics_csv::read_table;
use crate::run::{MANIFEST, MERGED};

/// Number of trailing epochs averaged for the final figures.
pub const FINAL_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub run: String,
    pub algorithm: String,
    pub environment: String,
    pub cost_limit: f64,
    /// Epochs in the averaging window.
    pub window: usize,
    pub final_return: f64,
    /// Discounted cost estimate, the quantity held against the limit.
    pub final_cost: f64,
    pub final_episode_cost: f64,
    pub over_limit: bool,
}

fn tail_mean(xs: &[f64], window: usize) -> f64 {
    let tail = &xs[xs.len() - window..];
    tail.iter().sum::<f64>() / window as f64
}

fn manifest_str(m: &Value, key: &str, dir: &Path) -> Result<String> {
    m["config"][key]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| anyhow!("manifest in {} lacks `{key}`", dir.display()))
}

pub fn summarize(dir: &Path) -> Result<CompareRow> {
    if !dir.is_dir() {
        bail!("run directory {} does not exist", dir.display());
    }
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        bail!("{} holds no run manifest", dir.display());
    }
    let text = std::fs::read_to_string(&manifest_path)?;
    let m: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest_path.display()))?;
    let merged = dir.join(MERGED);
    if !merged.exists() {
        bail!("{} holds no merged metrics; the run did not complete", dir.display());
    }
    let table = read_table(&merged)?;
    if table.rows.is_empty() {
        bail!("{} has no completed epochs", dir.display());
    }
    let window = table.rows.len().min(FINAL_WINDOW);
    let cost_limit = m["config"]["cost_limit"]
        .as_f64()
        .ok_or_else(|| anyhow!("manifest in {} lacks `cost_limit`", dir.display()))?;
    let final_cost = tail_mean(&table.column("disc_cost_mean")?, window);
    Ok(CompareRow {
        run: manifest_str(&m, "name", dir)?,
        algorithm: manifest_str(&m, "algorithm", dir)?,
        environment: format!(
            "{}/{}",
            manifest_str(&m, "environment", dir)?,
            manifest_str(&m, "layout", dir)?
        ),
        cost_limit,
        window,
        final_return: tail_mean(&table.column("avg_return_mean")?, window),
        final_cost,
        final_episode_cost: tail_mean(&table.column("avg_cost_mean")?, window),
        over_limit: final_cost > cost_limit,
    })
}

/// Summarizes each run and writes the table to `out`. All runs must share
/// the environment.
pub fn compare(dirs: &[PathBuf], out: &Path) -> Result<Vec<CompareRow>> {
    if dirs.len() < 2 {
        bail!("compare needs at least two run directories");
    }
    let rows = dirs.iter().map(|d| summarize(d)).collect::<Result<Vec<_>>>()?;
    if let Some(other) = rows.iter().find(|r| r.environment != rows[0].environment) {
        bail!(
            "runs use different environments: {} ({}) vs {} ({})",
            rows[0].run,
            rows[0].environment,
            other.run,
            other.environment
        );
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "# means over the last {FINAL_WINDOW} epochs (or all, if fewer); final_cost is the discounted cost estimate"
    )?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "run",
        "algorithm",
        "environment",
        "cost_limit",
        "window",
        "final_return",
        "final_cost",
        "final_episode_cost",
        "over_limit",
    ])?;
    for r in &rows {
        csv.write_record([
            r.run.clone(),
            r.algorithm.clone(),
            r.environment.clone(),
            format!("{:?}", r.cost_limit),
            r.window.to_string(),
            format!("{:?}", r.final_return),
            format!("{:?}", r.final_cost),
            format!("{:?}", r.final_episode_cost),
            u8::from(r.over_limit).to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_window() {
        assert_eq!(tail_mean(&[1.0, 2.0, 3.0, 5.0], 2), 4.0);
        assert_eq!(tail_mean(&[1.0, 2.0, 3.0], 3), 2.0);
    }
}
