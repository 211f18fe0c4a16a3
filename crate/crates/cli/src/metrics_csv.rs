//! Metrics CSV files: a `#` comment line describing the columns, a header
//! row and one row per epoch.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use esbcpo::trainer::EpochMetrics;

pub const SEED_COMMENT: &str = "# one row per epoch; avg_return and avg_cost are undiscounted \
per-episode sums, disc_cost is the discounted cost estimate compared with cost_limit, \
booleans are 0/1";

pub const MERGED_COMMENT: &str = "# one row per epoch; <column>_mean and <column>_std are the \
mean and sample standard deviation over seeds (std is 0 for a single seed)";

/// Appends rows as epochs finish so an interrupted run keeps its history.
pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{SEED_COMMENT}")?;
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(EpochMetrics::COLUMNS)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn push(&mut self, m: &EpochMetrics) -> Result<()> {
        self.inner.write_record(m.row())?;
        self.inner.flush()?;
        Ok(())
    }
}

/// A numeric table read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("missing column `{name}`"))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| anyhow!("non-numeric field `{f}` in {}", path.display())))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Epoch-aligned mean and standard deviation over seeds. Only epochs that
/// every seed reached are merged.
pub fn merge(per_seed: &[Vec<EpochMetrics>]) -> Table {
    let mut header = vec!["epoch".to_string(), "seeds".to_string()];
    for c in &EpochMetrics::COLUMNS[1..] {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_std"));
    }
    let epochs = per_seed.iter().map(Vec::len).min().unwrap_or(0);
    let rows = (0..epochs)
        .map(|e| {
            let values: Vec<Vec<f64>> = per_seed.iter().map(|s| s[e].values()).collect();
            let mut row = vec![e as f64, per_seed.len() as f64];
            for col in 1..EpochMetrics::COLUMNS.len() {
                let xs: Vec<f64> = values.iter().map(|v| v[col]).collect();
                let (m, s) = mean_std(&xs);
                row.push(m);
                row.push(s);
            }
            row
        })
        .collect();
    Table { header, rows }
}

pub fn write_table(path: &Path, comment: &str, table: &Table) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{comment}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}
