//! Per-iteration training metrics and their CSV serialization.
//!
//! The CSV schema is fixed: one row per iteration under the header
//! `iteration,best_path_reward,rank,efficiency,mean_loss,epsilon,gen_ms,train_ms`.
//! Identical `(config, seed)` runs must produce byte-identical files, so the
//! wall-clock columns are written as 0 unless timing output is explicitly
//! enabled in the config (timings are always available in memory and on
//! stdout).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

pub const CSV_HEADER: &str =
    "iteration,best_path_reward,rank,efficiency,mean_loss,epsilon,gen_ms,train_ms";

/// One training iteration's diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `C + max Q` at the rank node of the generated tree.
    pub best_path_reward: f64,
    /// Depth of the node maximizing `C + max Q`.
    pub rank: usize,
    /// `rank / max_nodes`.
    pub efficiency: f64,
    /// Mean pre-step loss over this iteration's SGD batches.
    pub mean_loss: f64,
    pub epsilon: f64,
    /// Wall-clock of the generation and training phases.
    pub gen_ms: u64,
    pub train_ms: u64,
}

impl IterationRecord {
    fn csv_row(&self, with_timing: bool) -> String {
        let (gen_ms, train_ms) = if with_timing {
            (self.gen_ms, self.train_ms)
        } else {
            (0, 0)
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration,
            self.best_path_reward,
            self.rank,
            self.efficiency,
            self.mean_loss,
            self.epsilon,
            gen_ms,
            train_ms
        )
    }
}

/// Full run history.
#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub records: Vec<IterationRecord>,
}

impl RunMetrics {
    /// Mean `best_path_reward` over the trailing `window` records.
    pub fn smoothed_final_reward(&self, window: usize) -> f64 {
        let n = self.records.len().min(window).max(1);
        let tail = &self.records[self.records.len() - n..];
        tail.iter().map(|r| r.best_path_reward).sum::<f64>() / n as f64
    }

    pub fn write_csv(&self, path: &Path, with_timing: bool) -> io::Result<()> {
        let mut writer = MetricsWriter::create(path, with_timing)?;
        for record in &self.records {
            writer.append(record)?;
        }
        writer.flush()
    }
}

/// Streaming CSV writer: header at creation, one flushed row per iteration
/// so partial runs leave a usable file behind.
pub struct MetricsWriter {
    out: BufWriter<File>,
    with_timing: bool,
}

impl MetricsWriter {
    pub fn create(path: &Path, with_timing: bool) -> io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{CSV_HEADER}")?;
        Ok(MetricsWriter { out, with_timing })
    }

    pub fn append(&mut self, record: &IterationRecord) -> io::Result<()> {
        writeln!(self.out, "{}", record.csv_row(self.with_timing))
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}
