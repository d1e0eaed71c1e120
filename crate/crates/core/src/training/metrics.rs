use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: &str =
    "step,loss,masked_accuracy,masked_positions,codes_used_fraction,code_entropy,learning_rate";

/// Column order of `timing.csv`, kept apart so `metrics.csv` stays
/// byte-identical across repeated runs.
pub const TIMING_HEADER: &str = "step,wall_time_s";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: f64,
    /// Absent when the batch had no masked positions.
    pub masked_accuracy: Option<f64>,
    pub masked_positions: usize,
    /// Fraction of the codebook hit by the batch targets.
    pub codes_used_fraction: f64,
    pub code_entropy: f64,
    pub learning_rate: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let acc = self.masked_accuracy.map(|a| a.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.loss,
            acc,
            self.masked_positions,
            self.codes_used_fraction,
            self.code_entropy,
            self.learning_rate
        )
    }
}

/// Append-only CSV sink flushed every `flush_every` rows.
pub struct CsvLog {
    path: PathBuf,
    out: BufWriter<File>,
    pending: usize,
    flush_every: usize,
}

impl CsvLog {
    pub fn create(path: impl AsRef<Path>, header: &str, flush_every: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut log = Self {
            path,
            out: BufWriter::new(file),
            pending: 0,
            flush_every: flush_every.max(1),
        };
        log.line(header)?;
        log.flush()?;
        Ok(log)
    }

    pub fn line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.pending += 1;
        if self.pending >= self.flush_every {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.pending = 0;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
