use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "phase,index,split,loss,accuracy,seconds";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Epoch,
    Batch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Epoch => "epoch",
            Phase::Batch => "batch",
        })
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epoch" => Ok(Phase::Epoch),
            "batch" => Ok(Phase::Batch),
            _ => Err(Error::Data(format!("unknown phase `{s}`"))),
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub phase: Phase,
    /// Epoch number, or optimizer step for batch rows.
    pub index: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.phase, self.index, self.split, self.loss, self.accuracy, self.seconds
        )
    }

    /// The record with its wall-clock field cleared; everything left is
    /// determined by seed, config and data.
    pub fn without_time(&self) -> Self {
        Self { seconds: 0.0, ..*self }
    }
}

pub fn render_metrics(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Data("metrics file does not start with the expected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Data(format!("metrics row {}: `{line}`", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            Ok(MetricsRecord {
                phase: f[0].parse()?,
                index: f[1].parse().map_err(|_| bad())?,
                split: f[2].parse()?,
                loss: f[3].parse().map_err(|_| bad())?,
                accuracy: f[4].parse().map_err(|_| bad())?,
                seconds: f[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    fs::write(path, render_metrics(records)).map_err(|e| Error::io(path, e))
}

/// Adds rows to an existing metrics file, creating it with a header if absent.
pub fn append_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut text = match fs::read_to_string(path) {
        Ok(t) => {
            parse_metrics(&t)?;
            t
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => render_metrics(&[]),
        Err(e) => return Err(Error::io(path, e)),
    };
    for r in records {
        text.push_str(&r.to_csv_row());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
