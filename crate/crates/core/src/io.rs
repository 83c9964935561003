//! JSON Lines readers and writers for the telemetry files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::model::{LogRecord, MetricSample, SpanRecord};

pub const SPANS_FILE: &str = "spans.jsonl";
pub const LOGS_FILE: &str = "logs.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Encode {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl IoError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_owned(),
            source,
        }
    }

    pub fn is_not_found(&self) -> bool {
        matches!(self, IoError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| IoError::Parse {
            path: path.to_owned(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    rows: impl IntoIterator<Item = &'a T>,
) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|source| IoError::Encode {
            path: path.to_owned(),
            source,
        })?;
        w.write_all(b"\n").map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| IoError::Encode {
        path: path.to_owned(),
        source,
    })?;
    w.write_all(b"\n").map_err(|e| IoError::io(path, e))?;
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| IoError::Parse {
        path: path.to_owned(),
        line: 0,
        source,
    })
}

/// The three raw telemetry streams of one phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Telemetry {
    pub spans: Vec<SpanRecord>,
    pub logs: Vec<LogRecord>,
    pub metrics: Vec<MetricSample>,
}

impl Telemetry {
    /// Reads `spans.jsonl`, `logs.jsonl` and `metrics.jsonl` from `dir`.
    /// Missing log or metric files read as empty streams; a missing span file
    /// is an error.
    pub fn load_dir(dir: &Path) -> Result<Telemetry, IoError> {
        let optional = |name: &str| -> Result<bool, IoError> { Ok(dir.join(name).exists()) };
        let spans = read_jsonl(&dir.join(SPANS_FILE))?;
        let logs = if optional(LOGS_FILE)? {
            read_jsonl(&dir.join(LOGS_FILE))?
        } else {
            Vec::new()
        };
        let metrics = if optional(METRICS_FILE)? {
            read_jsonl(&dir.join(METRICS_FILE))?
        } else {
            Vec::new()
        };
        Ok(Telemetry { spans, logs, metrics })
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), IoError> {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
        write_jsonl(&dir.join(SPANS_FILE), &self.spans)?;
        write_jsonl(&dir.join(LOGS_FILE), &self.logs)?;
        write_jsonl(&dir.join(METRICS_FILE), &self.metrics)
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty() && self.logs.is_empty() && self.metrics.is_empty()
    }

    /// Earliest and latest timestamp across all streams.
    pub fn time_range(&self) -> Option<(u64, u64)> {
        let ts = self
            .spans
            .iter()
            .map(|s| s.start_ns)
            .chain(self.logs.iter().map(|l| l.timestamp_ns))
            .chain(self.metrics.iter().map(|m| m.timestamp_ns));
        ts.fold(None, |acc, t| match acc {
            None => Some((t, t)),
            Some((lo, hi)) => Some((lo.min(t), hi.max(t))),
        })
    }
}
