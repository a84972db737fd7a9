//! Line-delimited JSON metrics, one file per stage.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_error, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    /// Logical clock of the run: records are numbered in emission order so
    /// that identical runs produce identical files.
    pub timestamp: u64,
    pub stage: String,
    /// Iteration or round within the stage.
    pub step: u64,
    pub seed: u64,
    pub values: BTreeMap<String, f64>,
}

impl MetricsRecord {
    pub fn new(stage: &str, step: u64, seed: u64) -> Self {
        Self {
            timestamp: 0,
            stage: stage.to_string(),
            step,
            seed,
            values: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.values.insert(name.to_string(), value);
        self
    }
}

/// Single-writer append sink.
pub struct MetricsSink {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl MetricsSink {
    /// Creates (truncating) the file at `path`.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_error(dir))?;
        }
        let file = File::create(path).map_err(io_error(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends exactly one line.
    pub fn emit(&mut self, record: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("metrics records always serialize");
        writeln!(self.writer, "{line}").map_err(io_error(&self.path))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(io_error(&self.path))
    }
}

/// Per-stage sinks under one directory (`<dir>/<stage>.jsonl`), sharing one
/// logical clock.
pub struct MetricsDir {
    dir: PathBuf,
    sinks: BTreeMap<String, MetricsSink>,
    clock: u64,
}

impl MetricsDir {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            sinks: BTreeMap::new(),
            clock: 0,
        }
    }

    pub fn path_for(&self, stage: &str) -> PathBuf {
        self.dir.join(format!("{stage}.jsonl"))
    }

    /// Stamps `record` with the next tick and appends it to its stage's file.
    pub fn emit(&mut self, mut record: MetricsRecord) -> Result<()> {
        record.timestamp = self.clock;
        self.clock += 1;
        if !self.sinks.contains_key(&record.stage) {
            let sink = MetricsSink::create(&self.path_for(&record.stage))?;
            self.sinks.insert(record.stage.clone(), sink);
        }
        self.sinks.get_mut(&record.stage).expect("inserted above").emit(&record)
    }

    /// Flushes one stage's sink; call at stage boundaries.
    pub fn finish_stage(&mut self, stage: &str) -> Result<()> {
        match self.sinks.get_mut(stage) {
            Some(sink) => sink.flush(),
            None => Ok(()),
        }
    }

    pub fn flush_all(&mut self) -> Result<()> {
        self.sinks.values_mut().try_for_each(MetricsSink::flush)
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(io_error(path))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(io_error(path))?;
            serde_json::from_str(&line).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_emissions_two_lines_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let a = MetricsRecord::new("stage1", 0, 3).with("kl", 0.125).with("turn1_reward", 0.5);
        let b = MetricsRecord::new("stage1", 1, 3).with("kl", 1e-17);
        let mut sink = MetricsSink::create(&path).unwrap();
        sink.emit(&a).unwrap();
        sink.emit(&b).unwrap();
        sink.flush().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_metrics(&path).unwrap(), vec![a, b]);
    }

    #[test]
    fn stages_land_in_distinct_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = MetricsDir::new(dir.path());
        m.emit(MetricsRecord::new("stage1", 0, 1)).unwrap();
        m.emit(MetricsRecord::new("stage2", 0, 1)).unwrap();
        m.emit(MetricsRecord::new("stage1", 1, 1)).unwrap();
        m.flush_all().unwrap();
        let s1 = read_metrics(&m.path_for("stage1")).unwrap();
        let s2 = read_metrics(&m.path_for("stage2")).unwrap();
        assert_eq!(s1.len(), 2);
        assert_eq!(s2.len(), 1);
        assert!(s1.iter().all(|r| r.stage == "stage1"));
        assert_eq!(s1.iter().map(|r| r.timestamp).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(s2[0].timestamp, 1);
    }
}
