//! Metrics files.
//!
//! `metrics.csv` has a header row (`epoch` then one column per metric) and
//! one row per epoch. `run.toml` holds the rest of a [`RunRecord`].

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use degan_core::pipelines::{MetricsRow, RunRecord};
use degan_core::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::error::{format_error, IoContext, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const RUN_FILE: &str = "run.toml";

/// Shortest round-trip decimal, so equal values always print identically.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v}")
    }
}

/// Appends rows to a metrics file, rejecting column changes and non-increasing epochs.
pub struct MetricsWriter {
    path: PathBuf,
    writer: csv::Writer<File>,
    columns: Vec<String>,
    last_epoch: Option<usize>,
}

impl MetricsWriter {
    pub fn create(path: &Path, columns: &[&str]) -> Result<Self> {
        let file = OpenOptions::new().write(true).create_new(true).open(path).at(path)?;
        let mut writer = csv::Writer::from_writer(file);
        let header: Vec<&str> = std::iter::once("epoch").chain(columns.iter().copied()).collect();
        writer.write_record(&header).map_err(|e| format_error(path, e))?;
        Ok(Self {
            path: path.into(),
            writer,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            last_epoch: None,
        })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        if !row.values.iter().map(|(n, _)| n).eq(self.columns.iter()) {
            return Err(format_error(&self.path, format!("row for epoch {} has different columns", row.epoch)));
        }
        if self.last_epoch.is_some_and(|e| row.epoch <= e) {
            return Err(format_error(&self.path, format!("epoch {} is not after the previous row", row.epoch)));
        }
        let record: Vec<String> =
            std::iter::once(row.epoch.to_string()).chain(row.values.iter().map(|&(_, v)| format_float(v))).collect();
        self.writer.write_record(&record).map_err(|e| format_error(&self.path, e))?;
        self.writer.flush().at(&self.path)?;
        self.last_epoch = Some(row.epoch);
        Ok(())
    }
}

pub fn write_metrics(path: &Path, record: &RunRecord) -> Result<()> {
    let mut w = MetricsWriter::create(path, &record.columns())?;
    for row in &record.rows {
        w.append(row)?;
    }
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format_error(path, e))?;
    let header: Vec<String> = reader.headers().map_err(|e| format_error(path, e))?.iter().map(String::from).collect();
    if header.first().map(String::as_str) != Some("epoch") {
        return Err(format_error(path, "first column must be 'epoch'"));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| format_error(path, e))?;
        let epoch = rec[0].parse().map_err(|_| format_error(path, format!("bad epoch '{}'", &rec[0])))?;
        let mut row = MetricsRow::new(epoch);
        for (name, cell) in header.iter().zip(rec.iter()).skip(1) {
            row.push(name.clone(), cell.parse().map_err(|_| format_error(path, format!("bad value '{cell}'")))?);
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub root: u64,
    pub stream: String,
    pub word_pos: String,
}

/// The non-tabular part of a run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub pipeline: String,
    #[serde(default)]
    pub wall_clock_secs: Option<f64>,
    #[serde(default)]
    pub checkpoints: Vec<String>,
    pub config: BTreeMap<String, String>,
    #[serde(default)]
    pub summary: BTreeMap<String, f64>,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    #[serde(default)]
    pub seed_traces: BTreeMap<String, TraceEntry>,
}

impl RunFile {
    /// `include_clock = false` leaves out the wall-clock time so reruns compare byte for byte.
    pub fn from_record(record: &RunRecord, include_clock: bool) -> Self {
        let config = record
            .config
            .to_kv_string()
            .lines()
            .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
            .collect();
        Self {
            pipeline: record.pipeline.clone(),
            wall_clock_secs: if include_clock { record.wall_clock_secs } else { None },
            checkpoints: record.checkpoints.clone(),
            config,
            summary: record.summary.iter().cloned().collect(),
            tags: record.tags.iter().cloned().collect(),
            seed_traces: record
                .seed_traces
                .iter()
                .map(|(n, t)| {
                    (n.clone(), TraceEntry { root: t.root, stream: t.stream.clone(), word_pos: t.word_pos.to_string() })
                })
                .collect(),
        }
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in &self.config {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn summary_value(&self, name: &str) -> Option<f64> {
        self.summary.get(name).copied()
    }
}

/// Writes `metrics.csv` and `run.toml` into `dir`.
pub fn save_record(dir: &Path, record: &RunRecord) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    write_metrics(&dir.join(METRICS_FILE), record)?;
    let run = RunFile::from_record(record, true);
    let text = toml::to_string(&run).map_err(|e| format_error(dir.join(RUN_FILE), e))?;
    let mut f = File::create(dir.join(RUN_FILE)).at(dir.join(RUN_FILE))?;
    f.write_all(text.as_bytes()).at(dir.join(RUN_FILE))?;
    Ok(())
}

pub fn load_run(dir: &Path) -> Result<RunFile> {
    let path = dir.join(RUN_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    toml::from_str(&text).map_err(|e| format_error(&path, e))
}

/// Fails when any logged value is NaN or infinite, naming the column.
pub fn check_finite(record: &RunRecord) -> Result<()> {
    for row in &record.rows {
        if let Some((name, _)) = row.values.iter().find(|(_, v)| !v.is_finite()) {
            let component = format!("{} '{name}' at epoch {}", record.pipeline, row.epoch);
            return Err(degan_core::Error::NonFinite { component }.into());
        }
    }
    Ok(())
}
