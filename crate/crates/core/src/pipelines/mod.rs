//! Teacher training, DeGAN / vanilla GAN training, distillation and the
//! class-incremental update.

mod distill;
mod gan;
mod incremental;
mod teacher;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use distill::{distill, KdSource};
pub use gan::{
    discriminator_backward, discriminator_objective, generate_batch, generator_backward, generator_objective,
    train_degan, train_gan, train_vanilla_gan, GanArchs, GanState, Generated,
};
pub use incremental::{incremental_update, IncrementalMode};
pub use teacher::train_teacher;

use crate::arch::RangeAdapter;
use crate::config::ExperimentConfig;
use crate::datasets::DatasetSpec;
use crate::error::{bail, Result};
use crate::math::argmax;
use crate::model::ModelHandle;
use crate::rng::SeedTrace;
use crate::tensor::Tensor;

/// Batch size used when a model is only evaluated.
const EVAL_CHUNK: usize = 256;

/// One metrics row; every row of a run has the same columns in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub values: Vec<(String, f64)>,
}

impl MetricsRow {
    pub fn new(epoch: usize) -> Self {
        Self { epoch, values: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.values.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

/// Everything a pipeline run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub pipeline: String,
    pub config: ExperimentConfig,
    pub rows: Vec<MetricsRow>,
    /// Final scalar results, e.g. `test_acc`.
    pub summary: Vec<(String, f64)>,
    /// Checkpoint locations filled in by whoever persists the models.
    pub checkpoints: Vec<String>,
    pub wall_clock_secs: Option<f64>,
    /// Starting position of every random stream the run drew from.
    pub seed_traces: Vec<(String, SeedTrace)>,
    /// Free-form labels, e.g. the distillation source.
    pub tags: Vec<(String, String)>,
}

impl RunRecord {
    pub fn new(pipeline: &str, config: &ExperimentConfig) -> Self {
        Self {
            pipeline: pipeline.into(),
            config: config.clone(),
            rows: Vec::new(),
            summary: Vec::new(),
            checkpoints: Vec::new(),
            wall_clock_secs: None,
            seed_traces: Vec::new(),
            tags: Vec::new(),
        }
    }

    /// Appends a row; epochs must increase and columns must match earlier rows.
    pub fn push_row(&mut self, row: MetricsRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                bail!(Invariant, "metrics row for epoch {} after epoch {}", row.epoch, last.epoch);
            }
            if !row.values.iter().map(|(n, _)| n).eq(last.values.iter().map(|(n, _)| n)) {
                bail!(Invariant, "metrics columns changed at epoch {}", row.epoch);
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn columns(&self) -> Vec<&str> {
        self.rows.first().map(|r| r.values.iter().map(|(n, _)| n.as_str()).collect()).unwrap_or_default()
    }

    pub fn set_summary(&mut self, name: impl Into<String>, value: f64) {
        let name = name.into();
        match self.summary.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.summary.push((name, value)),
        }
    }

    pub fn summary_value(&self, name: &str) -> Option<f64> {
        self.summary.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn set_tag(&mut self, name: impl Into<String>, value: impl Into<String>) {
        let name = name.into();
        let value = value.into();
        match self.tags.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.tags.push((name, value)),
        }
    }

    pub fn tag(&self, name: &str) -> Option<&str> {
        self.tags.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }

    pub(crate) fn trace(&mut self, name: &str, trace: SeedTrace) {
        self.seed_traces.push((name.into(), trace));
    }
}

/// Accuracy of a classifier on a labeled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Accuracy per class; `NaN` for classes absent from the data.
    pub per_class: Vec<f64>,
}

impl Evaluation {
    /// Mean of the per-class accuracies over `classes`, skipping absent ones.
    pub fn mean_over(&self, classes: core::ops::Range<usize>) -> f64 {
        let vals: Vec<f64> = self.per_class[classes].iter().copied().filter(|v| !v.is_nan()).collect();
        if vals.is_empty() {
            return f64::NAN;
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Maps a `[-1, 1]` batch into a model's expected input range.
pub fn to_model_input(model: &ModelHandle, x: &Tensor) -> Tensor {
    let adapter = RangeAdapter::new(model.input_stats());
    if adapter.is_identity() {
        x.clone()
    } else {
        adapter.apply(x)
    }
}

/// Evaluation-mode logits for a `[-1, 1]` batch, computed in chunks.
pub fn predict_logits(model: &ModelHandle, x: &Tensor) -> Result<Tensor> {
    let n = x.batch();
    let mut parts = Vec::new();
    for start in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..n.min(start + EVAL_CHUNK)).collect();
        parts.push(model.infer(&to_model_input(model, &x.select(&idx)))?);
    }
    Tensor::concat(&parts.iter().collect::<Vec<_>>())
}

/// Accuracy of `model` on a labeled dataset whose labels index its outputs.
pub fn evaluate(model: &ModelHandle, data: &DatasetSpec) -> Result<Evaluation> {
    let Some(labels) = data.labels() else {
        bail!(InvalidArgument, "cannot evaluate on unlabeled dataset '{}'", data.name());
    };
    if data.is_empty() {
        bail!(InvalidArgument, "cannot evaluate on empty dataset '{}'", data.name());
    }
    let k = model.arch().num_classes;
    let (mut hits, mut totals) = (vec![0usize; k.max(data.num_classes())], vec![0usize; k.max(data.num_classes())]);
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..data.len().min(start + EVAL_CHUNK)).collect();
        let logits = model.infer(&to_model_input(model, &data.batch(&idx)))?;
        for (row, &i) in idx.iter().enumerate() {
            let label = labels[i];
            totals[label] += 1;
            if argmax(logits.item(row)) == label {
                hits[label] += 1;
            }
        }
    }
    let accuracy = hits.iter().sum::<usize>() as f64 / data.len() as f64;
    let per_class =
        hits.iter().zip(&totals).map(|(&h, &t)| if t == 0 { f64::NAN } else { h as f64 / t as f64 }).collect();
    Ok(Evaluation { accuracy, per_class })
}

pub(crate) fn ensure_frozen(model: &ModelHandle, role: &str) -> Result<()> {
    if !model.is_frozen() {
        bail!(Contract, "{role} must be frozen");
    }
    Ok(())
}

/// Minibatches over `order`; a trailing partial batch is kept only when it is the sole batch.
pub(crate) fn minibatches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    let full = order.len() / size;
    let take = if full == 0 { 1 } else { full };
    let size = if full == 0 { order.len() } else { size };
    order.chunks(size.max(1)).take(take)
}
