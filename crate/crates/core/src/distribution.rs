use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::math::softmax;
use crate::tensor::Tensor;

/// Row tolerance used when validating probability rows.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Per-sample class probabilities `y` (N × K) and their batch mean `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    probs: Tensor,
    batch_mean: Vec<f64>,
}

impl ClassDistribution {
    /// Validates rows (entries in `[0, 1]`, sums within tolerance of 1).
    pub fn from_probs(probs: Tensor) -> Result<Self> {
        let &[n, k] = probs.shape() else {
            bail!(InvalidArgument, "class distribution must be N×K, got {:?}", probs.shape());
        };
        if n == 0 || k == 0 {
            bail!(InvalidArgument, "class distribution must be non-empty");
        }
        for (i, row) in probs.data().chunks_exact(k).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                bail!(InvalidArgument, "row {i} has entries outside [0, 1]");
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                bail!(InvalidArgument, "row {i} sums to {s}");
            }
        }
        let mut batch_mean = vec![0.0; k];
        for row in probs.data().chunks_exact(k) {
            for (m, p) in batch_mean.iter_mut().zip(row) {
                *m += p;
            }
        }
        batch_mean.iter_mut().for_each(|m| *m /= n as f64);
        Ok(Self { probs, batch_mean })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let k = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != k) {
            bail!(InvalidArgument, "rows have different lengths");
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_probs(Tensor::from_vec(&[rows.len(), k], data)?)
    }

    /// Softmax adapter over classifier logits.
    pub fn from_logits(logits: &Tensor) -> Result<Self> {
        let &[_, k] = logits.shape() else {
            bail!(InvalidArgument, "logits must be N×K, got {:?}", logits.shape());
        };
        let data = logits.data().chunks_exact(k).flat_map(|row| softmax(row, 1.0)).collect();
        Self::from_probs(Tensor::from_vec(logits.shape(), data)?)
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn batch_mean(&self) -> &[f64] {
        &self.batch_mean
    }

    pub fn rows(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.probs.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.probs.item(i)
    }

    /// Maximum probability per sample.
    pub fn confidences(&self) -> Vec<f64> {
        (0..self.rows()).map(|i| self.row(i).iter().copied().fold(0.0, f64::max)).collect()
    }

    pub fn predictions(&self) -> Vec<usize> {
        (0..self.rows()).map(|i| crate::math::argmax(self.row(i))).collect()
    }
}
