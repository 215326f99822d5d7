//! Central finite differences for gradient checks, plus model-level checks
//! of every training objective.

use alloc::vec::Vec;

use crate::config::ExperimentConfig;
use crate::error::{non_finite, Result};
use crate::losses::{incremental_loss_scoped_grad, kd_loss, kd_loss_grad, KdScope};
use crate::model::ModelHandle;
use crate::nn::Pass;
use crate::pipelines::{
    discriminator_backward, discriminator_objective, generator_backward, generator_objective, to_model_input,
};
use crate::tensor::Tensor;

/// Central-difference gradient of `f` at `params` with step `h`.
pub fn finite_difference_grad<F>(mut f: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p)?;
        p[i] = orig - h;
        let down = f(&p)?;
        p[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(non_finite("finite difference objective"));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Largest relative error `|a - b| / max(|a|, |b|, floor)` over two gradients.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}

/// Back-propagated and finite-difference gradients of one objective w.r.t. a
/// model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradReport {
    pub fn max_relative_error(&self, floor: f64) -> f64 {
        max_relative_error(&self.analytic, &self.numeric, floor)
    }

    /// `‖a − n‖ / max(‖a‖, ‖n‖)`.
    pub fn relative_norm_error(&self) -> f64 {
        let norm = |v: &[f64]| libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        let diff: Vec<f64> = self.analytic.iter().zip(&self.numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&self.analytic).max(norm(&self.numeric));
        if scale == 0.0 {
            0.0
        } else {
            norm(&diff) / scale
        }
    }
}

fn numeric_grad(model: &ModelHandle, h: f64, mut f: impl FnMut(&ModelHandle) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = model.thawed_copy();
    finite_difference_grad(
        |p| {
            probe.set_flat_params(p)?;
            f(&probe)
        },
        &model.flat_params(),
        h,
    )
}

/// Discriminator parameters against `-L_D` on one real and one fake batch.
pub fn check_discriminator(d: &ModelHandle, real: &Tensor, fake: &Tensor, eps: f64, h: f64) -> Result<GradReport> {
    let mut m = d.thawed_copy();
    m.zero_grad();
    discriminator_backward(&mut m, real, fake, eps)?;
    let numeric = numeric_grad(d, h, |p| discriminator_objective(p, real, fake, eps))?;
    Ok(GradReport { analytic: m.flat_grads(), numeric })
}

/// Generator parameters against the configured generator objective.
pub fn check_generator(
    g: &ModelHandle,
    z: &Tensor,
    d: &ModelHandle,
    classifier: Option<&ModelHandle>,
    cfg: &ExperimentConfig,
    h: f64,
) -> Result<GradReport> {
    let mut gm = g.thawed_copy();
    let mut dm = d.thawed_copy();
    let mut cm = classifier.cloned();
    gm.zero_grad();
    let fake = gm.forward(z, Pass::Train)?;
    generator_backward(&mut gm, &fake, &mut dm, cm.as_mut(), cfg)?;
    let numeric = numeric_grad(g, h, |p| generator_objective(p, z, d, classifier, cfg))?;
    Ok(GradReport { analytic: gm.flat_grads(), numeric })
}

/// Student parameters against the distillation loss on a `[-1, 1]` batch.
pub fn check_kd(
    student: &ModelHandle,
    x: &Tensor,
    teacher_logits: &Tensor,
    temperature: f64,
    h: f64,
) -> Result<GradReport> {
    let x = to_model_input(student, x);
    let mut m = student.thawed_copy();
    m.zero_grad();
    let logits = m.forward(&x, Pass::Train)?;
    let (_, g) = kd_loss_grad(&logits, teacher_logits, temperature)?;
    m.backward(&g)?;
    let numeric =
        numeric_grad(student, h, |p| Ok(kd_loss(&p.infer_batch_stats(&x)?, teacher_logits, temperature)?.value))?;
    Ok(GradReport { analytic: m.flat_grads(), numeric })
}

fn split_incremental(logits: &Tensor, n: usize, k_rep: usize) -> Result<(Tensor, Tensor)> {
    let rows = logits.batch();
    let new = logits.select(&(0..n).collect::<Vec<_>>());
    let rep: Vec<f64> = (n..rows).flat_map(|r| logits.item(r)[..k_rep].iter().copied()).collect();
    Ok((new, Tensor::from_vec(&[rows - n, k_rep], rep)?))
}

/// Expanded-model parameters against the incremental loss, with new-class
/// images `x_new` and representative images `x_rep` in one forward pass.
#[allow(clippy::too_many_arguments)]
pub fn check_incremental(
    model: &ModelHandle,
    x_new: &Tensor,
    labels: &[usize],
    x_rep: &Tensor,
    old_logits: &Tensor,
    temperature: f64,
    reg_weight: f64,
    scope: KdScope,
    h: f64,
) -> Result<GradReport> {
    let n = x_new.batch();
    let k_old = old_logits.item_len();
    let x = to_model_input(model, &Tensor::concat(&[x_new, x_rep])?);
    let mut m = model.thawed_copy();
    m.zero_grad();
    let logits = m.forward(&x, Pass::Train)?;
    let k = logits.item_len();
    let k_rep = match scope {
        KdScope::OldSlice => k_old,
        KdScope::AllClasses => k,
    };
    let (new, rep) = split_incremental(&logits, n, k_rep)?;
    let (_, g) = incremental_loss_scoped_grad(&new, labels, old_logits, &rep, temperature, reg_weight, scope)?;
    let mut full = Vec::with_capacity(logits.len());
    full.extend_from_slice(g.new_logits.data());
    for row in g.student_rep_logits.data().chunks_exact(k_rep) {
        full.extend_from_slice(row);
        full.extend(core::iter::repeat_n(0.0, k - k_rep));
    }
    m.backward(&Tensor::from_vec(logits.shape(), full)?)?;
    let numeric = numeric_grad(model, h, |p| {
        let (new, rep) = split_incremental(&p.infer_batch_stats(&x)?, n, k_rep)?;
        Ok(incremental_loss_scoped_grad(&new, labels, old_logits, &rep, temperature, reg_weight, scope)?.0.value)
    })?;
    Ok(GradReport { analytic: m.flat_grads(), numeric })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_and_constant() {
        let g = finite_difference_grad(|p| Ok(p[0] * p[0]), &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = finite_difference_grad(|_| Ok(4.2), &[1.0, -2.0], 1e-5).unwrap();
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn non_finite_is_error() {
        assert!(finite_difference_grad(|p| Ok(1.0 / p[0]), &[0.0], 0.0).is_err());
    }
}
