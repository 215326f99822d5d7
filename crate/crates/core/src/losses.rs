//! Objective functions of the three-player game, distillation and the
//! class-incremental update.
//!
//! Every loss returns a [`LossValue`] (scalar plus named components for logging)
//! and, through the `*_grad` variants, the gradient with respect to its inputs.
//! Probabilities are clamped to `[eps, 1]` before any logarithm; all logs are
//! natural.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::distribution::ClassDistribution;
use crate::error::{bail, check_finite, Error, Result};
use crate::math::{entropy, log_softmax, softmax};
use crate::tensor::Tensor;

/// A scalar loss and the sub-losses it is composed from.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub components: BTreeMap<&'static str, f64>,
}

impl LossValue {
    pub(crate) fn new(value: f64, components: &[(&'static str, f64)]) -> Result<Self> {
        for &(name, v) in components {
            check_finite(name, v)?;
        }
        check_finite("loss", value)?;
        Ok(Self { value, components: components.iter().copied().collect() })
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }
}

/// How the generator's adversarial term is optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GeneratorObjective {
    /// Minimize `E[ln(1 - D(G(z)))]` exactly as written in the game.
    Saturating,
    /// Minimize `-E[ln D(G(z))]`, which has the same fixed point but does not
    /// vanish while the discriminator wins.
    #[default]
    NonSaturating,
}

/// Which student distribution the old-class distillation term is matched against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KdScope {
    /// Softmax over the old-class logits alone.
    #[default]
    OldSlice,
    /// Softmax over all classes; the teacher target puts no mass on new classes.
    AllClasses,
}

fn check_probs(name: &str, p: &[f64]) -> Result<()> {
    if p.is_empty() {
        bail!(InvalidArgument, "{name}: empty batch");
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { component: name.into() });
    }
    Ok(())
}

fn clamp(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0)
}

fn d_log_clamped(p: f64, eps: f64) -> f64 {
    if (eps..=1.0).contains(&p) {
        1.0 / p
    } else {
        0.0
    }
}

/// `mean ln D(x)` over real samples, with its gradient.
pub fn adv_real_grad(d_real: &[f64], eps: f64) -> Result<(LossValue, Vec<f64>)> {
    check_probs("adv_real", d_real)?;
    let n = d_real.len() as f64;
    let value = d_real.iter().map(|&p| libm::log(clamp(p, eps))).sum::<f64>() / n;
    let grad = d_real.iter().map(|&p| d_log_clamped(p, eps) / n).collect();
    Ok((LossValue::new(value, &[("adv_real", value)])?, grad))
}

pub fn adv_real(d_real: &[f64], eps: f64) -> Result<LossValue> {
    Ok(adv_real_grad(d_real, eps)?.0)
}

/// `mean ln(1 - D(G(z)))`, with its gradient.
pub fn adv_fake_grad(d_fake: &[f64], eps: f64) -> Result<(LossValue, Vec<f64>)> {
    check_probs("adv_fake", d_fake)?;
    let n = d_fake.len() as f64;
    let value = d_fake.iter().map(|&p| libm::log(clamp(1.0 - p, eps))).sum::<f64>() / n;
    let grad = d_fake.iter().map(|&p| -d_log_clamped(1.0 - p, eps) / n).collect();
    Ok((LossValue::new(value, &[("adv_fake", value)])?, grad))
}

pub fn adv_fake(d_fake: &[f64], eps: f64) -> Result<LossValue> {
    Ok(adv_fake_grad(d_fake, eps)?.0)
}

/// Mean per-sample entropy of the classifier outputs, with gradient w.r.t. the probabilities.
pub fn entropy_loss_grad(y: &ClassDistribution, eps: f64) -> Result<(LossValue, Tensor)> {
    let n = y.rows() as f64;
    let value = (0..y.rows()).map(|i| entropy(y.row(i), eps)).sum::<f64>() / n;
    let grad = y.probs().map(|p| -(libm::log(clamp(p, eps)) + if p >= eps { 1.0 } else { 0.0 }) / n);
    Ok((LossValue::new(value, &[("entropy", value)])?, grad))
}

pub fn entropy_loss(y: &ClassDistribution, eps: f64) -> Result<LossValue> {
    Ok(entropy_loss_grad(y, eps)?.0)
}

/// Entropy of the batch-mean class distribution, with gradient w.r.t. the probabilities.
pub fn diversity_loss_grad(y: &ClassDistribution, eps: f64) -> Result<(LossValue, Tensor)> {
    let w = y.batch_mean();
    let n = y.rows() as f64;
    let value = entropy(w, eps);
    let dw: Vec<f64> = w.iter().map(|&p| -(libm::log(clamp(p, eps)) + if p >= eps { 1.0 } else { 0.0 }) / n).collect();
    let k = y.classes();
    let mut grad = Tensor::zeros(y.probs().shape());
    for row in grad.data_mut().chunks_exact_mut(k) {
        row.copy_from_slice(&dw);
    }
    Ok((LossValue::new(value, &[("diversity", value)])?, grad))
}

pub fn diversity_loss(y: &ClassDistribution, eps: f64) -> Result<LossValue> {
    Ok(diversity_loss_grad(y, eps)?.0)
}

/// `L_D = mean ln D(x) + mean ln(1 - D(G(z)))`; the discriminator maximizes it.
/// Returns gradients of `L_D` w.r.t. the real and fake discriminator outputs.
pub fn discriminator_loss_grad(d_real: &[f64], d_fake: &[f64], eps: f64) -> Result<(LossValue, Vec<f64>, Vec<f64>)> {
    let (real, g_real) = adv_real_grad(d_real, eps)?;
    let (fake, g_fake) = adv_fake_grad(d_fake, eps)?;
    let loss = LossValue::new(real.value + fake.value, &[("adv_real", real.value), ("adv_fake", fake.value)])?;
    Ok((loss, g_real, g_fake))
}

pub fn discriminator_loss(d_real: &[f64], d_fake: &[f64], eps: f64) -> Result<LossValue> {
    Ok(discriminator_loss_grad(d_real, d_fake, eps)?.0)
}

/// Gradients of the generator loss w.r.t. its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorGrads {
    pub d_fake: Vec<f64>,
    /// W.r.t. the class probabilities; `None` when both classifier weights are zero.
    pub probs: Option<Tensor>,
}

/// `L_G = L_Adv,fake + λ_e·L_entropy − λ_d·L_diversity`, minimized by the generator.
///
/// The value is always the literal expression. The gradient is that of the
/// optimized objective: the literal one under [`GeneratorObjective::Saturating`],
/// or with `L_Adv,fake` replaced by `−mean ln D(G(z))` under
/// [`GeneratorObjective::NonSaturating`]. Components: `adv_fake`, `entropy`,
/// `diversity` and `objective` (the optimized value).
pub fn generator_loss_grad(
    d_fake: &[f64],
    y: &ClassDistribution,
    lambda_e: f64,
    lambda_d: f64,
    objective: GeneratorObjective,
    eps: f64,
) -> Result<(LossValue, GeneratorGrads)> {
    if !(lambda_e >= 0.0 && lambda_d >= 0.0) {
        bail!(InvalidArgument, "loss weights must be non-negative (λ_e = {lambda_e}, λ_d = {lambda_d})");
    }
    if y.rows() != d_fake.len() {
        bail!(InvalidArgument, "{} discriminator outputs for {} classifier rows", d_fake.len(), y.rows());
    }
    let (fake, g_fake) = adv_fake_grad(d_fake, eps)?;
    let (adv_term, g_adv) = match objective {
        GeneratorObjective::Saturating => (fake.value, g_fake),
        GeneratorObjective::NonSaturating => {
            let (real_like, g) = adv_real_grad(d_fake, eps)?;
            (-real_like.value, g.into_iter().map(|v| -v).collect())
        }
    };
    let (ent, g_ent) = entropy_loss_grad(y, eps)?;
    let (div, g_div) = diversity_loss_grad(y, eps)?;
    let classifier_terms = lambda_e * ent.value - lambda_d * div.value;
    let probs = (lambda_e != 0.0 || lambda_d != 0.0).then(|| {
        let mut g = g_ent.map(|v| lambda_e * v);
        for (a, b) in g.data_mut().iter_mut().zip(g_div.data()) {
            *a -= lambda_d * b;
        }
        g
    });
    let loss = LossValue::new(
        fake.value + classifier_terms,
        &[
            ("adv_fake", fake.value),
            ("entropy", ent.value),
            ("diversity", div.value),
            ("objective", adv_term + classifier_terms),
        ],
    )?;
    Ok((loss, GeneratorGrads { d_fake: g_adv, probs }))
}

pub fn generator_loss(
    d_fake: &[f64],
    y: &ClassDistribution,
    lambda_e: f64,
    lambda_d: f64,
    eps: f64,
) -> Result<LossValue> {
    Ok(generator_loss_grad(d_fake, y, lambda_e, lambda_d, GeneratorObjective::Saturating, eps)?.0)
}

/// Back-propagates a gradient w.r.t. softmax probabilities to the logits.
pub fn softmax_backward(probs: &Tensor, grad_probs: &Tensor) -> Tensor {
    let k = probs.shape()[1];
    let mut out = Tensor::zeros(probs.shape());
    for ((o, p), g) in
        out.data_mut().chunks_exact_mut(k).zip(probs.data().chunks_exact(k)).zip(grad_probs.data().chunks_exact(k))
    {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for j in 0..k {
            o[j] = p[j] * (g[j] - dot);
        }
    }
    out
}

fn matching_logits(a: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    match (a.shape(), b.shape()) {
        (&[n, k], &[m, l]) if n == m && k == l => Ok((n, k)),
        _ => {
            Err(Error::Shape { expected: alloc::format!("{:?}", b.shape()), actual: alloc::format!("{:?}", a.shape()) })
        }
    }
}

/// Soft-target distillation: `T² · mean_i CE(softmax(t_i/T), softmax(s_i/T))`.
/// Returns the gradient w.r.t. the student logits. Components: `soft_ce`
/// (the value), `kl` and `teacher_entropy` (`soft_ce = kl + teacher_entropy`).
pub fn kd_loss_grad(student_logits: &Tensor, teacher_logits: &Tensor, temperature: f64) -> Result<(LossValue, Tensor)> {
    if !(temperature > 0.0) {
        bail!(InvalidArgument, "temperature must be positive, got {temperature}");
    }
    let (n, k) = matching_logits(student_logits, teacher_logits)?;
    if n == 0 || k == 0 {
        bail!(InvalidArgument, "distillation over an empty batch");
    }
    let t2 = temperature * temperature;
    let (mut ce, mut ent) = (0.0, 0.0);
    let mut grad = Tensor::zeros(student_logits.shape());
    for i in 0..n {
        let pt = softmax(teacher_logits.item(i), temperature);
        let lps = log_softmax(student_logits.item(i), temperature);
        let lpt = log_softmax(teacher_logits.item(i), temperature);
        for j in 0..k {
            ce -= pt[j] * lps[j];
            ent -= pt[j] * lpt[j];
            grad.data_mut()[i * k + j] = temperature * (libm::exp(lps[j]) - pt[j]) / n as f64;
        }
    }
    let soft_ce = t2 * ce / n as f64;
    let teacher_entropy = t2 * ent / n as f64;
    let loss = LossValue::new(
        soft_ce,
        &[("soft_ce", soft_ce), ("kl", soft_ce - teacher_entropy), ("teacher_entropy", teacher_entropy)],
    )?;
    Ok((loss, grad))
}

pub fn kd_loss(student_logits: &Tensor, teacher_logits: &Tensor, temperature: f64) -> Result<LossValue> {
    Ok(kd_loss_grad(student_logits, teacher_logits, temperature)?.0)
}

/// Mean cross-entropy of logits against hard labels, with gradient.
pub fn cross_entropy_grad(logits: &Tensor, labels: &[usize]) -> Result<(LossValue, Tensor)> {
    let &[n, k] = logits.shape() else {
        bail!(InvalidArgument, "logits must be N×K, got {:?}", logits.shape());
    };
    if labels.len() != n || n == 0 {
        bail!(InvalidArgument, "{} labels for {n} logit rows", labels.len());
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            bail!(InvalidArgument, "label {label} outside [0, {k})");
        }
        let lp = log_softmax(logits.item(i), 1.0);
        total -= lp[label];
        for j in 0..k {
            grad.data_mut()[i * k + j] = (libm::exp(lp[j]) - if j == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    let value = total / n as f64;
    Ok((LossValue::new(value, &[("ce", value)])?, grad))
}

/// Gradients of [`incremental_loss`] w.r.t. its two trainable inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalGrads {
    pub new_logits: Tensor,
    /// Same shape as the student's representative-sample logits.
    pub student_rep_logits: Tensor,
}

/// `T² · mean_i −Σ_{j<K_old} q_ij ln p_ij` with `q = softmax(t/T)` over the
/// old classes and `p = softmax(s/T)` over all of the student's classes.
fn all_class_kd_grad(student: &Tensor, teacher_old: &Tensor, temperature: f64) -> Result<(f64, Tensor)> {
    let (m, k) = (student.batch(), student.item_len());
    let k_old = teacher_old.item_len();
    let mut grad = Tensor::zeros(student.shape());
    let mut ce = 0.0;
    for i in 0..m {
        let q = softmax(teacher_old.item(i), temperature);
        let lps = log_softmax(student.item(i), temperature);
        for j in 0..k {
            let target = if j < k_old { q[j] } else { 0.0 };
            ce -= target * lps[j];
            grad.data_mut()[i * k + j] = temperature * (libm::exp(lps[j]) - target) / m as f64;
        }
    }
    Ok((temperature * temperature * ce / m as f64, grad))
}

/// Cross-entropy on new-class data, distillation of old-class logits on
/// representative (generated or proxy) samples, and a logit-scale regularizer
/// `R = (mean|old-class logits| − mean|new-class logits|)²` on the new data.
///
/// `new_logits`: N × (K_old + K_new) on new data; `labels` must lie in the
/// new-class range. `old_logits_generated` (frozen old model) and
/// `student_old_logits` (old-class slice of the model being trained) are
/// M × K_old; `M = 0` drops the distillation term. Components `ce`, `kd` and
/// `scale_reg` (already weighted) sum to the value.
pub fn incremental_loss_grad(
    new_logits: &Tensor,
    labels: &[usize],
    old_logits_generated: &Tensor,
    student_old_logits: &Tensor,
    temperature: f64,
    reg_weight: f64,
) -> Result<(LossValue, IncrementalGrads)> {
    incremental_loss_scoped_grad(
        new_logits,
        labels,
        old_logits_generated,
        student_old_logits,
        temperature,
        reg_weight,
        KdScope::OldSlice,
    )
}

/// [`incremental_loss_grad`] with a choice of distillation scope. Under
/// [`KdScope::AllClasses`] `student_rep_logits` holds full M × K_total rows.
pub fn incremental_loss_scoped_grad(
    new_logits: &Tensor,
    labels: &[usize],
    old_logits_generated: &Tensor,
    student_rep_logits: &Tensor,
    temperature: f64,
    reg_weight: f64,
    scope: KdScope,
) -> Result<(LossValue, IncrementalGrads)> {
    if !(reg_weight >= 0.0) {
        bail!(InvalidArgument, "regularizer weight must be non-negative");
    }
    let &[n, k_total] = new_logits.shape() else {
        bail!(InvalidArgument, "new-data logits must be N×K, got {:?}", new_logits.shape());
    };
    let (m, k_old) = match scope {
        KdScope::OldSlice => matching_logits(student_rep_logits, old_logits_generated)?,
        KdScope::AllClasses => match (student_rep_logits.shape(), old_logits_generated.shape()) {
            (&[m, k], &[m2, k_old]) if m == m2 && k == k_total => (m, k_old),
            _ => {
                return Err(Error::Shape {
                    expected: alloc::format!("[{}, {k_total}]", old_logits_generated.batch()),
                    actual: alloc::format!("{:?}", student_rep_logits.shape()),
                })
            }
        },
    };
    if k_old == 0 || k_old >= k_total {
        bail!(InvalidArgument, "old classes ({k_old}) must be a proper prefix of all classes ({k_total})");
    }
    if let Some(&bad) = labels.iter().find(|&&l| l < k_old || l >= k_total) {
        bail!(InvalidArgument, "label {bad} outside the new-class range [{k_old}, {k_total})");
    }
    if !(temperature > 0.0) {
        bail!(InvalidArgument, "temperature must be positive, got {temperature}");
    }
    let (ce, mut g_new) = cross_entropy_grad(new_logits, labels)?;
    let (kd_value, g_student) = match (m, scope) {
        (0, _) => (0.0, Tensor::zeros(student_rep_logits.shape())),
        (_, KdScope::OldSlice) => {
            let (kd, g) = kd_loss_grad(student_rep_logits, old_logits_generated, temperature)?;
            (kd.value, g)
        }
        (_, KdScope::AllClasses) => all_class_kd_grad(student_rep_logits, old_logits_generated, temperature)?,
    };
    let k_new = k_total - k_old;
    let (mut old_abs, mut new_abs) = (0.0, 0.0);
    for row in new_logits.data().chunks_exact(k_total) {
        old_abs += row[..k_old].iter().map(|v| v.abs()).sum::<f64>();
        new_abs += row[k_old..].iter().map(|v| v.abs()).sum::<f64>();
    }
    let a = old_abs / (n * k_old) as f64;
    let b = new_abs / (n * k_new) as f64;
    let gap = a - b;
    let reg = reg_weight * gap * gap;
    if reg_weight != 0.0 {
        let sign = |v: f64| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        };
        for (row, logits) in g_new.data_mut().chunks_exact_mut(k_total).zip(new_logits.data().chunks_exact(k_total)) {
            for j in 0..k_total {
                let d = if j < k_old { 1.0 / (n * k_old) as f64 } else { -1.0 / (n * k_new) as f64 };
                row[j] += reg_weight * 2.0 * gap * d * sign(logits[j]);
            }
        }
    }
    let loss = LossValue::new(ce.value + kd_value + reg, &[("ce", ce.value), ("kd", kd_value), ("scale_reg", reg)])?;
    Ok((loss, IncrementalGrads { new_logits: g_new, student_rep_logits: g_student }))
}

pub fn incremental_loss(
    new_logits: &Tensor,
    labels: &[usize],
    old_logits_generated: &Tensor,
    student_old_logits: &Tensor,
    temperature: f64,
    reg_weight: f64,
) -> Result<LossValue> {
    Ok(incremental_loss_grad(new_logits, labels, old_logits_generated, student_old_logits, temperature, reg_weight)?.0)
}

/// Entropy of a normalized histogram (natural log), e.g. of predicted classes.
pub fn histogram_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * libm::log(v)).sum::<f64>()
}

/// Counts of each class among the arg-max predictions.
pub fn class_histogram(y: &ClassDistribution) -> Vec<usize> {
    let mut counts = vec![0; y.classes()];
    for p in y.predictions() {
        counts[p] += 1;
    }
    counts
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_difference_grad, max_relative_error};
    use crate::rng::StreamRng;
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;
    const LN10: f64 = 2.302585092994046;

    fn dist(rows: &[&[f64]]) -> ClassDistribution {
        ClassDistribution::from_rows(rows).unwrap()
    }

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    fn random_logits(rng: &mut StreamRng, n: usize, k: usize, scale: f64) -> Tensor {
        Tensor::from_vec(&[n, k], (0..n * k).map(|_| scale * rng.normal()).collect()).unwrap()
    }

    #[test]
    fn adversarial_examples() {
        close(adv_real(&[1.0, 1.0, 1.0], EPS).unwrap().value, 0.0);
        close(adv_real(&[0.5, 0.5], EPS).unwrap().value, -0.693147);
        close(adv_real(&[0.9, 0.1], EPS).unwrap().value, -1.203973);
        close(adv_fake(&[0.0, 0.0], EPS).unwrap().value, 0.0);
        close(adv_fake(&[0.5], EPS).unwrap().value, -0.693147);
        close(adv_fake(&[0.25, 0.75], EPS).unwrap().value, -0.836988);
        assert!(matches!(adv_real(&[f64::NAN], EPS), Err(Error::NonFinite { .. })));
        assert!(matches!(adv_fake(&[0.5, f64::INFINITY], EPS), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn clamping_keeps_values_finite() {
        close(adv_real(&[0.0], EPS).unwrap().value, libm::log(EPS));
        close(adv_fake(&[1.0], EPS).unwrap().value, libm::log(EPS));
    }

    #[test]
    fn entropy_examples() {
        close(entropy_loss(&dist(&[&[0.0, 1.0, 0.0]]), EPS).unwrap().value, 0.0);
        close(entropy_loss(&dist(&[&[0.1; 10]]), EPS).unwrap().value, LN10);
        close(entropy_loss(&dist(&[&[0.5, 0.5], &[1.0, 0.0]]), EPS).unwrap().value, 0.346574);
    }

    #[test]
    fn diversity_examples() {
        close(diversity_loss(&dist(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]), EPS).unwrap().value, 0.0);
        let mut eye = Tensor::zeros(&[10, 10]);
        for i in 0..10 {
            eye.data_mut()[i * 11] = 1.0;
        }
        close(diversity_loss(&ClassDistribution::from_probs(eye).unwrap(), EPS).unwrap().value, LN10);
        close(diversity_loss(&dist(&[&[1.0, 0.0], &[0.5, 0.5]]), EPS).unwrap().value, 0.562335);
    }

    #[test]
    fn unnormalized_rows_rejected() {
        assert!(matches!(ClassDistribution::from_rows(&[&[0.5, 0.6]]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn discriminator_examples() {
        close(discriminator_loss(&[1.0], &[0.0], EPS).unwrap().value, 0.0);
        close(discriminator_loss(&[0.5], &[0.5], EPS).unwrap().value, -1.386294);
        let l = discriminator_loss(&[0.9, 0.3, 0.6], &[0.2, 0.7], EPS).unwrap();
        assert!((l.component("adv_real").unwrap() + l.component("adv_fake").unwrap() - l.value).abs() < 1e-12);
        let swapped = discriminator_loss(&[0.6, 0.9, 0.3], &[0.7, 0.2], EPS).unwrap();
        assert!((swapped.value - l.value).abs() < 1e-15);
    }

    #[test]
    fn generator_examples() {
        let y = dist(&[&[0.2, 0.5, 0.3], &[0.9, 0.05, 0.05]]);
        let d = [0.3, 0.8];
        let vanilla = generator_loss(&d, &y, 0.0, 0.0, EPS).unwrap();
        assert_eq!(vanilla.value, adv_fake(&d, EPS).unwrap().value);

        let uniform = dist(&[&[0.1; 10]]);
        assert_eq!(uniform.batch_mean(), uniform.row(0));
        close(generator_loss(&[0.5], &uniform, 1.0, 1.0, EPS).unwrap().value, -0.693147);

        assert!(matches!(generator_loss(&d, &y, -0.1, 0.0, EPS), Err(Error::InvalidArgument(_))));
        assert!(matches!(generator_loss(&d, &y, 0.0, -1.0, EPS), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn generator_components_compose() {
        let y = dist(&[&[0.2, 0.5, 0.3], &[0.9, 0.05, 0.05]]);
        let (l, _) = generator_loss_grad(&[0.3, 0.8], &y, 0.7, 1.3, GeneratorObjective::NonSaturating, EPS).unwrap();
        let composed = l.component("adv_fake").unwrap() + 0.7 * l.component("entropy").unwrap()
            - 1.3 * l.component("diversity").unwrap();
        assert!((composed - l.value).abs() < 1e-12);
        let ns = -(libm::log(0.3) + libm::log(0.8)) / 2.0;
        let expected = ns + 0.7 * l.component("entropy").unwrap() - 1.3 * l.component("diversity").unwrap();
        assert!((l.component("objective").unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn vanilla_generator_skips_classifier_gradient() {
        let y = dist(&[&[0.2, 0.8]]);
        let (_, g) = generator_loss_grad(&[0.4], &y, 0.0, 0.0, GeneratorObjective::NonSaturating, EPS).unwrap();
        assert!(g.probs.is_none());
    }

    #[test]
    fn kd_examples() {
        let t = Tensor::from_vec(&[1, 2], vec![2.0, 0.0]).unwrap();
        let s = Tensor::from_vec(&[1, 2], vec![0.0, 2.0]).unwrap();
        // p_t = (e²/(e²+1), 1/(e²+1)); p_s reversed; -Σ p_t ln p_s by hand.
        let e2 = libm::exp(2.0);
        let (pt0, pt1) = (e2 / (e2 + 1.0), 1.0 / (e2 + 1.0));
        let oracle = -(pt0 * libm::log(pt1) + pt1 * libm::log(pt0));
        close(oracle, 1.888522);
        close(kd_loss(&s, &t, 1.0).unwrap().value, oracle);

        let mut rng = StreamRng::new(3, "kd");
        let logits = random_logits(&mut rng, 4, 5, 2.0);
        let (l, g) = kd_loss_grad(&logits, &logits, 20.0).unwrap();
        assert!(l.component("kl").unwrap().abs() < 1e-9);
        assert!(g.data().iter().all(|v| v.abs() < 1e-8));

        let a = Tensor::from_vec(&[1, 3], vec![1.0, -2.0, 3.0]).unwrap();
        let b = Tensor::from_vec(&[1, 3], vec![-1.0, 0.5, 2.0]).unwrap();
        let t = 1e3;
        let v = kd_loss(&a, &b, t).unwrap().value;
        let asymptote = t * t * libm::log(3.0);
        assert!((v - asymptote).abs() / asymptote < 1e-5);
        assert!(v > kd_loss(&a, &b, 1e2).unwrap().value);

        assert!(matches!(kd_loss(&a, &Tensor::zeros(&[2, 3]), 1.0), Err(Error::Shape { .. })));
        assert!(kd_loss(&a, &b, 0.0).is_err());
    }

    #[test]
    fn incremental_examples() {
        let mut rng = StreamRng::new(5, "incr");
        let new = random_logits(&mut rng, 3, 5, 1.0);
        let labels = [3, 4, 3];
        let empty = Tensor::zeros(&[0, 3]);
        let l = incremental_loss(&new, &labels, &empty, &empty, 2.0, 0.0).unwrap();
        assert_eq!(l.value, cross_entropy_grad(&new, &labels).unwrap().0.value);

        let old = random_logits(&mut rng, 4, 3, 1.0);
        let (l, g) = incremental_loss_grad(&new, &labels, &old, &old, 2.0, 0.1).unwrap();
        assert!(g.student_rep_logits.data().iter().all(|v| v.abs() < 1e-12));
        let sum: f64 = l.components.values().sum();
        assert!((sum - l.value).abs() < 1e-12);

        assert!(matches!(incremental_loss(&new, &[3, 2, 4], &old, &old, 2.0, 0.1), Err(Error::InvalidArgument(_))));
        assert!(incremental_loss(&new, &[3, 5, 4], &old, &old, 2.0, 0.1).is_err());
    }

    fn check(analytic: &[f64], numeric: &[f64]) {
        let err = max_relative_error(analytic, numeric, 1e-6);
        assert!(err < 1e-4, "relative error {err}: {analytic:?} vs {numeric:?}");
    }

    fn gen_value(
        logits: &[f64],
        d: &[f64],
        n: usize,
        k: usize,
        le: f64,
        ld: f64,
        obj: GeneratorObjective,
    ) -> Result<f64> {
        let y = ClassDistribution::from_logits(&Tensor::from_vec(&[n, k], logits.to_vec())?)?;
        Ok(generator_loss_grad(d, &y, le, ld, obj, EPS)?.0.component("objective").unwrap())
    }

    #[test]
    fn generator_gradients_match_finite_differences() {
        let mut rng = StreamRng::new(11, "fd");
        let (n, k) = (4, 5);
        let logits = random_logits(&mut rng, n, k, 1.5);
        let d: Vec<f64> = (0..n).map(|_| 0.1 + 0.8 * rng.uniform()).collect();
        for obj in [GeneratorObjective::Saturating, GeneratorObjective::NonSaturating] {
            let y = ClassDistribution::from_logits(&logits).unwrap();
            let (_, g) = generator_loss_grad(&d, &y, 0.8, 1.7, obj, EPS).unwrap();
            let g_logits = softmax_backward(y.probs(), g.probs.as_ref().unwrap());
            let num = finite_difference_grad(|p| gen_value(p, &d, n, k, 0.8, 1.7, obj), logits.data(), 1e-6).unwrap();
            check(g_logits.data(), &num);
            let num = finite_difference_grad(|p| gen_value(logits.data(), p, n, k, 0.8, 1.7, obj), &d, 1e-7).unwrap();
            check(&g.d_fake, &num);
        }
    }

    #[test]
    fn adversarial_gradients_match_finite_differences() {
        let d_real = [0.3, 0.7, 0.55];
        let d_fake = [0.2, 0.9];
        let (_, gr, gf) = discriminator_loss_grad(&d_real, &d_fake, EPS).unwrap();
        let num = finite_difference_grad(|p| Ok(discriminator_loss(p, &d_fake, EPS)?.value), &d_real, 1e-7).unwrap();
        check(&gr, &num);
        let num = finite_difference_grad(|p| Ok(discriminator_loss(&d_real, p, EPS)?.value), &d_fake, 1e-7).unwrap();
        check(&gf, &num);
    }

    #[test]
    fn kd_and_ce_gradients_match_finite_differences() {
        let mut rng = StreamRng::new(13, "fd");
        let s = random_logits(&mut rng, 3, 4, 2.0);
        let t = random_logits(&mut rng, 3, 4, 2.0);
        for temp in [1.0, 4.0, 20.0] {
            let (_, g) = kd_loss_grad(&s, &t, temp).unwrap();
            let num = finite_difference_grad(
                |p| Ok(kd_loss(&Tensor::from_vec(&[3, 4], p.to_vec())?, &t, temp)?.value),
                s.data(),
                1e-6,
            )
            .unwrap();
            check(g.data(), &num);
        }
        let labels = [0, 3, 1];
        let (_, g) = cross_entropy_grad(&s, &labels).unwrap();
        let num = finite_difference_grad(
            |p| Ok(cross_entropy_grad(&Tensor::from_vec(&[3, 4], p.to_vec())?, &labels)?.0.value),
            s.data(),
            1e-6,
        )
        .unwrap();
        check(g.data(), &num);
    }

    #[test]
    fn incremental_gradients_match_finite_differences() {
        let mut rng = StreamRng::new(17, "fd");
        let new = random_logits(&mut rng, 3, 5, 1.5);
        let old = random_logits(&mut rng, 2, 3, 1.5);
        let student = random_logits(&mut rng, 2, 3, 1.5);
        let labels = [3, 4, 4];
        let (_, g) = incremental_loss_grad(&new, &labels, &old, &student, 3.0, 0.5).unwrap();
        let num = finite_difference_grad(
            |p| Ok(incremental_loss(&Tensor::from_vec(&[3, 5], p.to_vec())?, &labels, &old, &student, 3.0, 0.5)?.value),
            new.data(),
            1e-6,
        )
        .unwrap();
        check(g.new_logits.data(), &num);
        let num = finite_difference_grad(
            |p| Ok(incremental_loss(&new, &labels, &old, &Tensor::from_vec(&[2, 3], p.to_vec())?, 3.0, 0.5)?.value),
            student.data(),
            1e-6,
        )
        .unwrap();
        check(g.student_rep_logits.data(), &num);
    }

    #[test]
    fn all_class_distillation() {
        let mut rng = StreamRng::new(23, "fd");
        let new = random_logits(&mut rng, 3, 5, 1.5);
        let old = random_logits(&mut rng, 2, 3, 1.5);
        let student = random_logits(&mut rng, 2, 5, 1.5);
        let labels = [3, 4, 4];
        let scoped = |s: &Tensor| incremental_loss_scoped_grad(&new, &labels, &old, s, 3.0, 0.5, KdScope::AllClasses);
        let (l, g) = scoped(&student).unwrap();
        let num = finite_difference_grad(
            |p| Ok(scoped(&Tensor::from_vec(&[2, 5], p.to_vec())?)?.0.value),
            student.data(),
            1e-6,
        )
        .unwrap();
        check(g.student_rep_logits.data(), &num);
        let sum: f64 = l.components.values().sum();
        assert!((sum - l.value).abs() < 1e-12);

        // Lowering every old-class logit is free under the slice, not over all classes.
        let shifted = Tensor::from_vec(
            &[2, 5],
            student
                .data()
                .chunks(5)
                .flat_map(|r| r.iter().enumerate().map(|(j, &v)| if j < 3 { v - 4.0 } else { v }).collect::<Vec<_>>())
                .collect(),
        )
        .unwrap();
        assert!(scoped(&shifted).unwrap().0.value > l.value);
        let slice = |s: &Tensor| {
            let rows: Vec<f64> = s.data().chunks(5).flat_map(|r| r[..3].to_vec()).collect();
            incremental_loss(&new, &labels, &old, &Tensor::from_vec(&[2, 3], rows).unwrap(), 3.0, 0.5).unwrap().value
        };
        assert!((slice(&shifted) - slice(&student)).abs() < 1e-9);

        let sliced_width = Tensor::zeros(&[2, 3]);
        assert!(matches!(scoped(&sliced_width), Err(Error::Shape { .. })));
    }

    #[test]
    fn jensen_ordering_on_random_batches() {
        let mut rng = StreamRng::new(19, "jensen");
        for trial in 0..1000 {
            let n = 1 + rng.below(16);
            let k = 2 + rng.below(9);
            let scale = 0.1 + 5.0 * rng.uniform();
            let y = ClassDistribution::from_logits(&random_logits(&mut rng, n, k, scale)).unwrap();
            let e = entropy_loss(&y, EPS).unwrap().value;
            let d = diversity_loss(&y, EPS).unwrap().value;
            let ln_k = libm::log(k as f64);
            assert!(d >= e - 1e-12, "trial {trial}: diversity {d} < entropy {e}");
            assert!((-1e-12..=ln_k + 1e-12).contains(&e) && (-1e-12..=ln_k + 1e-12).contains(&d));
        }
    }

    #[test]
    fn histogram_entropy_of_uniform_counts() {
        close(histogram_entropy(&[5, 5, 5, 5]), libm::log(4.0));
        assert_eq!(histogram_entropy(&[0, 7, 0]), 0.0);
        assert_eq!(histogram_entropy(&[]), 0.0);
    }

    proptest! {
        #[test]
        fn column_permutation_invariance(seed in any::<u64>(), n in 1usize..8, k in 2usize..7) {
            let mut rng = StreamRng::new(seed, "perm");
            let logits = random_logits(&mut rng, n, k, 2.0);
            let perm = rng.permutation(k);
            let permuted: Vec<f64> = (0..n).flat_map(|i| perm.iter().map(move |&j| (i, j))).map(|(i, j)| logits.data()[i * k + j]).collect();
            let a = ClassDistribution::from_logits(&logits).unwrap();
            let b = ClassDistribution::from_logits(&Tensor::from_vec(&[n, k], permuted).unwrap()).unwrap();
            let (ea, eb) = (entropy_loss(&a, EPS).unwrap().value, entropy_loss(&b, EPS).unwrap().value);
            let (da, db) = (diversity_loss(&a, EPS).unwrap().value, diversity_loss(&b, EPS).unwrap().value);
            prop_assert!((ea - eb).abs() < 1e-12);
            prop_assert!((da - db).abs() < 1e-12);
        }

        #[test]
        fn generator_loss_monotone_in_weights(seed in any::<u64>(), le in 0.0f64..5.0, ld in 0.0f64..5.0, step in 0.01f64..2.0) {
            let mut rng = StreamRng::new(seed, "mono");
            let y = ClassDistribution::from_logits(&random_logits(&mut rng, 4, 3, 1.0)).unwrap();
            let d = [0.2, 0.4, 0.6, 0.8];
            let base = generator_loss(&d, &y, le, ld, EPS).unwrap().value;
            prop_assert!(generator_loss(&d, &y, le + step, ld, EPS).unwrap().value > base);
            prop_assert!(generator_loss(&d, &y, le, ld + step, EPS).unwrap().value < base);
        }

        #[test]
        fn extreme_entropy_values(k in 2usize..12, hot in 0usize..12, n in 1usize..6) {
            let hot = hot % k;
            let mut one_hot = vec![0.0; k];
            one_hot[hot] = 1.0;
            let rows: Vec<&[f64]> = (0..n).map(|_| one_hot.as_slice()).collect();
            prop_assert!(entropy_loss(&dist(&rows), EPS).unwrap().value.abs() < 1e-12);
            let uniform = vec![1.0 / k as f64; k];
            let rows: Vec<&[f64]> = (0..n).map(|_| uniform.as_slice()).collect();
            let ln_k = libm::log(k as f64);
            prop_assert!((entropy_loss(&dist(&rows), EPS).unwrap().value - ln_k).abs() < 1e-9);
            prop_assert!((diversity_loss(&dist(&rows), EPS).unwrap().value - ln_k).abs() < 1e-9);
        }
    }
}
