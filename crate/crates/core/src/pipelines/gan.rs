use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{ensure_frozen, minibatches, predict_logits, to_model_input, MetricsRow, RunRecord, EVAL_CHUNK};
use crate::arch::{build_discriminator, build_generator, ArchSpec, RangeAdapter};
use crate::config::ExperimentConfig;
use crate::datasets::{DatasetSpec, ImageShape};
use crate::distribution::ClassDistribution;
use crate::error::{bail, Result};
use crate::losses::{
    adv_fake_grad, adv_real_grad, class_histogram, generator_loss_grad, histogram_entropy, softmax_backward,
    GeneratorObjective, LossValue,
};
use crate::model::ModelHandle;
use crate::nn::{Adam, Pass};
use crate::rng::{sample_latent, LatentBatch, LatentSpec, SeedStreams, StreamRng};
use crate::tensor::Tensor;

/// Generator and discriminator architectures of one GAN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanArchs {
    pub generator: ArchSpec,
    pub discriminator: ArchSpec,
}

impl GanArchs {
    pub fn for_shape(image_shape: ImageShape, latent_dim: usize) -> Self {
        Self {
            generator: ArchSpec::generator(image_shape, latent_dim),
            discriminator: ArchSpec::discriminator(image_shape),
        }
    }
}

/// Both players after training.
#[derive(Debug, Clone, PartialEq)]
pub struct GanState {
    pub generator: ModelHandle,
    pub discriminator: ModelHandle,
}

/// Generated images in the classifier's input range, with the classifier's view of them.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub images: Tensor,
    pub distribution: ClassDistribution,
    pub latent: LatentBatch,
}

fn column(values: &[f64]) -> Result<Tensor> {
    Tensor::from_vec(&[values.len(), 1], values.to_vec())
}

/// Accumulates the gradient of `-L_D` (the quantity the discriminator
/// minimizes) for one real and one generated batch, each normalized on its own.
pub fn discriminator_backward(d: &mut ModelHandle, real: &Tensor, fake: &Tensor, eps: f64) -> Result<LossValue> {
    let out = d.forward(real, Pass::Train)?;
    let (real_loss, g) = adv_real_grad(out.data(), eps)?;
    d.backward(&column(&g.iter().map(|v| -v).collect::<Vec<_>>())?)?;
    let out = d.forward(fake, Pass::Train)?;
    let (fake_loss, g) = adv_fake_grad(out.data(), eps)?;
    d.backward(&column(&g.iter().map(|v| -v).collect::<Vec<_>>())?)?;
    LossValue::new(real_loss.value + fake_loss.value, &[("adv_real", real_loss.value), ("adv_fake", fake_loss.value)])
}

/// `-L_D` evaluated statelessly with batch statistics.
pub fn discriminator_objective(d: &ModelHandle, real: &Tensor, fake: &Tensor, eps: f64) -> Result<f64> {
    let r = adv_real_grad(d.infer_batch_stats(real)?.data(), eps)?.0.value;
    let f = adv_fake_grad(d.infer_batch_stats(fake)?.data(), eps)?.0.value;
    Ok(-(r + f))
}

fn adversarial_only(d_fake: &[f64], objective: GeneratorObjective, eps: f64) -> Result<(LossValue, Vec<f64>)> {
    let (fake, g_fake) = adv_fake_grad(d_fake, eps)?;
    let (term, grad) = match objective {
        GeneratorObjective::Saturating => (fake.value, g_fake),
        GeneratorObjective::NonSaturating => {
            let (r, g) = adv_real_grad(d_fake, eps)?;
            (-r.value, g.iter().map(|v| -v).collect())
        }
    };
    Ok((LossValue::new(fake.value, &[("adv_fake", fake.value), ("objective", term)])?, grad))
}

fn classifier_distribution(c: &ModelHandle, fake: &Tensor) -> Result<ClassDistribution> {
    ClassDistribution::from_logits(&c.infer(&to_model_input(c, fake))?)
}

/// Generator half of a step. `g` must have just produced `fake` with a
/// recording forward pass; accumulates the generator's parameter gradients of
/// the configured objective. The discriminator and classifier only pass
/// gradients through. Returns the loss and the classifier outputs on `fake`.
pub fn generator_backward(
    g: &mut ModelHandle,
    fake: &Tensor,
    d: &mut ModelHandle,
    classifier: Option<&mut ModelHandle>,
    cfg: &ExperimentConfig,
) -> Result<(LossValue, Option<ClassDistribution>)> {
    let feedback = cfg.lambda_e != 0.0 || cfg.lambda_d != 0.0;
    let d_out = d.forward(fake, Pass::Batch)?;
    let (loss, g_d, y, c_grad) = match classifier {
        Some(c) if feedback => {
            let logits = c.forward(&to_model_input(c, fake), Pass::Eval)?;
            let y = ClassDistribution::from_logits(&logits)?;
            let (loss, grads) = generator_loss_grad(
                d_out.data(),
                &y,
                cfg.lambda_e,
                cfg.lambda_d,
                cfg.generator_objective,
                cfg.eps_log,
            )?;
            let g_logits = softmax_backward(y.probs(), grads.probs.as_ref().expect("classifier weights are non-zero"));
            let g_in = c.backward_input(&g_logits)?;
            let g_fake = RangeAdapter::new(c.input_stats()).backward(&g_in);
            (loss, grads.d_fake, Some(y), Some(g_fake))
        }
        Some(c) => {
            let y = classifier_distribution(c, fake)?;
            let (loss, grads) = generator_loss_grad(d_out.data(), &y, 0.0, 0.0, cfg.generator_objective, cfg.eps_log)?;
            (loss, grads.d_fake, Some(y), None)
        }
        None if feedback => bail!(Config, "classifier feedback requested without a classifier"),
        None => {
            let (loss, grad) = adversarial_only(d_out.data(), cfg.generator_objective, cfg.eps_log)?;
            (loss, grad, None, None)
        }
    };
    let mut g_x = d.backward_input(&column(&g_d)?)?;
    if let Some(extra) = c_grad {
        g_x.add_assign(&extra)?;
    }
    g.backward(&g_x)?;
    Ok((loss, y))
}

/// The generator's optimized objective for latent batch `z`, evaluated
/// statelessly with batch statistics.
pub fn generator_objective(
    g: &ModelHandle,
    z: &Tensor,
    d: &ModelHandle,
    classifier: Option<&ModelHandle>,
    cfg: &ExperimentConfig,
) -> Result<f64> {
    let fake = g.infer_batch_stats(z)?;
    let d_out = d.infer_batch_stats(&fake)?;
    let loss = match classifier {
        Some(c) => {
            let y = classifier_distribution(c, &fake)?;
            generator_loss_grad(d_out.data(), &y, cfg.lambda_e, cfg.lambda_d, cfg.generator_objective, cfg.eps_log)?.0
        }
        None => adversarial_only(d_out.data(), cfg.generator_objective, cfg.eps_log)?.0,
    };
    Ok(loss.component("objective").unwrap_or(loss.value))
}

/// Generator output in `[-1, 1]` for a latent batch, using running statistics.
pub(crate) fn sample_images(generator: &ModelHandle, z: &Tensor) -> Result<Tensor> {
    let n = z.batch();
    let mut parts = Vec::new();
    for start in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..n.min(start + EVAL_CHUNK)).collect();
        parts.push(generator.infer(&z.select(&idx))?);
    }
    Tensor::concat(&parts.iter().collect::<Vec<_>>())
}

/// Draws `n` samples and labels them with the frozen classifier.
pub fn generate_batch(
    generator: &ModelHandle,
    classifier: &ModelHandle,
    n: usize,
    rng: &mut StreamRng,
) -> Result<Generated> {
    let latent = sample_latent(LatentSpec::new(generator.arch().latent_dim)?, n, rng)?;
    let raw = sample_images(generator, &latent.values)?;
    let distribution = ClassDistribution::from_logits(&predict_logits(classifier, &raw)?)?;
    Ok(Generated { images: to_model_input(classifier, &raw), distribution, latent })
}

#[derive(Default)]
struct EpochStats {
    steps: usize,
    d_loss: f64,
    adv_real: f64,
    adv_fake: f64,
    g_loss: f64,
    g_objective: f64,
    entropy: f64,
    diversity: f64,
    confidence: f64,
    samples: usize,
    histogram: Vec<usize>,
}

impl EpochStats {
    fn add(&mut self, d: &LossValue, g: &LossValue, y: Option<&ClassDistribution>) {
        self.steps += 1;
        self.d_loss += d.value;
        self.adv_real += d.component("adv_real").unwrap_or(0.0);
        self.adv_fake += d.component("adv_fake").unwrap_or(0.0);
        self.g_loss += g.value;
        self.g_objective += g.component("objective").unwrap_or(g.value);
        if let Some(y) = y {
            self.entropy += g.component("entropy").unwrap_or(0.0);
            self.diversity += g.component("diversity").unwrap_or(0.0);
            self.confidence += y.confidences().iter().sum::<f64>();
            self.samples += y.rows();
            let h = class_histogram(y);
            if self.histogram.is_empty() {
                self.histogram = vec![0; h.len()];
            }
            self.histogram.iter_mut().zip(h).for_each(|(a, b)| *a += b);
        }
    }

    fn row(&self, epoch: usize, classes: Option<usize>) -> MetricsRow {
        let s = self.steps as f64;
        let mut row = MetricsRow::new(epoch);
        row.push("d_loss", self.d_loss / s);
        row.push("adv_real", self.adv_real / s);
        row.push("adv_fake", self.adv_fake / s);
        row.push("g_loss", self.g_loss / s);
        row.push("g_objective", self.g_objective / s);
        if let Some(k) = classes {
            row.push("entropy", self.entropy / s);
            row.push("diversity", self.diversity / s);
            row.push("mean_confidence", self.confidence / self.samples as f64);
            row.push("hist_entropy", histogram_entropy(&self.histogram));
            for c in 0..k {
                row.push(format!("hist_{c}"), self.histogram[c] as f64 / self.samples as f64);
            }
        }
        row
    }
}

/// Alternating GAN training on `proxy`: per batch one discriminator step
/// maximizing `L_D`, then one generator step on the configured objective with
/// optional classifier feedback. Checks every step that each player is
/// unchanged while the other updates, and that the classifier is unchanged
/// over the run.
pub fn train_gan(
    classifier: Option<&ModelHandle>,
    proxy: &DatasetSpec,
    archs: &GanArchs,
    cfg: &ExperimentConfig,
) -> Result<(GanState, RunRecord)> {
    cfg.validate()?;
    if proxy.is_empty() {
        bail!(InvalidArgument, "proxy dataset '{}' is empty", proxy.name());
    }
    let shape = proxy.image_shape();
    if archs.generator.image_shape != shape || archs.discriminator.image_shape != shape {
        bail!(Config, "GAN architectures do not match proxy images {shape}");
    }
    let digest = match classifier {
        Some(c) => {
            ensure_frozen(c, "classifier")?;
            if c.arch().image_shape != shape {
                bail!(Config, "classifier expects {} images, proxy has {shape}", c.arch().image_shape);
            }
            Some(c.param_digest())
        }
        None => None,
    };
    let streams = SeedStreams::new(cfg.seed);
    let mut init_g = streams.stream("init-generator");
    let mut init_d = streams.stream("init-discriminator");
    let mut shuffle = streams.stream("shuffle");
    let mut latent = streams.stream("latent");
    let mut record = RunRecord::new("train_gan", cfg);
    for (name, rng) in
        [("init-generator", &init_g), ("init-discriminator", &init_d), ("shuffle", &shuffle), ("latent", &latent)]
    {
        record.trace(name, rng.trace());
    }
    let mut g = build_generator(&archs.generator, &mut init_g)?;
    let mut d = build_discriminator(&archs.discriminator, &mut init_d)?;
    let mut opt_g = Adam::new(cfg.gan_lr, cfg.gan_beta1);
    let mut opt_d = Adam::new(cfg.gan_lr, cfg.gan_beta1);
    let mut c = classifier.cloned();
    let classes = c.as_ref().map(|c| c.arch().num_classes);
    let spec = LatentSpec::new(archs.generator.latent_dim)?;

    for epoch in 1..=cfg.gan_epochs {
        let order = shuffle.permutation(proxy.len());
        let mut stats = EpochStats::default();
        for idx in minibatches(&order, cfg.batch_size) {
            let real = proxy.batch(idx);
            let z = sample_latent(spec, idx.len(), &mut latent)?;
            let fake = g.forward(&z.values, Pass::Train)?;

            let g_before = g.param_digest();
            d.zero_grad();
            let d_loss = discriminator_backward(&mut d, &real, &fake, cfg.eps_log)?;
            opt_d.step(&mut d)?;
            if g.param_digest() != g_before {
                bail!(Invariant, "generator parameters changed during a discriminator step (epoch {epoch})");
            }

            let d_before = d.param_digest();
            g.zero_grad();
            let (g_loss, y) = generator_backward(&mut g, &fake, &mut d, c.as_mut(), cfg)?;
            opt_g.step(&mut g)?;
            if d.param_digest() != d_before {
                bail!(Invariant, "discriminator parameters changed during a generator step (epoch {epoch})");
            }
            stats.add(&d_loss, &g_loss, y.as_ref());
        }
        let row = stats.row(epoch, classes);
        log::info!(
            "gan epoch {epoch}: d_loss {:.4} g_loss {:.4} hist_entropy {:.4}",
            row.get("d_loss").unwrap_or(f64::NAN),
            row.get("g_loss").unwrap_or(f64::NAN),
            row.get("hist_entropy").unwrap_or(f64::NAN)
        );
        record.push_row(row)?;
    }
    if let (Some(before), Some(c), Some(orig)) = (digest, &c, classifier) {
        if c.param_digest() != before || orig.param_digest() != before {
            bail!(Invariant, "classifier parameters changed during GAN training");
        }
    }
    if let Some(last) = record.rows.last() {
        for (name, value) in last.values.clone() {
            record.set_summary(name, value);
        }
    }
    Ok((GanState { generator: g, discriminator: d }, record))
}

/// DeGAN: GAN training on `proxy` with feedback from a frozen classifier.
pub fn train_degan(
    classifier: &ModelHandle,
    proxy: &DatasetSpec,
    cfg: &ExperimentConfig,
) -> Result<(ModelHandle, RunRecord)> {
    let archs = GanArchs::for_shape(proxy.image_shape(), cfg.latent_dim);
    let (state, mut record) = train_gan(Some(classifier), proxy, &archs, cfg)?;
    record.pipeline = "train_degan".into();
    Ok((state.generator, record))
}

/// Vanilla GAN baseline: the same game without classifier feedback. A
/// classifier, if given, is only used to log the class statistics.
pub fn train_vanilla_gan(
    classifier: Option<&ModelHandle>,
    proxy: &DatasetSpec,
    cfg: &ExperimentConfig,
) -> Result<(ModelHandle, RunRecord)> {
    let cfg = ExperimentConfig { lambda_e: 0.0, lambda_d: 0.0, ..cfg.clone() };
    let archs = GanArchs::for_shape(proxy.image_shape(), cfg.latent_dim);
    let (state, mut record) = train_gan(classifier, proxy, &archs, &cfg)?;
    record.pipeline = "train_vanilla_gan".into();
    Ok((state.generator, record))
}
