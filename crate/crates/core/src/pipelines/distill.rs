use alloc::vec::Vec;

use super::gan::sample_images;
use super::{ensure_frozen, evaluate, to_model_input, MetricsRow, RunRecord};
use crate::arch::{build_classifier, ArchSpec, Family};
use crate::config::ExperimentConfig;
use crate::datasets::DatasetSpec;
use crate::error::{bail, Result};
use crate::losses::kd_loss_grad;
use crate::model::ModelHandle;
use crate::nn::{Adam, Pass};
use crate::rng::{sample_latent, LatentSpec, SeedStreams, StreamRng};
use crate::tensor::Tensor;

/// Where distillation inputs come from.
#[derive(Debug, Clone, Copy)]
pub enum KdSource<'a> {
    /// Fresh generator samples every step (or a fixed pool, see `kd_pool_size`).
    Generator(&'a ModelHandle),
    /// Images of a dataset, reshuffled every pass; labels are ignored.
    Data(&'a DatasetSpec),
}

enum Feed<'a> {
    Generator { generator: &'a ModelHandle, spec: LatentSpec },
    Pool { images: Tensor, order: Vec<usize>, pos: usize },
    Data { data: &'a DatasetSpec, order: Vec<usize>, pos: usize },
}

impl Feed<'_> {
    /// Next batch in `[-1, 1]`.
    fn next(&mut self, n: usize, latent: &mut StreamRng, shuffle: &mut StreamRng) -> Result<Tensor> {
        match self {
            Feed::Generator { generator, spec } => sample_images(generator, &sample_latent(*spec, n, latent)?.values),
            Feed::Pool { images, order, pos } => Ok(images.select(&take(order, pos, n, shuffle))),
            Feed::Data { data, order, pos } => Ok(data.batch(&take(order, pos, n, shuffle))),
        }
    }
}

/// Next `n` entries of a cyclic order that is reshuffled at every wrap.
fn take(order: &mut [usize], pos: &mut usize, n: usize, shuffle: &mut StreamRng) -> Vec<usize> {
    let n = n.min(order.len());
    if *pos + n > order.len() {
        shuffle.shuffle(order);
        *pos = 0;
    }
    let out = order[*pos..*pos + n].to_vec();
    *pos += n;
    out
}

/// Trains a student of `student_arch` to match the frozen teacher's softened
/// outputs on batches from `source`, for `kd_epochs × batches_per_kd_epoch`
/// steps. Test accuracy on `test` is recorded after every epoch.
pub fn distill(
    teacher: &ModelHandle,
    student_arch: &ArchSpec,
    source: KdSource<'_>,
    test: &DatasetSpec,
    cfg: &ExperimentConfig,
) -> Result<(ModelHandle, RunRecord)> {
    cfg.validate()?;
    ensure_frozen(teacher, "teacher")?;
    let t_arch = teacher.arch();
    if student_arch.family != Family::ConvClassifier
        || student_arch.num_classes != t_arch.num_classes
        || student_arch.image_shape != t_arch.image_shape
    {
        bail!(Config, "student must be a classifier with the teacher's classes and input shape");
    }
    let streams = SeedStreams::new(cfg.seed);
    let mut init = streams.stream("init-student");
    let mut latent = streams.stream("kd-latent");
    let mut shuffle = streams.stream("kd-shuffle");
    let mut record = RunRecord::new("distill", cfg);
    for (name, rng) in [("init-student", &init), ("kd-latent", &latent), ("kd-shuffle", &shuffle)] {
        record.trace(name, rng.trace());
    }
    record.set_tag(
        "source",
        match source {
            KdSource::Generator(_) => "generator",
            KdSource::Data(_) => "data",
        },
    );
    let mut feed = match source {
        KdSource::Generator(g) => {
            if g.arch().image_shape != t_arch.image_shape {
                bail!(
                    Config,
                    "generator produces {} images, teacher expects {}",
                    g.arch().image_shape,
                    t_arch.image_shape
                );
            }
            let spec = LatentSpec::new(g.arch().latent_dim)?;
            if cfg.kd_pool_size > 0 {
                let z = sample_latent(spec, cfg.kd_pool_size, &mut latent)?;
                let mut order: Vec<usize> = (0..cfg.kd_pool_size).collect();
                shuffle.shuffle(&mut order);
                Feed::Pool { images: sample_images(g, &z.values)?, order, pos: 0 }
            } else {
                Feed::Generator { generator: g, spec }
            }
        }
        KdSource::Data(data) => {
            if data.is_empty() || data.image_shape() != t_arch.image_shape {
                bail!(Config, "distillation data '{}' is empty or has the wrong image shape", data.name());
            }
            let mut order = data.all_indices();
            shuffle.shuffle(&mut order);
            Feed::Data { data, order, pos: 0 }
        }
    };

    let teacher_digest = teacher.param_digest();
    let mut student = build_classifier(student_arch, &mut init)?;
    let mut opt = Adam::new(cfg.kd_lr, 0.9);
    for epoch in 1..=cfg.kd_epochs {
        let (mut loss_sum, mut kl_sum) = (0.0, 0.0);
        for _ in 0..cfg.batches_per_kd_epoch {
            let x = feed.next(cfg.batch_size, &mut latent, &mut shuffle)?;
            let t_logits = teacher.infer(&to_model_input(teacher, &x))?;
            let s_logits = student.forward(&to_model_input(&student, &x), Pass::Train)?;
            let (loss, grad) = kd_loss_grad(&s_logits, &t_logits, cfg.kd_temperature)?;
            student.backward(&grad)?;
            opt.step(&mut student)?;
            loss_sum += loss.value;
            kl_sum += loss.component("kl").unwrap_or(0.0);
        }
        let acc = evaluate(&student, test)?.accuracy;
        let steps = cfg.batches_per_kd_epoch as f64;
        let mut row = MetricsRow::new(epoch);
        row.push("kd_loss", loss_sum / steps);
        row.push("kl", kl_sum / steps);
        row.push("test_acc", acc);
        record.push_row(row)?;
        log::info!("distill epoch {epoch}: test_acc {acc:.4}");
    }
    if teacher.param_digest() != teacher_digest {
        bail!(Invariant, "teacher parameters changed during distillation");
    }
    record.set_summary("test_acc", evaluate(&student, test)?.accuracy);
    record.set_summary("teacher_test_acc", evaluate(teacher, test)?.accuracy);
    Ok((student, record))
}
