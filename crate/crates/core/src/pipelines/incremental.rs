use alloc::vec::Vec;

use super::gan::sample_images;
use super::{ensure_frozen, evaluate, minibatches, to_model_input, train_degan, MetricsRow, RunRecord};
use crate::arch::expand_head;
use crate::config::ExperimentConfig;
use crate::datasets::DatasetSpec;
use crate::error::{bail, Error, Result};
use crate::losses::{incremental_loss_scoped_grad, KdScope};
use crate::model::ModelHandle;
use crate::nn::{Adam, Pass};
use crate::rng::{sample_latent, LatentSpec, SeedStreams};
use crate::tensor::Tensor;

/// What supplies the old-class distillation inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncrementalMode {
    /// New-class cross-entropy only.
    Finetune,
    /// New-class images double as distillation inputs.
    LwfProxy,
    /// A generator trained on the new-class images against the old model.
    Degan,
}

impl IncrementalMode {
    pub fn name(&self) -> &'static str {
        match self {
            IncrementalMode::Finetune => "finetune",
            IncrementalMode::LwfProxy => "lwf_proxy",
            IncrementalMode::Degan => "degan",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "finetune" => Ok(IncrementalMode::Finetune),
            "lwf_proxy" => Ok(IncrementalMode::LwfProxy),
            "degan" => Ok(IncrementalMode::Degan),
            other => Err(Error::Config(alloc::format!("unknown incremental mode '{other}'"))),
        }
    }
}

/// Extends the frozen `old_model` to the classes of `new_data`, whose labels
/// must lie in `[K_old, num_classes)`. Accuracies are reported on `test`,
/// which covers all classes.
pub fn incremental_update(
    old_model: &ModelHandle,
    new_data: &DatasetSpec,
    mode: IncrementalMode,
    test: &DatasetSpec,
    cfg: &ExperimentConfig,
) -> Result<(ModelHandle, RunRecord)> {
    cfg.validate()?;
    ensure_frozen(old_model, "old model")?;
    let k_old = old_model.arch().num_classes;
    let k_total = new_data.num_classes();
    let Some(labels) = new_data.labels() else {
        bail!(InvalidArgument, "new-class data must be labeled");
    };
    if let Some(&bad) = labels.iter().find(|&&l| l < k_old) {
        bail!(InvalidArgument, "new-class label {bad} overlaps the {k_old} old classes");
    }
    if k_total <= k_old || new_data.is_empty() {
        bail!(InvalidArgument, "new data must add classes beyond the {k_old} old ones");
    }
    if test.num_classes() != k_total {
        bail!(InvalidArgument, "test set has {} classes, expected {k_total}", test.num_classes());
    }
    let streams = SeedStreams::new(cfg.seed);
    let mut init = streams.stream("init-head");
    let mut shuffle = streams.stream("incr-shuffle");
    let mut latent = streams.stream("incr-latent");
    let mut record = RunRecord::new("incremental_update", cfg);
    for (name, rng) in [("init-head", &init), ("incr-shuffle", &shuffle), ("incr-latent", &latent)] {
        record.trace(name, rng.trace());
    }
    record.set_tag("mode", mode.name());
    let old_digest = old_model.param_digest();

    let generator = match mode {
        IncrementalMode::Degan => {
            let gan_cfg = ExperimentConfig { seed: streams.child_seed("incr-gan"), ..cfg.clone() };
            let (g, gan_record) = train_degan(old_model, &new_data.unlabeled(), &gan_cfg)?;
            for (name, value) in gan_record.summary {
                record.set_summary(alloc::format!("gan_{name}"), value);
            }
            Some(g)
        }
        _ => None,
    };
    let mut model = expand_head(old_model, k_total, &mut init)?;
    let mut opt = Adam::new(cfg.incr_lr, 0.9);
    for epoch in 1..=cfg.incr_epochs {
        let order = shuffle.permutation(new_data.len());
        let (mut loss, mut ce, mut kd, mut reg, mut steps) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for idx in minibatches(&order, cfg.batch_size) {
            let x_new = new_data.batch(idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let rep = match (&generator, mode) {
                (Some(g), _) => Some(sample_images(
                    g,
                    &sample_latent(LatentSpec::new(g.arch().latent_dim)?, idx.len(), &mut latent)?.values,
                )?),
                (None, IncrementalMode::LwfProxy) => Some(x_new.clone()),
                _ => None,
            };
            let n = idx.len();
            let x = match &rep {
                Some(r) => Tensor::concat(&[&x_new, r])?,
                None => x_new,
            };
            let logits = model.forward(&to_model_input(&model, &x), Pass::Train)?;
            let m = x.batch() - n;
            let new_logits = logits.select(&(0..n).collect::<Vec<_>>());
            let k_rep = match cfg.incr_kd_scope {
                KdScope::OldSlice => k_old,
                KdScope::AllClasses => k_total,
            };
            let (old_targets, student_rep) = match &rep {
                Some(r) => {
                    let t = old_model.infer(&to_model_input(old_model, r))?;
                    let s: Vec<f64> = (n..n + m).flat_map(|i| logits.item(i)[..k_rep].to_vec()).collect();
                    (t, Tensor::from_vec(&[m, k_rep], s)?)
                }
                None => (Tensor::zeros(&[0, k_old]), Tensor::zeros(&[0, k_rep])),
            };
            let (value, grads) = incremental_loss_scoped_grad(
                &new_logits,
                &y,
                &old_targets,
                &student_rep,
                cfg.kd_temperature,
                cfg.incr_reg_weight,
                cfg.incr_kd_scope,
            )?;
            let mut g = Tensor::zeros(logits.shape());
            g.data_mut()[..n * k_total].copy_from_slice(grads.new_logits.data());
            for i in 0..m {
                let row = &mut g.data_mut()[(n + i) * k_total..(n + i) * k_total + k_rep];
                row.copy_from_slice(grads.student_rep_logits.item(i));
            }
            model.backward(&g)?;
            opt.step(&mut model)?;
            loss += value.value;
            ce += value.component("ce").unwrap_or(0.0);
            kd += value.component("kd").unwrap_or(0.0);
            reg += value.component("scale_reg").unwrap_or(0.0);
            steps += 1;
        }
        let eval = evaluate(&model, test)?;
        let s = steps as f64;
        let mut row = MetricsRow::new(epoch);
        row.push("loss", loss / s);
        row.push("ce", ce / s);
        row.push("kd", kd / s);
        row.push("scale_reg", reg / s);
        row.push("old_acc", eval.mean_over(0..k_old));
        row.push("new_acc", eval.mean_over(k_old..k_total));
        row.push("combined_acc", eval.mean_over(0..k_total));
        log::info!("incremental ({}) epoch {epoch}: combined {:.4}", mode.name(), eval.mean_over(0..k_total));
        record.push_row(row)?;
    }
    if old_model.param_digest() != old_digest {
        bail!(Invariant, "old model parameters changed during the incremental update");
    }
    let eval = evaluate(&model, test)?;
    record.set_summary("old_acc", eval.mean_over(0..k_old));
    record.set_summary("new_acc", eval.mean_over(k_old..k_total));
    record.set_summary("combined_acc", eval.mean_over(0..k_total));
    Ok((model, record))
}
