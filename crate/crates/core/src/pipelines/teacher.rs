use super::{evaluate, minibatches, to_model_input, MetricsRow, RunRecord};
use crate::arch::{build_classifier, ArchSpec, Family};
use crate::config::ExperimentConfig;
use crate::datasets::{split_train_val, DatasetSpec};
use crate::error::{bail, Result};
use crate::losses::cross_entropy_grad;
use crate::math::argmax;
use crate::model::ModelHandle;
use crate::nn::{Adam, Pass};
use crate::rng::SeedStreams;

/// Trains a classifier on a stratified split of `true_data`, early-stopping on
/// validation accuracy, and returns it frozen at its best validation epoch.
pub fn train_teacher(
    true_data: &DatasetSpec,
    arch: &ArchSpec,
    cfg: &ExperimentConfig,
) -> Result<(ModelHandle, RunRecord)> {
    cfg.validate()?;
    let Some(_) = true_data.labels() else {
        bail!(InvalidArgument, "teacher training needs labeled data, '{}' is unlabeled", true_data.name());
    };
    if arch.family != Family::ConvClassifier {
        bail!(Config, "teacher must be a classifier, got {}", arch.family.name());
    }
    if arch.num_classes != true_data.num_classes() || arch.image_shape != true_data.image_shape() {
        bail!(
            Config,
            "classifier ({} classes, {}) does not match dataset ({} classes, {})",
            arch.num_classes,
            arch.image_shape,
            true_data.num_classes(),
            true_data.image_shape()
        );
    }
    let streams = SeedStreams::new(cfg.seed);
    let (train, val) = split_train_val(true_data, cfg.train_fraction, streams.child_seed("split"))?;
    let mut init = streams.stream("init");
    let mut shuffle = streams.stream("shuffle");
    let mut record = RunRecord::new("train_teacher", cfg);
    record.trace("init", init.trace());
    record.trace("shuffle", shuffle.trace());

    let mut model = build_classifier(arch, &mut init)?;
    let mut opt = Adam::new(cfg.teacher_lr, 0.9);
    let labels = train.labels().unwrap_or_default();
    let mut best = (f64::NEG_INFINITY, 0usize, model.flat_params());
    let mut stale = 0;
    for epoch in 1..=cfg.teacher_epochs {
        let order = shuffle.permutation(train.len());
        let (mut loss_sum, mut hits, mut seen, mut batches) = (0.0, 0usize, 0usize, 0usize);
        for idx in minibatches(&order, cfg.batch_size) {
            let x = to_model_input(&model, &train.batch(idx));
            let y: alloc::vec::Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let logits = model.forward(&x, Pass::Train)?;
            let (loss, grad) = cross_entropy_grad(&logits, &y)?;
            model.backward(&grad)?;
            opt.step(&mut model)?;
            loss_sum += loss.value;
            batches += 1;
            seen += y.len();
            hits += y.iter().enumerate().filter(|&(r, &l)| argmax(logits.item(r)) == l).count();
        }
        let val_acc = evaluate(&model, &val)?.accuracy;
        let mut row = MetricsRow::new(epoch);
        row.push("loss", loss_sum / batches as f64);
        row.push("train_acc", hits as f64 / seen as f64);
        row.push("val_acc", val_acc);
        record.push_row(row)?;
        log::info!("teacher epoch {epoch}: val_acc {val_acc:.4}");
        if val_acc > best.0 {
            best = (val_acc, epoch, model.flat_params());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if record.rows.is_empty() {
        bail!(Config, "teacher_epochs must be positive");
    }
    model.set_flat_params(&best.2)?;
    record.set_summary("best_epoch", best.1 as f64);
    record.set_summary("epochs_run", record.rows.len() as f64);
    record.set_summary("train_acc", evaluate(&model, &train)?.accuracy);
    record.set_summary("val_acc", best.0);
    log::debug!("teacher restored from epoch {}", best.1);
    Ok((model.freeze(), record))
}
