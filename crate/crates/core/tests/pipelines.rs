use degan_core::datasets::{make_synthetic, subset_classes};
use degan_core::pipelines::{
    distill, evaluate, generate_batch, incremental_update, train_degan, train_teacher, train_vanilla_gan,
    IncrementalMode, KdSource,
};
use degan_core::{ArchSpec, DatasetSpec, Error, ExperimentConfig, ImageShape, ModelHandle, StreamRng, SyntheticStyle};

const SHAPE: ImageShape = ImageShape::new(8, 8, 1);

fn data(k: usize, per_class: usize, seed: u64) -> DatasetSpec {
    make_synthetic(k, per_class, SHAPE, SyntheticStyle::TrueStyle, seed).unwrap()
}

fn cfg() -> ExperimentConfig {
    ExperimentConfig {
        batch_size: 32,
        latent_dim: 8,
        gan_epochs: 2,
        kd_epochs: 2,
        batches_per_kd_epoch: 5,
        teacher_epochs: 15,
        incr_epochs: 3,
        ..ExperimentConfig::default()
    }
}

fn teacher(k: usize) -> ModelHandle {
    train_teacher(&data(k, 60, 1), &ArchSpec::classifier(SHAPE, k), &cfg()).unwrap().0
}

#[test]
fn teacher_learns_and_is_frozen() {
    let (t, rec) = train_teacher(&data(4, 60, 1), &ArchSpec::classifier(SHAPE, 4), &cfg()).unwrap();
    assert!(t.is_frozen());
    let acc = evaluate(&t, &data(4, 50, 99)).unwrap().accuracy;
    assert!(acc >= 0.95, "held-out accuracy {acc}");
    let best = rec.rows.iter().filter_map(|r| r.get("val_acc")).fold(0.0, f64::max);
    assert_eq!(rec.summary_value("val_acc"), Some(best));
    let mut t = t;
    assert!(matches!(t.set_flat_params(&vec![0.0; t.param_count()]), Err(Error::Frozen(_))));
}

#[test]
fn early_stopping_restores_best_epoch() {
    let c = ExperimentConfig { teacher_epochs: 60, patience: 2, ..cfg() };
    let ds = data(3, 40, 2);
    let (_, rec) = train_teacher(&ds, &ArchSpec::classifier(SHAPE, 3), &c).unwrap();
    let run = rec.summary_value("epochs_run").unwrap() as usize;
    let best = rec.summary_value("best_epoch").unwrap() as usize;
    assert!(run < 60, "ran all {run} epochs");
    assert_eq!(run, best + 2);
    assert_eq!(rec.rows[best - 1].get("val_acc"), rec.summary_value("val_acc"));
}

#[test]
fn zero_weight_degan_is_vanilla() {
    let t = teacher(3);
    let proxy = data(3, 30, 5).unlabeled();
    let c = ExperimentConfig { lambda_e: 0.0, lambda_d: 0.0, ..cfg() };
    let (a, _) = train_degan(&t, &proxy, &c).unwrap();
    let (b, _) = train_vanilla_gan(None, &proxy, &cfg()).unwrap();
    assert_eq!(a.param_digest(), b.param_digest());
    let (d, _) = train_degan(&t, &proxy, &cfg()).unwrap();
    assert_ne!(a.param_digest(), d.param_digest());
}

#[test]
fn generation_is_deterministic() {
    let t = teacher(3);
    let (g, _) = train_degan(&t, &data(3, 30, 5).unlabeled(), &cfg()).unwrap();
    let a = generate_batch(&g, &t, 7, &mut StreamRng::new(3, "gen")).unwrap();
    let b = generate_batch(&g, &t, 7, &mut StreamRng::new(3, "gen")).unwrap();
    assert_eq!(a.images.shape(), &[7, 8, 8, 1]);
    assert_eq!(a.distribution.rows(), 7);
    assert_eq!(a.images.data(), b.images.data());
    assert!(a.images.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn unfrozen_models_are_rejected() {
    let t = teacher(3);
    let proxy = data(3, 30, 5).unlabeled();
    let thawed = t.thawed_copy();
    assert!(matches!(train_degan(&thawed, &proxy, &cfg()), Err(Error::Contract(_))));
    let test = data(3, 10, 7);
    let student = ArchSpec::classifier(SHAPE, 3);
    assert!(matches!(distill(&thawed, &student, KdSource::Data(&proxy), &test, &cfg()), Err(Error::Contract(_))));
    let before = t.param_digest();
    distill(&t, &student, KdSource::Data(&proxy), &test, &cfg()).unwrap();
    assert_eq!(t.param_digest(), before);
}

#[test]
fn finetuning_forgets_old_classes() {
    let all = data(4, 60, 11);
    let old = subset_classes(&all, &[0, 1]).unwrap();
    let (old_model, _) = train_teacher(&old, &ArchSpec::classifier(SHAPE, 2), &cfg()).unwrap();
    let labels = all.labels().unwrap();
    let new_idx: Vec<usize> = (0..all.len()).filter(|&i| labels[i] >= 2).collect();
    let new = all.select(&new_idx).unwrap();
    let c = ExperimentConfig { incr_epochs: 10, ..cfg() };
    let test = data(4, 25, 12);
    let (m, rec) = incremental_update(&old_model, &new, IncrementalMode::Finetune, &test, &c).unwrap();
    assert_eq!(m.arch().num_classes, 4);
    assert!(rec.summary_value("old_acc").unwrap() < 0.2, "old {:?}", rec.summary_value("old_acc"));
    assert!(rec.summary_value("new_acc").unwrap() > 0.9);
    let mislabeled = subset_classes(&all, &[1, 2]).unwrap();
    assert!(incremental_update(&old_model, &mislabeled, IncrementalMode::Finetune, &test, &c).is_err());
}
