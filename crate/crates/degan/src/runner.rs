//! Executes manifests.
//!
//! ```text
//! <out>/manifest.toml
//! <out>/summary.csv              one row per seed, then mean and sd
//! <out>/seed-<s>/done            written last; names the final stage
//! <out>/seed-<s>/<stage>/metrics.csv, run.toml, <model>/
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use degan_core::datasets::subset_classes;
use degan_core::pipelines::{
    distill, evaluate, incremental_update, train_gan, train_teacher, GanArchs, KdSource, RunRecord,
};
use degan_core::{ArchSpec, ExperimentConfig, ModelHandle};

use crate::cache::DatasetCache;
use crate::checkpoint;
use crate::error::{Error, IoContext, Result};
use crate::manifest::{KdSourceKind, Manifest, Pipeline, SeedPlan};
use crate::metrics::{check_finite, format_float, load_run, save_record, RunFile};

pub const DONE_FILE: &str = "done";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub dir: PathBuf,
    pub run: RunFile,
    pub resumed: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seeds: Vec<SeedResult>,
    pub summary: PathBuf,
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn is_empty_dir(dir: &Path) -> Result<bool> {
    Ok(fs::read_dir(dir).at(dir)?.next().is_none())
}

/// Runs every seed of `manifest`. All datasets and the optional teacher
/// checkpoint are loaded before any training starts.
pub fn run(manifest: &Manifest, opts: &RunOptions, cache: &DatasetCache) -> Result<RunOutcome> {
    manifest.check()?;
    let seeds = manifest.seeds()?;
    let text = manifest.to_toml()?;
    let out = &opts.out;
    if out.exists() && !is_empty_dir(out)? {
        if !opts.resume {
            return Err(Error::OutputExists(out.clone()));
        }
        let recorded = out.join(MANIFEST_FILE);
        if recorded.exists() && fs::read_to_string(&recorded).at(&recorded)? != text {
            return Err(Error::Config(format!("{} was written by a different manifest", out.display())));
        }
    }
    let teacher = match &manifest.models.teacher {
        Some(path) => Some(checkpoint::load(path)?),
        None => None,
    };
    let mut plans = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let done = opts.resume && seed_dir(out, seed).join(DONE_FILE).is_file();
        plans.push(if done { None } else { Some(manifest.plan(seed, cache)?) });
    }
    fs::create_dir_all(out).at(out)?;
    fs::write(out.join(MANIFEST_FILE), &text).at(out.join(MANIFEST_FILE))?;

    let mut results = Vec::with_capacity(seeds.len());
    for (&seed, plan) in seeds.iter().zip(plans) {
        let dir = seed_dir(out, seed);
        let result = match plan {
            None => {
                let stage = fs::read_to_string(dir.join(DONE_FILE)).at(dir.join(DONE_FILE))?;
                log::info!("seed {seed}: already complete, skipping");
                SeedResult { seed, run: load_run(&dir.join(stage.trim()))?, dir, resumed: true }
            }
            Some(plan) => {
                if dir.exists() {
                    fs::remove_dir_all(&dir).at(&dir)?;
                }
                log::info!("seed {seed}: running {}", manifest.pipeline);
                let stage = run_seed(manifest, &plan, &dir, teacher.as_ref())?;
                fs::write(dir.join(DONE_FILE), format!("{stage}\n")).at(dir.join(DONE_FILE))?;
                SeedResult { seed, run: load_run(&dir.join(stage))?, dir, resumed: false }
            }
        };
        results.push(result);
    }
    let summary = out.join(SUMMARY_FILE);
    write_summary(&summary, &results)?;
    Ok(RunOutcome { seeds: results, summary })
}

/// Per-seed rows of every summary value, then their mean and sample standard deviation.
pub fn write_summary(path: &Path, results: &[SeedResult]) -> Result<()> {
    let mut keys: Vec<&String> = results.iter().flat_map(|r| r.run.summary.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::error::format_error(path, e))?;
    let err = |e: csv::Error| crate::error::format_error(path, e);
    w.write_record(std::iter::once("seed").chain(keys.iter().map(|k| k.as_str()))).map_err(err)?;
    for r in results {
        let cells = keys.iter().map(|k| r.run.summary.get(*k).map(|&v| format_float(v)).unwrap_or_default());
        w.write_record(std::iter::once(r.seed.to_string()).chain(cells)).map_err(err)?;
    }
    let column = |k: &str| -> Vec<f64> { results.iter().filter_map(|r| r.run.summary.get(k).copied()).collect() };
    let (mut means, mut sds) = (vec!["mean".to_string()], vec!["sd".to_string()]);
    for k in &keys {
        let (m, s) = mean_sd(&column(k));
        means.push(format_float(m));
        sds.push(format_float(s));
    }
    w.write_record(&means).map_err(err)?;
    w.write_record(&sds).map_err(err)?;
    w.flush().at(path)?;
    Ok(())
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Writes a stage's metrics, run file and models; returns nothing but the record on disk.
fn finish_stage(dir: &Path, mut record: RunRecord, started: Instant, models: &[(&str, &ModelHandle)]) -> Result<()> {
    check_finite(&record)?;
    for (name, model) in models {
        checkpoint::save(&dir.join(name), model)?;
        record.checkpoints.push((*name).to_string());
    }
    record.wall_clock_secs = Some(started.elapsed().as_secs_f64());
    save_record(dir, &record)
}

fn teacher_stage(
    dir: &Path,
    data: &degan_core::DatasetSpec,
    test: &degan_core::DatasetSpec,
    arch: &ArchSpec,
    cfg: &ExperimentConfig,
    role: &str,
    data_label: &str,
) -> Result<ModelHandle> {
    let started = Instant::now();
    let (model, mut record) = train_teacher(data, arch, cfg)?;
    record.set_summary("test_acc", evaluate(&model, test)?.accuracy);
    record.set_tag("role", role);
    record.set_tag("data", data_label);
    finish_stage(dir, record, started, &[("model", &model)])?;
    Ok(model)
}

fn gan_stage(
    dir: &Path,
    teacher: &ModelHandle,
    plan: &SeedPlan,
    manifest: &Manifest,
    vanilla: bool,
) -> Result<ModelHandle> {
    let started = Instant::now();
    let proxy = plan.proxy.as_ref().ok_or_else(|| Error::Config("no proxy dataset".into()))?;
    let scale = manifest.scale()?;
    let shape = proxy.image_shape();
    let base = GanArchs::for_shape(shape, plan.config.latent_dim);
    let archs =
        GanArchs { generator: base.generator.with_scale(scale), discriminator: base.discriminator.with_scale(scale) };
    let cfg = if vanilla {
        ExperimentConfig { lambda_e: 0.0, lambda_d: 0.0, ..plan.config.clone() }
    } else {
        plan.config.clone()
    };
    let (state, mut record) = train_gan(Some(teacher), proxy, &archs, &cfg)?;
    record.pipeline = if vanilla { "train_vanilla_gan" } else { "train_degan" }.into();
    record.set_tag("proxy", &plan.proxy_label);
    let generator = state.generator.freeze();
    finish_stage(dir, record, started, &[("generator", &generator), ("discriminator", &state.discriminator)])?;
    Ok(generator)
}

fn obtain_teacher(
    manifest: &Manifest,
    plan: &SeedPlan,
    dir: &Path,
    loaded: Option<&ModelHandle>,
) -> Result<ModelHandle> {
    if let Some(t) = loaded {
        if t.arch().num_classes != plan.true_data.num_classes() || t.arch().image_shape != plan.true_data.image_shape()
        {
            return Err(Error::Config("teacher checkpoint does not match the true data".into()));
        }
        return Ok(t.clone().freeze());
    }
    let arch = ArchSpec::classifier(plan.true_data.image_shape(), plan.true_data.num_classes())
        .with_width(manifest.models.teacher_width)
        .with_scale(manifest.scale()?);
    teacher_stage(
        &dir.join("teacher"),
        &plan.true_data,
        &plan.test,
        &arch,
        &plan.config,
        "teacher",
        &manifest.data.true_data,
    )
}

/// Runs one seed into `dir`; returns the name of the final stage directory.
fn run_seed(manifest: &Manifest, plan: &SeedPlan, dir: &Path, loaded: Option<&ModelHandle>) -> Result<&'static str> {
    let scale = manifest.scale()?;
    match manifest.pipeline {
        Pipeline::TrainTeacher => {
            obtain_teacher(manifest, plan, dir, None)?;
            Ok("teacher")
        }
        Pipeline::TrainDegan => {
            let teacher = obtain_teacher(manifest, plan, dir, loaded)?;
            gan_stage(&dir.join("gan"), &teacher, plan, manifest, manifest.source()? == KdSourceKind::Vanilla)?;
            Ok("gan")
        }
        Pipeline::Distill => {
            let teacher = obtain_teacher(manifest, plan, dir, loaded)?;
            let kind = manifest.source()?;
            let generator = match kind {
                KdSourceKind::Degan | KdSourceKind::Vanilla => {
                    Some(gan_stage(&dir.join("gan"), &teacher, plan, manifest, kind == KdSourceKind::Vanilla)?)
                }
                _ => None,
            };
            let source = match (kind, &generator, &plan.proxy) {
                (_, Some(g), _) => KdSource::Generator(g),
                (KdSourceKind::Proxy, None, Some(p)) => KdSource::Data(p),
                (KdSourceKind::True, None, _) => KdSource::Data(&plan.true_data),
                _ => return Err(Error::Config("distillation source needs a proxy dataset".into())),
            };
            let student_arch = ArchSpec::classifier(plan.true_data.image_shape(), plan.true_data.num_classes())
                .with_width(manifest.models.student_width)
                .with_scale(scale);
            let started = Instant::now();
            let (student, mut record) = distill(&teacher, &student_arch, source, &plan.test, &plan.config)?;
            record.set_tag("kd_source", kind.name());
            if matches!(kind, KdSourceKind::Degan | KdSourceKind::Vanilla | KdSourceKind::Proxy) {
                record.set_tag("proxy", &plan.proxy_label);
            }
            finish_stage(&dir.join("student"), record, started, &[("model", &student)])?;
            Ok("student")
        }
        Pipeline::Incremental => {
            let old = manifest.data.old_classes.ok_or_else(|| Error::Config("old_classes missing".into()))?;
            let k = plan.true_data.num_classes();
            let old_classes: Vec<usize> = (0..old).collect();
            let old_model = match loaded {
                Some(m) => {
                    if m.arch().num_classes != old {
                        return Err(Error::Config(format!(
                            "old model checkpoint has {} classes, old_classes = {old}",
                            m.arch().num_classes
                        )));
                    }
                    m.clone().freeze()
                }
                None => {
                    let data = subset_classes(&plan.true_data, &old_classes)?;
                    let test = subset_classes(&plan.test, &old_classes)?;
                    let arch = ArchSpec::classifier(data.image_shape(), old)
                        .with_width(manifest.models.teacher_width)
                        .with_scale(scale);
                    let label = format!("{} classes=0..{old}", manifest.data.true_data);
                    teacher_stage(&dir.join("old_model"), &data, &test, &arch, &plan.config, "old_model", &label)?
                }
            };
            let labels = plan.true_data.labels().expect("checked labeled");
            let new_idx: Vec<usize> = (0..plan.true_data.len()).filter(|&i| labels[i] >= old).collect();
            let new_data = plan.true_data.select(&new_idx)?;
            debug_assert_eq!(new_data.num_classes(), k);
            let mode = manifest.incremental_mode()?;
            let started = Instant::now();
            let (model, mut record) = incremental_update(&old_model, &new_data, mode, &plan.test, &plan.config)?;
            record.set_tag("old_classes", old.to_string());
            finish_stage(&dir.join("incremental"), record, started, &[("model", &model)])?;
            Ok("incremental")
        }
    }
}
