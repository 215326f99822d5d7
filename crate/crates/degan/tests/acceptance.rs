//! Acceptance checks, one line per criterion.
//!
//! `DEGAN_ACCEPT=1,2,8` runs a subset. The process exits nonzero if any
//! selected criterion fails.

#![allow(clippy::approx_constant)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{ensure, Context};
use degan::cache::DatasetCache;
use degan::manifest::Manifest;
use degan::runner::{run, RunOptions};
use degan_core::arch::expand_head;
use degan_core::datasets::{make_noise_proxy, make_synthetic, subset_classes, take_per_class};
use degan_core::gradcheck::{check_discriminator, check_generator, check_incremental, check_kd, GradReport};
use degan_core::losses::{
    adv_fake, adv_real, class_histogram, discriminator_loss, diversity_loss, entropy_loss, generator_loss,
    histogram_entropy, incremental_loss, incremental_loss_grad, kd_loss, kd_loss_grad, KdScope,
};
use degan_core::pipelines::{
    distill, generate_batch, incremental_update, train_degan, train_teacher, train_vanilla_gan, GanArchs,
    IncrementalMode, KdSource,
};
use degan_core::{
    build_classifier, build_discriminator, build_generator, sample_latent, ArchSpec, ClassDistribution, DatasetSpec,
    ExperimentConfig, GeneratorObjective, ImageShape, LatentSpec, ModelHandle, StreamRng, SyntheticStyle, Tensor,
};

const EPS: f64 = 1e-12;
const SHAPE: ImageShape = ImageShape::new(16, 16, 1);
const K: usize = 5;
const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn majority(wins: usize, detail: String) -> Self {
        Outcome { pass: wins >= 2, detail: format!("{wins}/3 seeds; {detail}") }
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    check: fn() -> anyhow::Result<Outcome>,
}

fn mins(m: u64) -> Option<Duration> {
    Some(Duration::from_secs(60 * m))
}

fn main() {
    let selected: Option<BTreeSet<u32>> =
        std::env::var("DEGAN_ACCEPT").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria = [
        Criterion { id: 1, name: "closed-form losses", budget: mins(1), check: closed_form },
        Criterion { id: 2, name: "gradient oracle", budget: mins(10), check: gradients },
        Criterion { id: 3, name: "frozen classifier", budget: mins(15), check: frozen_classifier },
        Criterion { id: 4, name: "diversity effect", budget: mins(30), check: diversity_effect },
        Criterion { id: 5, name: "KD ordering", budget: mins(45), check: kd_ordering },
        Criterion { id: 6, name: "noise-proxy enrichment", budget: mins(30), check: noise_proxy },
        Criterion { id: 7, name: "incremental ordering", budget: mins(30), check: incremental_ordering },
        Criterion { id: 8, name: "determinism", budget: None, check: determinism },
    ];
    let mut failed = false;
    for c in &criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&c.id)) {
            continue;
        }
        let start = Instant::now();
        let result = (c.check)();
        let took = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => match c.budget {
                Some(b) if took > b => (false, format!("{}; over the {}s budget", o.detail, b.as_secs())),
                _ => (o.pass, o.detail),
            },
            Err(e) => (false, format!("error: {e:#}")),
        };
        failed |= !pass;
        println!(
            "criterion {} {} ({}, {:.1}s): {detail}",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.name,
            took.as_secs_f64()
        );
    }
    if selected.as_ref().is_none_or(|s| s.contains(&9)) {
        println!("criterion 9 SKIP (GPU-budget reproduction): needs full-size networks and the real image datasets");
    }
    if failed {
        std::process::exit(1);
    }
}

// 1

struct Cases {
    total: usize,
    failures: Vec<String>,
}

impl Cases {
    fn check(&mut self, name: &str, got: f64, want: f64, tol: f64) {
        self.total += 1;
        if !((got - want).abs() <= tol) {
            self.failures.push(format!("{name}: got {got}, want {want}"));
        }
    }

    fn truth(&mut self, name: &str, ok: bool) {
        self.total += 1;
        if !ok {
            self.failures.push(name.to_string());
        }
    }
}

fn dist(rows: &[&[f64]]) -> anyhow::Result<ClassDistribution> {
    Ok(ClassDistribution::from_rows(rows)?)
}

fn logits(n: usize, k: usize, values: &[f64]) -> anyhow::Result<Tensor> {
    Ok(Tensor::from_vec(&[n, k], values.to_vec())?)
}

fn closed_form() -> anyhow::Result<Outcome> {
    let mut c = Cases { total: 0, failures: Vec::new() };
    let tol = 1e-6;
    c.check("adv_real ones", adv_real(&[1.0, 1.0, 1.0], EPS)?.value, 0.0, tol);
    c.check("adv_real halves", adv_real(&[0.5, 0.5], EPS)?.value, 0.5f64.ln(), tol);
    c.check("adv_real mixed", adv_real(&[0.9, 0.1], EPS)?.value, (0.9f64.ln() + 0.1f64.ln()) / 2.0, tol);
    c.check("adv_real mixed literal", adv_real(&[0.9, 0.1], EPS)?.value, -1.203973, tol);
    c.check("adv_fake zeros", adv_fake(&[0.0, 0.0], EPS)?.value, 0.0, tol);
    c.check("adv_fake half", adv_fake(&[0.5], EPS)?.value, -0.693147, tol);
    c.check("adv_fake mixed", adv_fake(&[0.25, 0.75], EPS)?.value, -0.836988, tol);

    let uniform = [0.1; 10];
    let mut onehot = [0.0; 10];
    onehot[3] = 1.0;
    c.check("entropy one-hot", entropy_loss(&dist(&[&onehot])?, EPS)?.value, 0.0, tol);
    c.check("entropy uniform", entropy_loss(&dist(&[&uniform])?, EPS)?.value, 10f64.ln(), tol);
    c.check("entropy mixed", entropy_loss(&dist(&[&[0.5, 0.5], &[1.0, 0.0]])?, EPS)?.value, 0.346574, tol);

    c.check("diversity identical", diversity_loss(&dist(&[&onehot, &onehot, &onehot])?, EPS)?.value, 0.0, tol);
    let eye: Vec<Vec<f64>> = (0..10).map(|i| (0..10).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let rows: Vec<&[f64]> = eye.iter().map(Vec::as_slice).collect();
    c.check("diversity distinct", diversity_loss(&dist(&rows)?, EPS)?.value, 2.302585, tol);
    c.check("diversity mixed", diversity_loss(&dist(&[&[1.0, 0.0], &[0.5, 0.5]])?, EPS)?.value, 0.562335, tol);

    c.check("D separable", discriminator_loss(&[1.0], &[0.0], EPS)?.value, 0.0, tol);
    let d = discriminator_loss(&[0.5], &[0.5], EPS)?;
    c.check("D halves", d.value, -1.386294, tol);
    let parts = d.component("adv_real").unwrap_or(f64::NAN) + d.component("adv_fake").unwrap_or(f64::NAN);
    c.check("D components", parts, d.value, 1e-12);

    let y = dist(&[&[0.7, 0.2, 0.1], &[0.1, 0.1, 0.8]])?;
    let fake = [0.3, 0.6];
    let g0 = generator_loss(&fake, &y, 0.0, 0.0, EPS)?.value;
    c.truth("G λ=0 equals adv_fake", g0 == adv_fake(&fake, EPS)?.value);
    let g = generator_loss(&[0.5], &dist(&[&uniform])?, 1.0, 1.0, EPS)?;
    c.check("G uniform row", g.value, -0.693147, tol);
    c.check("G diversity of one row equals its entropy", g.component("diversity").unwrap_or(f64::NAN), 10f64.ln(), tol);
    c.truth("G negative λ rejected", generator_loss(&fake, &y, -1.0, 0.0, EPS).is_err());

    let t = logits(2, 3, &[1.0, -0.5, 2.0, 0.3, 0.0, -1.0])?;
    let (_, grad) = kd_loss_grad(&t, &t, 4.0)?;
    c.check("KD identical logits gradient", grad.data().iter().fold(0.0, |m, v| m.max(v.abs())), 0.0, 1e-8);
    let temp = 1e3;
    let wide = logits(1, 3, &[3.0, -1.0, 0.5])?;
    let other = logits(1, 3, &[-2.0, 1.0, 0.0])?;
    let limit = temp * temp * 3f64.ln();
    let v = kd_loss(&other, &wide, temp)?.value;
    c.truth("KD large-T asymptote", ((v - limit) / limit).abs() < 1e-5);
    let pt = [2f64.exp() / (2f64.exp() + 1.0), 1.0 / (2f64.exp() + 1.0)];
    let ls = [-(1.0 + 2f64.exp()).ln(), 2.0 - (1.0 + 2f64.exp()).ln()];
    let oracle = -(pt[0] * ls[0] + pt[1] * ls[1]);
    c.check("KD 2-class oracle", oracle, 1.888522, tol);
    c.check("KD 2-class", kd_loss(&logits(1, 2, &[0.0, 2.0])?, &logits(1, 2, &[2.0, 0.0])?, 1.0)?.value, oracle, tol);

    let new = logits(2, 4, &[0.2, -0.1, 1.5, 0.3, 1.0, 0.0, -0.2, 2.0])?;
    let labels = [2, 3];
    let empty = Tensor::zeros(&[0, 2]);
    let ce = {
        let mut s = 0.0;
        for (row, &l) in new.data().chunks(4).zip(&labels) {
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            s += lse - row[l];
        }
        s / 2.0
    };
    c.check("incremental reduces to CE", incremental_loss(&new, &labels, &empty, &empty, 20.0, 0.0)?.value, ce, tol);
    let old = logits(2, 2, &[0.4, -0.3, 1.2, 0.1])?;
    let (v, g) = incremental_loss_grad(&new, &labels, &old, &old, 20.0, 0.1)?;
    c.check(
        "incremental identical old logits",
        g.student_rep_logits.data().iter().fold(0.0, |m, x| m.max(x.abs())),
        0.0,
        1e-8,
    );
    let parts: f64 = ["ce", "kd", "scale_reg"].iter().map(|k| v.component(k).unwrap_or(f64::NAN)).sum();
    c.check("incremental components", parts, v.value, 1e-12);
    c.truth("incremental old label rejected", incremental_loss(&new, &[1, 3], &old, &old, 20.0, 0.1).is_err());

    Ok(Outcome {
        pass: c.failures.is_empty(),
        detail: if c.failures.is_empty() {
            format!("{} examples within 1e-6", c.total)
        } else {
            format!("{} of {} failed: {}", c.failures.len(), c.total, c.failures.join("; "))
        },
    })
}

// 2

const DESK: ImageShape = ImageShape::new(8, 8, 1);
const H: f64 = 1e-6;

fn desk_images(n: usize, seed: u64) -> anyhow::Result<Tensor> {
    let mut rng = StreamRng::new(seed, "images");
    Ok(Tensor::from_vec(&[n, 8, 8, 1], (0..n * 64).map(|_| 2.0 * rng.uniform() - 1.0).collect())?)
}

fn desk_classifier(classes: usize, seed: u64) -> anyhow::Result<ModelHandle> {
    Ok(build_classifier(&ArchSpec::classifier(DESK, classes), &mut StreamRng::new(seed, "c"))?)
}

fn gradients() -> anyhow::Result<Outcome> {
    let archs = GanArchs::for_shape(DESK, 4);
    let g = build_generator(&archs.generator, &mut StreamRng::new(1, "g"))?;
    let d = build_discriminator(&archs.discriminator, &mut StreamRng::new(1, "d"))?;
    let c = desk_classifier(3, 2)?.freeze();
    let z = sample_latent(LatentSpec::new(4)?, 3, &mut StreamRng::new(3, "z"))?.values;
    let mut reports: Vec<(String, usize, GradReport)> = Vec::new();
    reports.push((
        "L_D".into(),
        d.param_count(),
        check_discriminator(&d, &desk_images(3, 4)?, &desk_images(3, 5)?, EPS, H)?,
    ));
    for objective in [GeneratorObjective::Saturating, GeneratorObjective::NonSaturating] {
        let cfg =
            ExperimentConfig { lambda_e: 0.5, lambda_d: 3.0, generator_objective: objective, ..Default::default() };
        reports.push((format!("L_G {objective:?}"), g.param_count(), check_generator(&g, &z, &d, Some(&c), &cfg, H)?));
    }
    let student = desk_classifier(3, 6)?;
    let teacher_logits = logits(3, 3, &[1.0, -2.0, 0.5, 0.0, 3.0, -1.0, 2.0, 2.0, -0.5])?;
    reports.push((
        "kd".into(),
        student.param_count(),
        check_kd(&student, &desk_images(3, 7)?, &teacher_logits, 4.0, H)?,
    ));
    let old = desk_classifier(3, 8)?.freeze();
    let expanded = expand_head(&old, 5, &mut StreamRng::new(9, "head"))?;
    let old_logits = logits(2, 3, &[0.5, -1.0, 2.0, 1.5, 0.0, -0.5])?;
    reports.push((
        "incremental".into(),
        expanded.param_count(),
        check_incremental(
            &expanded,
            &desk_images(3, 10)?,
            &[3, 4, 3],
            &desk_images(2, 11)?,
            &old_logits,
            20.0,
            0.1,
            KdScope::OldSlice,
            H,
        )?,
    ));
    reports.push((
        "incremental, all-class distillation".into(),
        expanded.param_count(),
        check_incremental(
            &expanded,
            &desk_images(3, 10)?,
            &[3, 4, 3],
            &desk_images(2, 11)?,
            &old_logits,
            20.0,
            0.1,
            KdScope::AllClasses,
            H,
        )?,
    ));
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for (name, params, r) in &reports {
        let err = r.relative_norm_error();
        worst = worst.max(err);
        if !(err < 1e-4) || *params > 10_000 || r.analytic.iter().all(|&v| v == 0.0) {
            bad.push(format!("{name} ({params} params, error {err:.2e})"));
        }
    }
    Ok(Outcome {
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("{} objectives, worst relative error {worst:.2e}", reports.len())
        } else {
            format!("failed: {}", bad.join(", "))
        },
    })
}

// 3-7

fn true_data(seed: u64, per_class: usize, k: usize) -> anyhow::Result<DatasetSpec> {
    Ok(make_synthetic(k, per_class, SHAPE, SyntheticStyle::TrueStyle, 100 + seed)?)
}

fn test_data(seed: u64, k: usize) -> anyhow::Result<DatasetSpec> {
    Ok(make_synthetic(k, 100, SHAPE, SyntheticStyle::TrueStyle, 200 + seed)?)
}

fn teacher(seed: u64) -> anyhow::Result<ModelHandle> {
    let cfg = ExperimentConfig { teacher_epochs: 20, batch_size: 64, seed, ..Default::default() };
    Ok(train_teacher(&true_data(seed, 200, K)?, &ArchSpec::classifier(SHAPE, K), &cfg)?.0)
}

fn sample_entropy(g: &ModelHandle, c: &ModelHandle, seed: u64) -> anyhow::Result<f64> {
    let mut rng = StreamRng::new(seed, "eval-samples");
    let mut counts = vec![0; c.arch().num_classes];
    for _ in 0..10 {
        let s = generate_batch(g, c, 1000, &mut rng)?;
        counts.iter_mut().zip(class_histogram(&s.distribution)).for_each(|(a, b)| *a += b);
    }
    Ok(histogram_entropy(&counts))
}

fn gan_cfg(seed: u64, lambda_e: f64, lambda_d: f64) -> ExperimentConfig {
    ExperimentConfig {
        gan_epochs: 200,
        batch_size: 64,
        seed,
        lambda_e,
        lambda_d,
        kd_epochs: 10,
        batches_per_kd_epoch: 100,
        ..Default::default()
    }
}

fn frozen_classifier() -> anyhow::Result<Outcome> {
    let c = teacher(0)?;
    let proxy = make_synthetic(K, 100, SHAPE, SyntheticStyle::RelatedStyle, 300)?.unlabeled();
    let before = c.param_digest();
    let (_, rec) = train_degan(&c, &proxy, &gan_cfg(0, 1.0, 1.0)).context("DeGAN run")?;
    ensure!(rec.rows.len() == 200, "{} epochs logged", rec.rows.len());
    let after = c.param_digest();
    Ok(Outcome {
        pass: before == after,
        detail: format!(
            "{} epochs, {} alternating steps checked, digest {}",
            rec.rows.len(),
            200 * (proxy.len() / 64),
            &after.to_hex()[..16]
        ),
    })
}

fn diversity_effect() -> anyhow::Result<Outcome> {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let c = teacher(seed)?;
        let proxy = subset_classes(&true_data(seed, 200, K)?, &[0])?.unlabeled();
        let cfg = gan_cfg(seed, 1.0, 1.0);
        let (gd, _) = train_degan(&c, &proxy, &cfg)?;
        let (gv, _) = train_vanilla_gan(Some(&c), &proxy, &cfg)?;
        let (hd, hv) = (sample_entropy(&gd, &c, seed)?, sample_entropy(&gv, &c, seed)?);
        wins += usize::from(hd > hv);
        parts.push(format!("H {hd:.3} vs {hv:.3}"));
    }
    Ok(Outcome::majority(wins, format!("DeGAN vs vanilla class-histogram entropy: {}", parts.join(", "))))
}

fn students(
    c: &ModelHandle,
    proxy: &DatasetSpec,
    test: &DatasetSpec,
    cfg: &ExperimentConfig,
    vanilla: bool,
) -> anyhow::Result<(f64, Option<f64>, f64)> {
    let arch = ArchSpec::classifier(SHAPE, K).with_width(0.5);
    let acc = |src: KdSource<'_>| -> anyhow::Result<f64> {
        distill(c, &arch, src, test, cfg)?.1.summary_value("test_acc").context("no test_acc")
    };
    let (gd, _) = train_degan(c, proxy, cfg)?;
    let degan = acc(KdSource::Generator(&gd))?;
    let vanilla = if vanilla {
        let (gv, _) = train_vanilla_gan(Some(c), proxy, cfg)?;
        Some(acc(KdSource::Generator(&gv))?)
    } else {
        None
    };
    Ok((degan, vanilla, acc(KdSource::Data(proxy))?))
}

fn kd_ordering() -> anyhow::Result<Outcome> {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let c = teacher(seed)?;
        let related = make_synthetic(K, 400, SHAPE, SyntheticStyle::RelatedStyle, 300 + seed)?;
        let proxy = take_per_class(&related, &[400, 100, 0, 0, 0])?.unlabeled();
        let cfg = ExperimentConfig { kd_epochs: 40, ..gan_cfg(seed, 20.0, 20.0) };
        let (d, v, p) = students(&c, &proxy, &test_data(seed, K)?, &cfg, true)?;
        let v = v.unwrap_or(f64::NAN);
        wins += usize::from(d > v && d > p);
        parts.push(format!("{:.1}/{:.1}/{:.1}", 100.0 * d, 100.0 * v, 100.0 * p));
    }
    Ok(Outcome::majority(wins, format!("student accuracy DeGAN/vanilla/proxy: {}", parts.join(", "))))
}

fn noise_proxy() -> anyhow::Result<Outcome> {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let c = teacher(seed)?;
        let proxy = make_noise_proxy(400, SHAPE, 400 + seed)?;
        let (d, _, p) = students(&c, &proxy, &test_data(seed, K)?, &gan_cfg(seed, 20.0, 20.0), false)?;
        wins += usize::from(d - p >= 0.05);
        parts.push(format!("{:.1}/{:.1}", 100.0 * d, 100.0 * p));
    }
    Ok(Outcome::majority(wins, format!("student accuracy DeGAN/noise: {}", parts.join(", "))))
}

fn incremental_ordering() -> anyhow::Result<Outcome> {
    let k = 2 * K;
    let mut wins = 0;
    let mut collapses = 0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let train = true_data(seed, 200, k)?;
        let test = test_data(seed, k)?;
        let cfg = ExperimentConfig {
            teacher_epochs: 20,
            kd_temperature: 2.0,
            incr_kd_scope: KdScope::AllClasses,
            ..gan_cfg(seed, 20.0, 20.0)
        };
        let old: Vec<usize> = (0..K).collect();
        let (old_model, _) = train_teacher(&subset_classes(&train, &old)?, &ArchSpec::classifier(SHAPE, K), &cfg)?;
        let labels = train.labels().context("labels")?;
        let new = train.select(&(0..train.len()).filter(|&i| labels[i] >= K).collect::<Vec<_>>())?;
        let mut acc = Vec::new();
        for mode in [IncrementalMode::Finetune, IncrementalMode::LwfProxy, IncrementalMode::Degan] {
            let (_, rec) = incremental_update(&old_model, &new, mode, &test, &cfg)?;
            acc.push((
                rec.summary_value("combined_acc").context("combined")?,
                rec.summary_value("old_acc").context("old")?,
            ));
        }
        let [(ft, ft_old), (lwf, _), (dg, _)] = acc[..] else { unreachable!() };
        wins += usize::from(dg > lwf && lwf > ft);
        collapses += usize::from(ft_old < 0.1);
        parts.push(format!(
            "{:.1}/{:.1}/{:.1} (finetune old {:.1})",
            100.0 * dg,
            100.0 * lwf,
            100.0 * ft,
            100.0 * ft_old
        ));
    }
    let mut o = Outcome::majority(
        wins,
        format!("all-class distillation, combined DeGAN/LwF-proxy/finetune: {}", parts.join(", ")),
    );
    o.pass &= collapses == SEEDS.len();
    o.detail.push_str(&format!("; finetune old-class collapse in {collapses}/3"));
    Ok(o)
}

// 8

const RERUN: &str = r#"
pipeline = "distill"
seeds = [0, 1]

[data]
true = "synthetic:true:4:16:8x8x1:{seed}"
test = "synthetic:true:4:8:8x8x1:5{seed}"
proxy = "synthetic:related:4:16:8x8x1:{seed}"
proxy_counts = [16, 6, 2, 0]

[config]
batch_size = 16
latent_dim = 8
gan_epochs = 3
teacher_epochs = 4
kd_epochs = 2
batches_per_kd_epoch = 3
incr_epochs = 2
"#;

fn metrics_files(dir: &Path) -> anyhow::Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == degan::metrics::METRICS_FILE) {
                out.push((p.strip_prefix(dir)?.to_path_buf(), fs::read(&p)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn determinism() -> anyhow::Result<Outcome> {
    let tmp = tempfile::tempdir()?;
    let cache = DatasetCache::new(tmp.path().join("cache"));
    let variants = [
        ("train_teacher", ""),
        ("train_degan", ""),
        ("train_degan", "source = \"vanilla\""),
        ("distill", "source = \"degan\""),
        ("distill", "source = \"vanilla\""),
        ("distill", "source = \"proxy\""),
        ("distill", "source = \"true\""),
        ("incremental", "incremental_mode = \"finetune\""),
        ("incremental", "incremental_mode = \"lwf_proxy\""),
        ("incremental", "incremental_mode = \"degan\""),
    ];
    let (mut files, mut differing) = (0, Vec::new());
    for (i, (pipeline, option)) in variants.iter().enumerate() {
        let mut text = RERUN.replace("pipeline = \"distill\"", &format!("pipeline = \"{pipeline}\""));
        if *pipeline == "incremental" {
            text = text.replace("proxy_counts = [16, 6, 2, 0]", "old_classes = 2");
        }
        if !option.is_empty() {
            text.push_str(&format!("\n[options]\n{option}\n"));
        }
        let manifest = Manifest::from_toml(Path::new("rerun.toml"), &text)?;
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("{i}-{rep}"));
            run(&manifest, &RunOptions { out: out.clone(), resume: false }, &cache)?;
            outputs.push(metrics_files(&out)?);
        }
        ensure!(!outputs[0].is_empty(), "{pipeline}: no metrics files written");
        files += outputs[0].len();
        if outputs[0] != outputs[1] {
            differing.push(format!("{pipeline} {option}"));
        }
    }
    Ok(Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} pipeline variants × 2 seeds, {files} metrics files byte-identical on rerun", variants.len())
        } else {
            format!("metrics differ for {}", differing.join(", "))
        },
    })
}
