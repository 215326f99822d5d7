//! Experiment hyperparameters and their flat `key = value` text form.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use core::fmt::Write;
use core::str::FromStr;

use crate::error::{bail, Error, Result};
use crate::losses::{GeneratorObjective, KdScope};

/// Every tunable of a run. Defaults are the desk-scale defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Weight of the per-sample entropy loss.
    pub lambda_e: f64,
    /// Weight of the batch diversity loss.
    pub lambda_d: f64,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub gan_lr: f64,
    pub gan_beta1: f64,
    pub gan_epochs: usize,
    pub generator_objective: GeneratorObjective,
    pub kd_temperature: f64,
    pub kd_epochs: usize,
    pub batches_per_kd_epoch: usize,
    pub kd_lr: f64,
    /// 0 draws fresh generator samples every step; otherwise a fixed pool of this size.
    pub kd_pool_size: usize,
    pub incr_reg_weight: f64,
    pub incr_kd_scope: KdScope,
    pub incr_epochs: usize,
    pub incr_lr: f64,
    pub teacher_lr: f64,
    pub teacher_epochs: usize,
    /// Epochs without validation improvement before early stopping.
    pub patience: usize,
    /// Fraction of labeled data used for training (the rest validates).
    pub train_fraction: f64,
    pub seed: u64,
    pub eps_log: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            lambda_e: 1.0,
            lambda_d: 1.0,
            batch_size: 128,
            latent_dim: 100,
            gan_lr: 2e-4,
            gan_beta1: 0.5,
            gan_epochs: 200,
            generator_objective: GeneratorObjective::NonSaturating,
            kd_temperature: 20.0,
            kd_epochs: 20,
            batches_per_kd_epoch: 400,
            kd_lr: 1e-3,
            kd_pool_size: 0,
            incr_reg_weight: 0.1,
            incr_kd_scope: KdScope::OldSlice,
            incr_epochs: 20,
            incr_lr: 1e-3,
            teacher_lr: 1e-3,
            teacher_epochs: 50,
            patience: 5,
            train_fraction: 0.8,
            seed: 0,
            eps_log: 1e-12,
        }
    }
}

const KEYS: &[&str] = &[
    "lambda_e",
    "lambda_d",
    "batch_size",
    "latent_dim",
    "gan_lr",
    "gan_beta1",
    "gan_epochs",
    "generator_objective",
    "kd_temperature",
    "kd_epochs",
    "batches_per_kd_epoch",
    "kd_lr",
    "kd_pool_size",
    "incr_reg_weight",
    "incr_kd_scope",
    "incr_epochs",
    "incr_lr",
    "teacher_lr",
    "teacher_epochs",
    "patience",
    "train_fraction",
    "seed",
    "eps_log",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

impl GeneratorObjective {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorObjective::Saturating => "saturating",
            GeneratorObjective::NonSaturating => "non_saturating",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "saturating" => Ok(GeneratorObjective::Saturating),
            "non_saturating" => Ok(GeneratorObjective::NonSaturating),
            other => bail!(Config, "unknown generator objective '{other}'"),
        }
    }
}

impl KdScope {
    pub fn name(&self) -> &'static str {
        match self {
            KdScope::OldSlice => "old",
            KdScope::AllClasses => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "old" => Ok(KdScope::OldSlice),
            "all" => Ok(KdScope::AllClasses),
            other => bail!(Config, "unknown distillation scope '{other}' (expected old or all)"),
        }
    }
}

impl ExperimentConfig {
    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gan_lr", self.gan_lr),
            ("kd_temperature", self.kd_temperature),
            ("kd_lr", self.kd_lr),
            ("incr_lr", self.incr_lr),
            ("teacher_lr", self.teacher_lr),
            ("eps_log", self.eps_log),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bail!(Config, "'{key}' must be positive, got {v}");
            }
        }
        for (key, v) in
            [("lambda_e", self.lambda_e), ("lambda_d", self.lambda_d), ("incr_reg_weight", self.incr_reg_weight)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                bail!(Config, "'{key}' must be non-negative, got {v}");
            }
        }
        if !(0.0..1.0).contains(&self.gan_beta1) {
            bail!(Config, "'gan_beta1' must be in [0, 1)");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!(Config, "'train_fraction' must be in (0, 1)");
        }
        if self.eps_log >= 1.0 {
            bail!(Config, "'eps_log' must be below 1");
        }
        for (key, v) in [
            ("batch_size", self.batch_size),
            ("latent_dim", self.latent_dim),
            ("batches_per_kd_epoch", self.batches_per_kd_epoch),
            ("patience", self.patience),
        ] {
            if v == 0 {
                bail!(Config, "'{key}' must be positive");
            }
        }
        Ok(())
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "lambda_e" => self.lambda_e = parse(key, v)?,
            "lambda_d" => self.lambda_d = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "latent_dim" => self.latent_dim = parse(key, v)?,
            "gan_lr" => self.gan_lr = parse(key, v)?,
            "gan_beta1" => self.gan_beta1 = parse(key, v)?,
            "gan_epochs" => self.gan_epochs = parse(key, v)?,
            "generator_objective" => self.generator_objective = GeneratorObjective::parse(v)?,
            "kd_temperature" => self.kd_temperature = parse(key, v)?,
            "kd_epochs" => self.kd_epochs = parse(key, v)?,
            "batches_per_kd_epoch" => self.batches_per_kd_epoch = parse(key, v)?,
            "kd_lr" => self.kd_lr = parse(key, v)?,
            "kd_pool_size" => self.kd_pool_size = parse(key, v)?,
            "incr_reg_weight" => self.incr_reg_weight = parse(key, v)?,
            "incr_kd_scope" => self.incr_kd_scope = KdScope::parse(v)?,
            "incr_epochs" => self.incr_epochs = parse(key, v)?,
            "incr_lr" => self.incr_lr = parse(key, v)?,
            "teacher_lr" => self.teacher_lr = parse(key, v)?,
            "teacher_epochs" => self.teacher_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "train_fraction" => self.train_fraction = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "eps_log" => self.eps_log = parse(key, v)?,
            other => bail!(Config, "unknown config key '{other}'"),
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "lambda_e" => format!("{}", self.lambda_e),
            "lambda_d" => format!("{}", self.lambda_d),
            "batch_size" => format!("{}", self.batch_size),
            "latent_dim" => format!("{}", self.latent_dim),
            "gan_lr" => format!("{}", self.gan_lr),
            "gan_beta1" => format!("{}", self.gan_beta1),
            "gan_epochs" => format!("{}", self.gan_epochs),
            "generator_objective" => self.generator_objective.name().into(),
            "kd_temperature" => format!("{}", self.kd_temperature),
            "kd_epochs" => format!("{}", self.kd_epochs),
            "batches_per_kd_epoch" => format!("{}", self.batches_per_kd_epoch),
            "kd_lr" => format!("{}", self.kd_lr),
            "kd_pool_size" => format!("{}", self.kd_pool_size),
            "incr_reg_weight" => format!("{}", self.incr_reg_weight),
            "incr_kd_scope" => self.incr_kd_scope.name().into(),
            "incr_epochs" => format!("{}", self.incr_epochs),
            "incr_lr" => format!("{}", self.incr_lr),
            "teacher_lr" => format!("{}", self.teacher_lr),
            "teacher_epochs" => format!("{}", self.teacher_epochs),
            "patience" => format!("{}", self.patience),
            "train_fraction" => format!("{}", self.train_fraction),
            "seed" => format!("{}", self.seed),
            "eps_log" => format!("{}", self.eps_log),
            _ => unreachable!("key list and accessors agree"),
        }
    }

    /// One `key = value` line per field, in a fixed order.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.value_of(key));
        }
        out
    }

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; unknown and repeated keys are errors.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(Config, "line {}: expected 'key = value', got '{line}'", lineno + 1);
            };
            let key = key.trim();
            if !seen.insert(String::from(key)) {
                bail!(Config, "line {}: duplicate key '{key}'", lineno + 1);
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", lineno + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
