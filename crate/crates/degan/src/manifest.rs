//! Experiment manifests (TOML).
//!
//! ```toml
//! pipeline = "distill"          # train_teacher | train_degan | distill | incremental
//! seeds = [0, 1, 2]             # or `repeats = 3` for seeds 0..3
//!
//! [data]
//! true = "synthetic:true:5:200:16x16x1:{seed}"
//! test = "synthetic:true:5:100:16x16x1:1{seed}"
//! proxy = "synthetic:related:5:400:16x16x1:2{seed}"
//! proxy_counts = [400, 100, 25, 6, 0]   # optional, per source class
//! proxy_classes = [0, 1]                # optional class filter
//! proxy_grayscale = false
//! old_classes = 5                       # incremental only
//!
//! [models]
//! teacher_width = 1.0
//! student_width = 0.5
//! scale = "desk"                        # desk | full
//! teacher = "runs/t/seed-0/teacher/model"   # optional checkpoint
//!
//! [options]
//! source = "degan"                      # degan | vanilla | proxy | true
//! incremental_mode = "degan"            # finetune | lwf_proxy | degan
//!
//! [config]                              # any ExperimentConfig key
//! lambda_e = 20.0
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use degan_core::pipelines::IncrementalMode;
use degan_core::{DatasetSpec, ExperimentConfig, ProxyRecipe, Scale};
use serde::{Deserialize, Serialize};

use crate::cache::DatasetCache;
use crate::dataref::DataRef;
use crate::error::{format_error, Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    #[serde(alias = "train-teacher")]
    TrainTeacher,
    #[serde(alias = "train-degan")]
    TrainDegan,
    Distill,
    Incremental,
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::TrainTeacher => "train_teacher",
            Pipeline::TrainDegan => "train_degan",
            Pipeline::Distill => "distill",
            Pipeline::Incremental => "incremental",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where distillation inputs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdSourceKind {
    Degan,
    Vanilla,
    Proxy,
    True,
}

impl KdSourceKind {
    pub fn name(&self) -> &'static str {
        match self {
            KdSourceKind::Degan => "degan",
            KdSourceKind::Vanilla => "vanilla",
            KdSourceKind::Proxy => "proxy",
            KdSourceKind::True => "true",
        }
    }
}

impl FromStr for KdSourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "degan" => Ok(KdSourceKind::Degan),
            "vanilla" | "dcgan" => Ok(KdSourceKind::Vanilla),
            "proxy" => Ok(KdSourceKind::Proxy),
            "true" => Ok(KdSourceKind::True),
            other => Err(Error::Config(format!("unknown distillation source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(rename = "true")]
    pub true_data: String,
    pub test: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_counts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_classes: Option<Vec<usize>>,
    #[serde(default)]
    pub proxy_grayscale: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old_classes: Option<usize>,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn desk() -> String {
    "desk".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsSection {
    #[serde(default = "one")]
    pub teacher_width: f64,
    #[serde(default = "half")]
    pub student_width: f64,
    #[serde(default = "desk")]
    pub scale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<PathBuf>,
}

impl Default for ModelsSection {
    fn default() -> Self {
        Self { teacher_width: 1.0, student_width: 0.5, scale: desk(), teacher: None }
    }
}

fn degan() -> String {
    "degan".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsSection {
    #[serde(default = "degan")]
    pub source: String,
    #[serde(default = "degan")]
    pub incremental_mode: String,
}

impl Default for OptionsSection {
    fn default() -> Self {
        Self { source: degan(), incremental_mode: degan() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub pipeline: Pipeline,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub data: DataSection,
    #[serde(default)]
    pub models: ModelsSection,
    #[serde(default)]
    pub options: OptionsSection,
    #[serde(default)]
    pub config: BTreeMap<String, toml::Value>,
}

/// Datasets and settings for one seed.
#[derive(Debug, Clone)]
pub struct SeedPlan {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub true_data: DatasetSpec,
    pub test: DatasetSpec,
    pub proxy: Option<DatasetSpec>,
    pub proxy_label: String,
}

fn value_text(key: &str, v: &toml::Value) -> Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        _ => return Err(Error::Config(format!("config key '{key}' must be a scalar"))),
    })
}

impl Manifest {
    pub fn from_toml(path: &Path, text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| format_error(path, e))?;
        m.check()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(path, &fs::read_to_string(path).at(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        match (&self.seeds, self.repeats) {
            (Some(s), Some(r)) if s.len() != r => {
                Err(Error::Config(format!("{} seeds listed but repeats = {r}", s.len())))
            }
            (Some(s), _) if s.is_empty() => Err(Error::Config("seed list is empty".into())),
            (Some(s), _) => {
                let mut sorted = s.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != s.len() {
                    return Err(Error::Config("seed list has duplicates".into()));
                }
                Ok(s.clone())
            }
            (None, Some(0)) => Err(Error::Config("repeats must be positive".into())),
            (None, Some(r)) => Ok((0..r as u64).collect()),
            (None, None) => Ok(vec![0]),
        }
    }

    pub fn scale(&self) -> Result<Scale> {
        Ok(Scale::parse(&self.models.scale)?)
    }

    pub fn source(&self) -> Result<KdSourceKind> {
        self.options.source.parse()
    }

    pub fn incremental_mode(&self) -> Result<IncrementalMode> {
        Ok(IncrementalMode::parse(&self.options.incremental_mode)?)
    }

    /// The experiment configuration with `seed` applied.
    pub fn config(&self, seed: u64) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in &self.config {
            cfg.set(k, &value_text(k, v)?)?;
        }
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn needs_proxy(&self) -> Result<bool> {
        Ok(match self.pipeline {
            Pipeline::TrainDegan => true,
            Pipeline::Distill => {
                matches!(self.source()?, KdSourceKind::Degan | KdSourceKind::Vanilla | KdSourceKind::Proxy)
            }
            _ => false,
        })
    }

    /// Static checks that need no data.
    pub fn check(&self) -> Result<()> {
        self.seeds()?;
        self.scale()?;
        self.source()?;
        self.incremental_mode()?;
        self.config(0)?;
        for w in [self.models.teacher_width, self.models.student_width] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("width multiplier {w} must be positive")));
            }
        }
        DataRef::parse_with_seed(&self.data.true_data, 0)?;
        DataRef::parse_with_seed(&self.data.test, 0)?;
        if let Some(p) = &self.data.proxy {
            DataRef::parse_with_seed(p, 0)?;
        } else if self.needs_proxy()? {
            return Err(Error::Config(format!("pipeline {} needs [data] proxy", self.pipeline)));
        }
        if self.pipeline == Pipeline::Incremental && self.data.old_classes.is_none() {
            return Err(Error::Config("incremental pipeline needs [data] old_classes".into()));
        }
        Ok(())
    }

    /// Resolves and loads every dataset for `seed`, checking that they fit together.
    pub fn plan(&self, seed: u64, cache: &DatasetCache) -> Result<SeedPlan> {
        let config = self.config(seed)?;
        let true_data = DataRef::parse_with_seed(&self.data.true_data, seed)?.load(cache)?;
        let test = DataRef::parse_with_seed(&self.data.test, seed)?.load(cache)?;
        if !true_data.is_labeled() || !test.is_labeled() {
            return Err(Error::Config("true and test datasets must be labeled".into()));
        }
        if true_data.num_classes() != test.num_classes() || true_data.image_shape() != test.image_shape() {
            return Err(Error::Config(format!(
                "test set ({} classes, {}) does not match true data ({} classes, {})",
                test.num_classes(),
                test.image_shape(),
                true_data.num_classes(),
                true_data.image_shape()
            )));
        }
        let mut proxy_label = String::new();
        let proxy = match &self.data.proxy {
            Some(text) => {
                let dref = DataRef::parse_with_seed(text, seed)?;
                let source = dref.load(cache)?;
                let mut recipe = ProxyRecipe::from_dataset(source, seed);
                proxy_label = dref.to_string();
                if let Some(counts) = &self.data.proxy_counts {
                    recipe = recipe.with_class_counts(counts.clone());
                    proxy_label.push_str(&format!(" counts={counts:?}"));
                }
                if let Some(classes) = &self.data.proxy_classes {
                    recipe = recipe.with_classes(classes.clone());
                    proxy_label.push_str(&format!(" classes={classes:?}"));
                }
                if self.data.proxy_grayscale {
                    recipe = recipe.with_grayscale();
                    proxy_label.push_str(" gray");
                }
                let ds = recipe.build()?;
                if ds.image_shape() != true_data.image_shape() {
                    return Err(Error::Config(format!(
                        "proxy images are {}, true data images are {}",
                        ds.image_shape(),
                        true_data.image_shape()
                    )));
                }
                Some(ds.unlabeled())
            }
            None => None,
        };
        if let Some(old) = self.data.old_classes {
            if old == 0 || old >= true_data.num_classes() {
                return Err(Error::Config(format!("old_classes = {old} must lie in 1..{}", true_data.num_classes())));
            }
        }
        Ok(SeedPlan { seed, config, true_data, test, proxy, proxy_label })
    }
}
