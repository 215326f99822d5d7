//! Textual references to datasets, shared by the CLI and manifests.
//!
//! ```text
//! synthetic:<style>:<classes>:<per_class>:<HxWxC>[:<seed>]
//! noise:<count>:<HxWxC>[:<seed>]
//! cache:<name>
//! ```
//! `{seed}` anywhere in a reference is replaced by the run seed.

use std::fmt;
use std::str::FromStr;

use degan_core::datasets::{make_noise_proxy, make_synthetic};
use degan_core::{DatasetSpec, ImageShape, SyntheticStyle};

use crate::cache::DatasetCache;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataRef {
    Synthetic { style: SyntheticStyle, classes: usize, per_class: usize, shape: ImageShape, seed: u64 },
    Noise { count: usize, shape: ImageShape, seed: u64 },
    Cache(String),
}

fn field<T: FromStr>(text: &str, what: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Config(format!("dataset reference '{text}': invalid {what} '{s}'")))
}

impl DataRef {
    /// Parses a reference after substituting `{seed}`.
    pub fn parse_with_seed(text: &str, seed: u64) -> Result<Self> {
        text.replace("{seed}", &seed.to_string()).parse()
    }

    /// Builds the dataset; cached references are read from `cache`.
    pub fn load(&self, cache: &DatasetCache) -> Result<DatasetSpec> {
        Ok(match self {
            DataRef::Synthetic { style, classes, per_class, shape, seed } => {
                make_synthetic(*classes, *per_class, *shape, *style, *seed)?
            }
            DataRef::Noise { count, shape, seed } => make_noise_proxy(*count, *shape, *seed)?,
            DataRef::Cache(name) => cache.load(name)?,
        })
    }
}

impl FromStr for DataRef {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        let shape = |s: &str| ImageShape::parse(s).map_err(Error::from);
        match parts.as_slice() {
            ["synthetic", style, classes, per_class, dims, rest @ ..] if rest.len() <= 1 => Ok(DataRef::Synthetic {
                style: SyntheticStyle::parse(style)?,
                classes: field(text, "class count", classes)?,
                per_class: field(text, "per-class count", per_class)?,
                shape: shape(dims)?,
                seed: rest.first().map(|s| field(text, "seed", s)).transpose()?.unwrap_or(0),
            }),
            ["noise", count, dims, rest @ ..] if rest.len() <= 1 => Ok(DataRef::Noise {
                count: field(text, "count", count)?,
                shape: shape(dims)?,
                seed: rest.first().map(|s| field(text, "seed", s)).transpose()?.unwrap_or(0),
            }),
            ["cache", name] if !name.is_empty() => Ok(DataRef::Cache((*name).to_string())),
            _ => Err(Error::Config(format!("unrecognized dataset reference '{text}'"))),
        }
    }
}

impl fmt::Display for DataRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataRef::Synthetic { style, classes, per_class, shape, seed } => {
                write!(f, "synthetic:{}:{classes}:{per_class}:{shape}:{seed}", style.name())
            }
            DataRef::Noise { count, shape, seed } => write!(f, "noise:{count}:{shape}:{seed}"),
            DataRef::Cache(name) => write!(f, "cache:{name}"),
        }
    }
}
