//! On-disk dataset cache: one directory per dataset holding `manifest.toml`,
//! `pixels.f32` (little-endian) and, for labeled data, `labels.u32`.

use std::fs;
use std::path::{Path, PathBuf};

use degan_core::{DatasetSpec, ImageShape};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{format_error, Error, IoContext, Result};

/// Environment variable naming the cache root.
pub const CACHE_ENV: &str = "DEGAN_DATA_DIR";
const DEFAULT_ROOT: &str = "data-cache";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub shape: String,
    pub count: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub labeled: bool,
    /// SHA-256 of the pixel bytes followed by the label bytes.
    pub checksum: String,
}

#[derive(Debug, Clone)]
pub struct DatasetCache {
    root: PathBuf,
}

fn checksum(pixels: &[u8], labels: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(pixels);
    h.update(labels);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !name.starts_with('.')
}

impl DatasetCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Cache rooted at `$DEGAN_DATA_DIR`, or `./data-cache`.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT)))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, name: &str) -> Result<PathBuf> {
        if !valid_name(name) {
            return Err(Error::Config(format!("invalid cached dataset name '{name}'")));
        }
        Ok(self.root.join(name))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.dir(name).map(|d| d.join("manifest.toml").is_file()).unwrap_or(false)
    }

    pub fn store(&self, name: &str, ds: &DatasetSpec) -> Result<DatasetManifest> {
        let dir = self.dir(name)?;
        fs::create_dir_all(&dir).at(&dir)?;
        let pixels: Vec<u8> = ds.pixels().iter().flat_map(|v| v.to_le_bytes()).collect();
        let labels: Vec<u8> = ds.labels().unwrap_or_default().iter().flat_map(|&l| (l as u32).to_le_bytes()).collect();
        let manifest = DatasetManifest {
            name: name.to_string(),
            shape: ds.image_shape().to_string(),
            count: ds.len(),
            num_classes: ds.num_classes(),
            class_names: ds.class_names().to_vec(),
            labeled: ds.is_labeled(),
            checksum: checksum(&pixels, &labels),
        };
        fs::write(dir.join("pixels.f32"), &pixels).at(dir.join("pixels.f32"))?;
        if ds.is_labeled() {
            fs::write(dir.join("labels.u32"), &labels).at(dir.join("labels.u32"))?;
        }
        let text = toml::to_string(&manifest).map_err(|e| format_error(&dir, e))?;
        fs::write(dir.join("manifest.toml"), text).at(dir.join("manifest.toml"))?;
        Ok(manifest)
    }

    pub fn manifest(&self, name: &str) -> Result<DatasetManifest> {
        let path = self.dir(name)?.join("manifest.toml");
        let text = fs::read_to_string(&path).at(&path)?;
        toml::from_str(&text).map_err(|e| format_error(&path, e))
    }

    /// Loads a cached dataset, verifying its checksum.
    pub fn load(&self, name: &str) -> Result<DatasetSpec> {
        let dir = self.dir(name)?;
        let manifest = self.manifest(name)?;
        let pixels = fs::read(dir.join("pixels.f32")).at(dir.join("pixels.f32"))?;
        let labels =
            if manifest.labeled { fs::read(dir.join("labels.u32")).at(dir.join("labels.u32"))? } else { Vec::new() };
        if checksum(&pixels, &labels) != manifest.checksum {
            return Err(format_error(&dir, "checksum mismatch"));
        }
        let shape = ImageShape::parse(&manifest.shape)?;
        let values: Vec<f32> = pixels.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let labels = manifest
            .labeled
            .then(|| labels.chunks_exact(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize).collect());
        let mut ds = DatasetSpec::new(&manifest.name, shape, manifest.num_classes, values, labels)?;
        if !manifest.class_names.is_empty() {
            ds = ds.with_class_names(manifest.class_names)?;
        }
        if ds.len() != manifest.count {
            return Err(format_error(&dir, format!("manifest lists {} images, found {}", manifest.count, ds.len())));
        }
        Ok(ds)
    }
}
