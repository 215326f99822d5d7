//! True and proxy datasets: class subsets, grayscale conversion, pure-noise
//! proxies, stratified splits and procedurally generated desk-scale domains.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::error::{bail, Result};
use crate::rng::{SeedStreams, StreamRng};
use crate::tensor::Tensor;

/// Luma weights used for grayscale conversion.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Parses `HxWxC`.
    pub fn parse(s: &str) -> Result<Self> {
        let dims: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<core::result::Result<_, _>>()
            .map_err(|_| crate::Error::Config(format!("cannot parse image shape '{s}' (expected HxWxC)")))?;
        match dims.as_slice() {
            [h, w, c] => Ok(Self::new(*h, *w, *c)),
            _ => bail!(Config, "cannot parse image shape '{s}' (expected HxWxC)"),
        }
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// An ordered image collection with optional labels. Pixels are stored HWC in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    name: String,
    image_shape: ImageShape,
    num_classes: usize,
    class_names: Vec<String>,
    pixels: Vec<f32>,
    labels: Option<Vec<usize>>,
}

impl DatasetSpec {
    pub fn new(
        name: impl Into<String>,
        image_shape: ImageShape,
        num_classes: usize,
        pixels: Vec<f32>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let per = image_shape.pixels();
        if per == 0 || pixels.is_empty() || !pixels.len().is_multiple_of(per) {
            bail!(InvalidArgument, "pixel buffer of {} values does not hold whole {image_shape} images", pixels.len());
        }
        let len = pixels.len() / per;
        if let Some(labels) = &labels {
            if labels.len() != len {
                bail!(InvalidArgument, "{} labels for {len} images", labels.len());
            }
            if num_classes == 0 {
                bail!(InvalidArgument, "labeled dataset needs num_classes > 0");
            }
            if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
                bail!(InvalidArgument, "label {bad} outside [0, {num_classes})");
            }
        } else if num_classes != 0 {
            bail!(InvalidArgument, "unlabeled dataset must have num_classes = 0");
        }
        Ok(Self { name: name.into(), image_shape, num_classes, class_names: Vec::new(), pixels, labels })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes {
            bail!(InvalidArgument, "{} class names for {} classes", names.len(), self.num_classes);
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn image_shape(&self) -> ImageShape {
        self.image_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / self.image_shape.pixels()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let per = self.image_shape.pixels();
        &self.pixels[i * per..(i + 1) * per]
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in self.labels.iter().flatten() {
            counts[l] += 1;
        }
        counts
    }

    /// Images at `indices` as an NHWC batch normalized to `[-1, 1]`.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let s = self.image_shape;
        let mut data = Vec::with_capacity(indices.len() * s.pixels());
        for &i in indices {
            data.extend(self.image(i).iter().map(|&v| 2.0 * f64::from(v) - 1.0));
        }
        Tensor::from_vec(&[indices.len(), s.height, s.width, s.channels], data).expect("consistent batch")
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<DatasetSpec> {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_shape.pixels());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        let labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        let mut out = DatasetSpec::new(self.name.clone(), self.image_shape, self.num_classes, pixels, labels)?;
        out.class_names = self.class_names.clone();
        Ok(out)
    }

    /// Relabels with `offset` added to every label, widening the class count.
    pub fn offset_labels(&self, offset: usize, num_classes: usize) -> Result<DatasetSpec> {
        let Some(labels) = &self.labels else {
            bail!(InvalidArgument, "cannot offset labels of unlabeled dataset '{}'", self.name);
        };
        let labels = labels.iter().map(|l| l + offset).collect();
        DatasetSpec::new(self.name.clone(), self.image_shape, num_classes, self.pixels.clone(), Some(labels))
    }

    /// Drops labels, e.g. to use a labeled set as an unlabeled proxy.
    pub fn unlabeled(&self) -> DatasetSpec {
        DatasetSpec {
            name: self.name.clone(),
            image_shape: self.image_shape,
            num_classes: 0,
            class_names: Vec::new(),
            pixels: self.pixels.clone(),
            labels: None,
        }
    }

    /// Concatenation of two datasets with identical shape and class count.
    pub fn concat(&self, other: &DatasetSpec) -> Result<DatasetSpec> {
        if self.image_shape != other.image_shape || self.num_classes != other.num_classes {
            bail!(InvalidArgument, "cannot concatenate '{}' and '{}'", self.name, other.name);
        }
        let mut pixels = self.pixels.clone();
        pixels.extend_from_slice(&other.pixels);
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            (None, None) => None,
            _ => bail!(InvalidArgument, "cannot concatenate labeled and unlabeled data"),
        };
        DatasetSpec::new(self.name.clone(), self.image_shape, self.num_classes, pixels, labels)
    }
}

/// Keeps only samples whose label is in `keep`; labels are re-indexed densely in
/// ascending order of the kept ids.
pub fn subset_classes(source: &DatasetSpec, keep: &[usize]) -> Result<DatasetSpec> {
    if keep.is_empty() {
        bail!(InvalidArgument, "class subset must keep at least one class");
    }
    let Some(labels) = source.labels() else {
        bail!(InvalidArgument, "cannot subset classes of unlabeled dataset '{}'", source.name);
    };
    let keep: BTreeSet<usize> = keep.iter().copied().collect();
    if let Some(&bad) = keep.iter().find(|&&k| k >= source.num_classes) {
        bail!(InvalidArgument, "class {bad} not in '{}' ({} classes)", source.name, source.num_classes);
    }
    let remap: Vec<Option<usize>> = (0..source.num_classes).map(|c| keep.iter().position(|&k| k == c)).collect();
    let indices: Vec<usize> = (0..source.len()).filter(|&i| remap[labels[i]].is_some()).collect();
    let mut pixels = Vec::with_capacity(indices.len() * source.image_shape.pixels());
    for &i in &indices {
        pixels.extend_from_slice(source.image(i));
    }
    let new_labels = indices.iter().map(|&i| remap[labels[i]].expect("kept")).collect();
    let mut out = DatasetSpec::new(source.name.clone(), source.image_shape, keep.len(), pixels, Some(new_labels))?;
    if !source.class_names.is_empty() {
        out.class_names = keep.iter().map(|&k| source.class_names[k].clone()).collect();
    }
    Ok(out)
}

/// Keeps the first `counts[k]` samples of every class `k`; labels are unchanged.
pub fn take_per_class(source: &DatasetSpec, counts: &[usize]) -> Result<DatasetSpec> {
    let Some(labels) = source.labels() else {
        bail!(InvalidArgument, "cannot take per-class counts of unlabeled dataset '{}'", source.name);
    };
    if counts.len() != source.num_classes {
        bail!(InvalidArgument, "{} class counts given for {} classes", counts.len(), source.num_classes);
    }
    let mut taken = vec![0usize; counts.len()];
    let mut indices = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if taken[l] < counts[l] {
            taken[l] += 1;
            indices.push(i);
        }
    }
    if indices.is_empty() {
        bail!(InvalidArgument, "per-class counts leave '{}' empty", source.name);
    }
    source.select(&indices)
}

/// [`subset_classes`] by class name.
pub fn subset_classes_by_name(source: &DatasetSpec, names: &[&str]) -> Result<DatasetSpec> {
    let mut keep = Vec::with_capacity(names.len());
    for name in names {
        match source.class_names.iter().position(|n| n == name) {
            Some(i) => keep.push(i),
            None => bail!(InvalidArgument, "class '{name}' not in '{}'", source.name),
        }
    }
    subset_classes(source, &keep)
}

/// RGB → single channel with fixed luma weights.
pub fn to_grayscale(ds: &DatasetSpec) -> Result<DatasetSpec> {
    let s = ds.image_shape;
    if s.channels != 3 {
        bail!(InvalidArgument, "grayscale conversion needs 3 channels, '{}' has {}", ds.name, s.channels);
    }
    let pixels = ds
        .pixels
        .chunks_exact(3)
        .map(|rgb| (LUMA[0] * f64::from(rgb[0]) + LUMA[1] * f64::from(rgb[1]) + LUMA[2] * f64::from(rgb[2])) as f32)
        .collect();
    let mut out = DatasetSpec::new(
        ds.name.clone(),
        ImageShape::new(s.height, s.width, 1),
        ds.num_classes,
        pixels,
        ds.labels.clone(),
    )?;
    out.class_names = ds.class_names.clone();
    Ok(out)
}

/// Unlabeled images of i.i.d. uniform `[0, 1)` pixels.
pub fn make_noise_proxy(count: usize, image_shape: ImageShape, seed: u64) -> Result<DatasetSpec> {
    if count == 0 {
        bail!(InvalidArgument, "noise proxy needs at least one image");
    }
    let mut rng = SeedStreams::new(seed).stream("noise-proxy");
    let pixels = (0..count * image_shape.pixels()).map(|_| rng.uniform() as f32).collect();
    DatasetSpec::new("noise", image_shape, 0, pixels, None)
}

/// Indices of a stratified split: per class, `round(fraction · n)` samples
/// (at least one, and leaving at least one) go to the first part.
pub fn split_indices(ds: &DatasetSpec, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        bail!(InvalidArgument, "split fraction must be in (0, 1), got {fraction}");
    }
    let groups: Vec<Vec<usize>> = match ds.labels() {
        Some(labels) => {
            let mut g = vec![Vec::new(); ds.num_classes];
            for (i, &l) in labels.iter().enumerate() {
                g[l].push(i);
            }
            g.retain(|v| !v.is_empty());
            g
        }
        None => vec![ds.all_indices()],
    };
    let mut rng = SeedStreams::new(seed).stream("split");
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for mut group in groups {
        if group.len() < 2 {
            bail!(InvalidArgument, "a class of '{}' has fewer than 2 samples", ds.name);
        }
        rng.shuffle(&mut group);
        let n_first = libm::round(fraction * group.len() as f64).clamp(1.0, (group.len() - 1) as f64) as usize;
        first.extend_from_slice(&group[..n_first]);
        second.extend_from_slice(&group[n_first..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((first, second))
}

/// Stratified train/validation split.
pub fn split_train_val(ds: &DatasetSpec, fraction: f64, seed: u64) -> Result<(DatasetSpec, DatasetSpec)> {
    let (train, val) = split_indices(ds, fraction, seed)?;
    Ok((ds.select(&train)?, ds.select(&val)?))
}

/// Visual domain of a procedurally generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticStyle {
    /// Oriented gratings; class `k` of `K` has orientation `k·180°/K`.
    TrueStyle,
    /// Gratings with the same frequency, contrast and noise statistics but
    /// orientations halfway between the true classes.
    RelatedStyle,
    /// Bright Gaussian blobs on a dark background; class = blob count.
    UnrelatedStyle,
}

impl SyntheticStyle {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticStyle::TrueStyle => "true_style",
            SyntheticStyle::RelatedStyle => "related_style",
            SyntheticStyle::UnrelatedStyle => "unrelated_style",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "true_style" | "true" => Ok(SyntheticStyle::TrueStyle),
            "related_style" | "related" => Ok(SyntheticStyle::RelatedStyle),
            "unrelated_style" | "unrelated" => Ok(SyntheticStyle::UnrelatedStyle),
            other => bail!(Config, "unknown synthetic style '{other}'"),
        }
    }
}

/// Cycles per pixel of the synthetic gratings.
const GRATING_FREQUENCY: f64 = 0.2;
const GRATING_NOISE: f64 = 0.02;
const ORIENTATION_JITTER_DEG: f64 = 2.0;

/// Orientation (degrees) of a grating class.
pub fn grating_orientation(style: SyntheticStyle, class: usize, num_classes: usize) -> f64 {
    let step = 180.0 / num_classes as f64;
    match style {
        SyntheticStyle::RelatedStyle => (class as f64 + 0.5) * step,
        _ => class as f64 * step,
    }
}

fn grating(rng: &mut StreamRng, shape: ImageShape, orientation_deg: f64, out: &mut Vec<f32>) {
    let theta = (orientation_deg + ORIENTATION_JITTER_DEG * (2.0 * rng.uniform() - 1.0)) * PI / 180.0;
    let freq = GRATING_FREQUENCY * (0.9 + 0.2 * rng.uniform());
    let phase = 2.0 * PI * rng.uniform();
    let contrast = 0.6 + 0.4 * rng.uniform();
    let (cx, cy) = ((shape.width as f64 - 1.0) / 2.0, (shape.height as f64 - 1.0) / 2.0);
    let (c, s) = (libm::cos(theta), libm::sin(theta));
    let tint: Vec<f64> = (0..shape.channels).map(|_| 0.85 + 0.15 * rng.uniform()).collect();
    for y in 0..shape.height {
        for x in 0..shape.width {
            // orientation measured as the direction the stripes run
            let u = -(x as f64 - cx) * s + (y as f64 - cy) * c;
            let v = 0.5 + 0.5 * contrast * libm::sin(2.0 * PI * freq * u + phase);
            for t in &tint {
                let noisy = v * t + GRATING_NOISE * rng.normal();
                out.push(noisy.clamp(0.0, 1.0) as f32);
            }
        }
    }
}

fn blobs(rng: &mut StreamRng, shape: ImageShape, count: usize, out: &mut Vec<f32>) {
    let radius = 0.08 * shape.height as f64 + 0.5;
    let centers: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| (rng.uniform() * shape.width as f64, rng.uniform() * shape.height as f64, 0.6 + 0.4 * rng.uniform()))
        .collect();
    for y in 0..shape.height {
        for x in 0..shape.width {
            let mut v = 0.05;
            for &(bx, by, amp) in &centers {
                let d2 = (x as f64 - bx) * (x as f64 - bx) + (y as f64 - by) * (y as f64 - by);
                v += amp * libm::exp(-d2 / (2.0 * radius * radius));
            }
            for _ in 0..shape.channels {
                out.push((v + 0.03 * rng.normal()).clamp(0.0, 1.0) as f32);
            }
        }
    }
}

/// Procedurally generated labeled images, `per_class` per class, classes interleaved.
pub fn make_synthetic(
    num_classes: usize,
    per_class: usize,
    image_shape: ImageShape,
    style: SyntheticStyle,
    seed: u64,
) -> Result<DatasetSpec> {
    if num_classes < 2 {
        bail!(InvalidArgument, "synthetic dataset needs at least 2 classes");
    }
    if per_class == 0 || image_shape.pixels() == 0 {
        bail!(InvalidArgument, "synthetic dataset must be non-empty");
    }
    let mut rng = SeedStreams::new(seed).stream(style.name());
    let mut pixels = Vec::with_capacity(num_classes * per_class * image_shape.pixels());
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for _ in 0..per_class {
        for class in 0..num_classes {
            match style {
                SyntheticStyle::UnrelatedStyle => blobs(&mut rng, image_shape, class + 1, &mut pixels),
                _ => grating(&mut rng, image_shape, grating_orientation(style, class, num_classes), &mut pixels),
            }
            labels.push(class);
        }
    }
    let names = (0..num_classes)
        .map(|c| match style {
            SyntheticStyle::UnrelatedStyle => format!("blobs_{}", c + 1),
            _ => format!("orient_{:05.1}", grating_orientation(style, c, num_classes)),
        })
        .collect();
    DatasetSpec::new(style.name(), image_shape, num_classes, pixels, Some(labels))?.with_class_names(names)
}

/// Where proxy images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ProxySource {
    Dataset(DatasetSpec),
    Noise { count: usize, image_shape: ImageShape },
}

/// Declarative construction of a proxy dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyRecipe {
    pub source: ProxySource,
    pub class_filter: Option<Vec<usize>>,
    /// Samples kept per source class, applied before the class filter.
    pub class_counts: Option<Vec<usize>>,
    pub grayscale: bool,
    pub seed: u64,
}

impl ProxyRecipe {
    pub fn from_dataset(source: DatasetSpec, seed: u64) -> Self {
        Self { source: ProxySource::Dataset(source), class_filter: None, class_counts: None, grayscale: false, seed }
    }

    pub fn noise(count: usize, image_shape: ImageShape, seed: u64) -> Self {
        Self {
            source: ProxySource::Noise { count, image_shape },
            class_filter: None,
            class_counts: None,
            grayscale: false,
            seed,
        }
    }

    pub fn with_classes(mut self, classes: Vec<usize>) -> Self {
        self.class_filter = Some(classes);
        self
    }

    pub fn with_class_counts(mut self, counts: Vec<usize>) -> Self {
        self.class_counts = Some(counts);
        self
    }

    pub fn with_grayscale(mut self) -> Self {
        self.grayscale = true;
        self
    }

    /// `count` classes drawn from `pool`; the draw depends only on `(seed, sample_id)`.
    pub fn random_classes(
        source: DatasetSpec,
        pool: &[usize],
        count: usize,
        sample_id: u64,
        seed: u64,
    ) -> Result<Self> {
        if count == 0 || count > pool.len() {
            bail!(InvalidArgument, "cannot draw {count} classes from a pool of {}", pool.len());
        }
        let mut rng = SeedStreams::new(seed).stream(&format!("proxy-sample-{sample_id}"));
        let mut pool = pool.to_vec();
        rng.shuffle(&mut pool);
        pool.truncate(count);
        pool.sort_unstable();
        Ok(Self::from_dataset(source, seed).with_classes(pool))
    }

    pub fn build(&self) -> Result<DatasetSpec> {
        let mut ds = match &self.source {
            ProxySource::Noise { count, image_shape } => {
                if self.class_filter.is_some() || self.class_counts.is_some() {
                    bail!(InvalidArgument, "a noise proxy cannot have a class filter");
                }
                make_noise_proxy(*count, *image_shape, self.seed)?
            }
            ProxySource::Dataset(source) => {
                let counted = match &self.class_counts {
                    Some(counts) => take_per_class(source, counts)?,
                    None => source.clone(),
                };
                match &self.class_filter {
                    Some(keep) => subset_classes(&counted, keep)?,
                    None => counted,
                }
            }
        };
        if self.grayscale && ds.image_shape().channels != 1 {
            ds = to_grayscale(&ds)?;
        }
        Ok(ds)
    }
}
