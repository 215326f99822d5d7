//! Network factories for the generator, discriminator and classifier families.
//!
//! Each factory first lays out a [`Blueprint`] (cheap, no parameter storage) so
//! parameter counts can be computed for any width before anything is allocated.
//! `width_multiplier` is a capacity multiplier: channel widths are scaled by the
//! common factor whose parameter count lands closest to
//! `width_multiplier × reference count`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::datasets::ImageShape;
use crate::error::{bail, Error, Result};
use crate::model::ModelHandle;
use crate::nn::{conv_out, Activation, BatchNorm, Conv2d, ConvTranspose2d, Dense, Layer, Network};
use crate::rng::StreamRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    DcganGenerator,
    DcganDiscriminator,
    ConvClassifier,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::DcganGenerator => "dcgan_generator",
            Family::DcganDiscriminator => "dcgan_discriminator",
            Family::ConvClassifier => "conv_classifier",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dcgan_generator" => Ok(Family::DcganGenerator),
            "dcgan_discriminator" => Ok(Family::DcganDiscriminator),
            "conv_classifier" => Ok(Family::ConvClassifier),
            other => bail!(Config, "unknown model family '{other}'"),
        }
    }
}

/// Reference widths: `Desk` trains in minutes on a CPU, `Full` follows the
/// DCGAN reference widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    pub fn name(&self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => bail!(Config, "unknown scale '{other}'"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchSpec {
    pub family: Family,
    pub width_multiplier: f64,
    pub image_shape: ImageShape,
    /// Classifiers only.
    pub num_classes: usize,
    /// Generators only.
    pub latent_dim: usize,
    pub scale: Scale,
}

impl ArchSpec {
    pub fn generator(image_shape: ImageShape, latent_dim: usize) -> Self {
        Self {
            family: Family::DcganGenerator,
            width_multiplier: 1.0,
            image_shape,
            num_classes: 0,
            latent_dim,
            scale: Scale::Desk,
        }
    }

    pub fn discriminator(image_shape: ImageShape) -> Self {
        Self { family: Family::DcganDiscriminator, ..Self::generator(image_shape, 0) }
    }

    pub fn classifier(image_shape: ImageShape, num_classes: usize) -> Self {
        Self { family: Family::ConvClassifier, num_classes, ..Self::generator(image_shape, 0) }
    }

    pub fn with_width(mut self, width_multiplier: f64) -> Self {
        self.width_multiplier = width_multiplier;
        self
    }

    pub fn with_scale(mut self, scale: Scale) -> Self {
        self.scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            bail!(Config, "width multiplier must be positive, got {}", self.width_multiplier);
        }
        let s = self.image_shape;
        if s.height == 0 || s.width == 0 || s.channels == 0 {
            bail!(Config, "empty image shape {s}");
        }
        match self.family {
            Family::DcganGenerator if self.latent_dim == 0 => {
                bail!(Config, "generator needs latent_dim > 0")
            }
            Family::ConvClassifier if self.num_classes < 2 => {
                bail!(Config, "classifier needs at least 2 classes, got {}", self.num_classes)
            }
            _ => Ok(()),
        }
    }

    /// Parameter count of the model this spec builds.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self.blueprint()?.param_count())
    }

    fn blueprint(&self) -> Result<Blueprint> {
        self.validate()?;
        let reference = reference_widths(self)?;
        let base = layout(self, &reference)?;
        if self.width_multiplier == 1.0 {
            return Ok(base);
        }
        let target = self.width_multiplier * base.param_count() as f64;
        let mut best: Option<(f64, Blueprint)> = None;
        for j in 1..=1024 {
            let factor = j as f64 / 256.0;
            let widths: Vec<usize> =
                reference.iter().map(|&w| (libm::round(w as f64 * factor) as usize).max(1)).collect();
            let bp = layout(self, &widths)?;
            let err = (bp.param_count() as f64 - target).abs();
            if best.as_ref().is_none_or(|(e, _)| err < *e) {
                best = Some((err, bp));
            }
        }
        Ok(best.expect("non-empty search").1)
    }
}

/// Generated side for a requested image side: the smallest `4·2^j ≥ side`.
/// Smaller images are center-cropped out of it.
pub fn generated_side(shape: ImageShape) -> Result<usize> {
    if shape.height != shape.width {
        bail!(Config, "image shape {shape} is not square");
    }
    let side = shape.height;
    let mut g = 8;
    while g < side {
        g *= 2;
    }
    if g > 256 || (g != side && (!(g - side).is_multiple_of(2) || side * 2 <= g)) {
        bail!(Config, "image side {side} is not reachable by the upsampling stack");
    }
    Ok(g)
}

fn reference_widths(spec: &ArchSpec) -> Result<Vec<usize>> {
    let g = generated_side(spec.image_shape)?;
    let upsamples = (g / 4).trailing_zeros() as usize;
    let base = match spec.scale {
        Scale::Desk => 16,
        Scale::Full => 64,
    };
    Ok(match spec.family {
        Family::DcganGenerator => (0..upsamples).map(|i| base << (upsamples - 1 - i)).collect(),
        Family::DcganDiscriminator => (0..upsamples).map(|i| base << i).collect(),
        Family::ConvClassifier => match spec.scale {
            Scale::Desk => vec![8, 16],
            Scale::Full => vec![64, 128],
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// N(0, 0.02) weights, N(1, 0.02) batch-norm scales.
    Dcgan,
    /// N(0, 2 / fan_in).
    He,
    /// N(0, 1 / fan_in).
    Lecun,
}

#[derive(Debug, Clone, PartialEq)]
enum Plan {
    Conv { cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool, init: Init },
    ConvT { cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool },
    Dense { inputs: usize, outputs: usize, init: Init },
    Norm(usize),
    Act(Activation),
    Pool,
    Flatten,
    Reshape(Vec<usize>),
    Crop(usize),
}

#[derive(Debug, Clone, PartialEq)]
struct Blueprint(Vec<Plan>);

impl Blueprint {
    fn param_count(&self) -> usize {
        self.0
            .iter()
            .map(|p| match *p {
                Plan::Conv { cin, cout, k, bias, .. } | Plan::ConvT { cin, cout, k, bias, .. } => {
                    k * k * cin * cout + if bias { cout } else { 0 }
                }
                Plan::Dense { inputs, outputs, .. } => inputs * outputs + outputs,
                Plan::Norm(c) => 2 * c,
                _ => 0,
            })
            .sum()
    }

    fn instantiate(&self, rng: &mut StreamRng) -> Network {
        let mut normal =
            |len: usize, std: f64, mean: f64| -> Vec<f64> { (0..len).map(|_| mean + std * rng.normal()).collect() };
        let layers = self
            .0
            .iter()
            .map(|p| match *p {
                Plan::Conv { cin, cout, k, stride, pad, bias, init } => {
                    let mut l = Conv2d::new(cin, cout, k, stride, pad);
                    let std = init_std(init, k * k * cin);
                    l.weight.value = normal(l.weight.value.len(), std, 0.0);
                    if !bias {
                        l.bias = crate::nn::Param::zeros(0);
                    }
                    Layer::Conv(l)
                }
                Plan::ConvT { cin, cout, k, stride, pad, bias } => {
                    let mut l = ConvTranspose2d::new(cin, cout, k, stride, pad);
                    l.weight.value = normal(l.weight.value.len(), 0.02, 0.0);
                    if !bias {
                        l.bias = crate::nn::Param::zeros(0);
                    }
                    Layer::ConvTranspose(l)
                }
                Plan::Dense { inputs, outputs, init } => {
                    let mut l = Dense::new(inputs, outputs);
                    l.weight.value = normal(l.weight.value.len(), init_std(init, inputs), 0.0);
                    Layer::Dense(l)
                }
                Plan::Norm(c) => {
                    let mut l = BatchNorm::new(c);
                    l.gamma.value = normal(c, 0.02, 1.0);
                    Layer::BatchNorm(l)
                }
                Plan::Act(a) => Layer::Activation(a),
                Plan::Pool => Layer::MaxPool2,
                Plan::Flatten => Layer::Flatten,
                Plan::Reshape(ref s) => Layer::Reshape(s.clone()),
                Plan::Crop(s) => Layer::CenterCrop(s),
            })
            .collect();
        Network::new(layers)
    }
}

fn init_std(init: Init, fan_in: usize) -> f64 {
    match init {
        Init::Dcgan => 0.02,
        Init::He => libm::sqrt(2.0 / fan_in as f64),
        Init::Lecun => libm::sqrt(1.0 / fan_in as f64),
    }
}

fn layout(spec: &ArchSpec, widths: &[usize]) -> Result<Blueprint> {
    let shape = spec.image_shape;
    let g = generated_side(shape)?;
    let mut plan = Vec::new();
    match spec.family {
        Family::DcganGenerator => {
            plan.push(Plan::Reshape(vec![1, 1, spec.latent_dim]));
            let mut cin = spec.latent_dim;
            for (i, &w) in widths.iter().enumerate() {
                let (stride, pad) = if i == 0 { (1, 0) } else { (2, 1) };
                plan.push(Plan::ConvT { cin, cout: w, k: 4, stride, pad, bias: false });
                plan.push(Plan::Norm(w));
                plan.push(Plan::Act(Activation::Relu));
                cin = w;
            }
            plan.push(Plan::ConvT { cin, cout: shape.channels, k: 4, stride: 2, pad: 1, bias: true });
            plan.push(Plan::Act(Activation::Tanh));
            if g != shape.height {
                plan.push(Plan::Crop(shape.height));
            }
        }
        Family::DcganDiscriminator => {
            let mut cin = shape.channels;
            let mut side = shape.height;
            for (i, &w) in widths.iter().enumerate() {
                let first = i == 0;
                plan.push(Plan::Conv { cin, cout: w, k: 4, stride: 2, pad: 1, bias: first, init: Init::Dcgan });
                if !first {
                    plan.push(Plan::Norm(w));
                }
                plan.push(Plan::Act(Activation::LeakyRelu(0.2)));
                side = conv_out(side, 4, 2, 1).ok_or_else(|| Error::Config("discriminator input too small".into()))?;
                cin = w;
            }
            plan.push(Plan::Flatten);
            plan.push(Plan::Dense { inputs: side * side * cin, outputs: 1, init: Init::Dcgan });
            plan.push(Plan::Act(Activation::Sigmoid));
        }
        Family::ConvClassifier => {
            let mut cin = shape.channels;
            let mut side = shape.height;
            for &w in widths {
                plan.push(Plan::Conv { cin, cout: w, k: 3, stride: 1, pad: 1, bias: true, init: Init::He });
                plan.push(Plan::Act(Activation::Relu));
                plan.push(Plan::Pool);
                side /= 2;
                cin = w;
            }
            if side == 0 {
                bail!(Config, "classifier input {shape} too small");
            }
            plan.push(Plan::Flatten);
            plan.push(Plan::Dense { inputs: side * side * cin, outputs: spec.num_classes, init: Init::Lecun });
        }
    }
    Ok(Blueprint(plan))
}

fn build_family(spec: &ArchSpec, family: Family, rng: &mut StreamRng) -> Result<ModelHandle> {
    if spec.family != family {
        bail!(Config, "expected a {} spec, got {}", family.name(), spec.family.name());
    }
    let net = spec.blueprint()?.instantiate(rng);
    Ok(ModelHandle::new(*spec, net, InputStats::SYMMETRIC))
}

/// Latent batch (N × latent_dim) → images in `[-1, 1]`.
pub fn build_generator(spec: &ArchSpec, rng: &mut StreamRng) -> Result<ModelHandle> {
    build_family(spec, Family::DcganGenerator, rng)
}

/// Images → N × 1 probabilities in `(0, 1)`.
pub fn build_discriminator(spec: &ArchSpec, rng: &mut StreamRng) -> Result<ModelHandle> {
    build_family(spec, Family::DcganDiscriminator, rng)
}

/// Images → N × K logits.
pub fn build_classifier(spec: &ArchSpec, rng: &mut StreamRng) -> Result<ModelHandle> {
    build_family(spec, Family::ConvClassifier, rng)
}

pub fn build(spec: &ArchSpec, rng: &mut StreamRng) -> Result<ModelHandle> {
    build_family(spec, spec.family, rng)
}

/// Copy of a classifier whose output layer is widened to `total_classes`.
/// Existing class columns are kept; new ones get the output layer's
/// initialization and zero bias.
pub fn expand_head(model: &ModelHandle, total_classes: usize, rng: &mut StreamRng) -> Result<ModelHandle> {
    let arch = *model.arch();
    if arch.family != Family::ConvClassifier {
        bail!(Config, "only classifiers have a class head, got {}", arch.family.name());
    }
    if total_classes <= arch.num_classes {
        bail!(InvalidArgument, "head of {} classes cannot grow to {total_classes}", arch.num_classes);
    }
    let mut out = model.thawed_copy();
    let Some(Layer::Dense(head)) = out.network_mut()?.layers_mut().last_mut() else {
        bail!(Invariant, "classifier does not end in a dense layer");
    };
    let (inputs, old) = (head.inputs, head.outputs);
    let std = init_std(Init::Lecun, inputs);
    let mut wide = Dense::new(inputs, total_classes);
    for i in 0..inputs {
        for j in 0..total_classes {
            wide.weight.value[i * total_classes + j] =
                if j < old { head.weight.value[i * old + j] } else { std * rng.normal() };
        }
    }
    wide.bias.value[..old].copy_from_slice(&head.bias.value);
    *head = wide;
    out.set_arch(ArchSpec { num_classes: total_classes, ..arch });
    Ok(out)
}

/// Input normalization a classifier was trained with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputStats {
    /// Values spread linearly over `[lo, hi]`.
    Range { lo: f64, hi: f64 },
    /// `(x01 - mean) / std` where `x01` is the image in `[0, 1]`.
    MeanStd { mean: f64, std: f64 },
}

impl InputStats {
    pub const SYMMETRIC: InputStats = InputStats::Range { lo: -1.0, hi: 1.0 };
    pub const UNIT: InputStats = InputStats::Range { lo: 0.0, hi: 1.0 };

    pub fn describe(&self) -> String {
        match *self {
            InputStats::Range { lo, hi } => alloc::format!("range:{lo}:{hi}"),
            InputStats::MeanStd { mean, std } => alloc::format!("meanstd:{mean}:{std}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |v: &str| v.parse::<f64>().map_err(|_| Error::Config(alloc::format!("bad number '{v}' in '{s}'")));
        match parts.as_slice() {
            ["range", lo, hi] => Ok(InputStats::Range { lo: num(lo)?, hi: num(hi)? }),
            ["meanstd", m, sd] => Ok(InputStats::MeanStd { mean: num(m)?, std: num(sd)? }),
            _ => bail!(Config, "cannot parse input stats '{s}'"),
        }
    }
}

/// Affine map `y = scale·x + shift` from generator output range `[-1, 1]` to a
/// classifier's input statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeAdapter {
    pub scale: f64,
    pub shift: f64,
}

impl RangeAdapter {
    pub fn new(target: InputStats) -> Self {
        match target {
            InputStats::Range { lo, hi } => Self { scale: (hi - lo) / 2.0, shift: (hi + lo) / 2.0 },
            InputStats::MeanStd { mean, std } => Self { scale: 0.5 / std, shift: (0.5 - mean) / std },
        }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.shift == 0.0
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        if self.is_identity() {
            return x.clone();
        }
        x.map(|v| self.scale * v + self.shift)
    }

    pub fn inverse(&self, y: &Tensor) -> Tensor {
        if self.is_identity() {
            return y.clone();
        }
        y.map(|v| (v - self.shift) / self.scale)
    }

    /// Gradient with respect to the adapter input.
    pub fn backward(&self, gy: &Tensor) -> Tensor {
        if self.scale == 1.0 {
            return gy.clone();
        }
        gy.map(|g| g * self.scale)
    }

    pub fn describe(&self) -> String {
        alloc::format!("scale={} shift={}", self.scale, self.shift)
    }
}

/// Maps a generated batch in `[-1, 1]` to the classifier's expected input.
pub fn range_adapter(generated: &Tensor, target: InputStats) -> Tensor {
    RangeAdapter::new(target).apply(generated)
}
