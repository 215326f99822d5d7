//! Data-enriching GAN core: tensors, layers, losses, models, datasets and
//! training pipelines. `no_std` with `alloc`; the `std` feature only enables
//! std support in dependencies.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod arch;
pub mod config;
pub mod datasets;
pub mod distribution;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod math;
pub mod model;
pub mod nn;
pub mod pipelines;
pub mod rng;
pub mod tensor;

pub use arch::{
    build, build_classifier, build_discriminator, build_generator, range_adapter, ArchSpec, Family, InputStats,
    RangeAdapter, Scale,
};
pub use config::ExperimentConfig;
pub use datasets::{DatasetSpec, ImageShape, ProxyRecipe, ProxySource, SyntheticStyle};
pub use distribution::ClassDistribution;
pub use error::{Error, Result};
pub use losses::{GeneratorObjective, LossValue};
pub use model::{freeze, Mode, ModelHandle, ParamDigest};
pub use rng::{sample_latent, LatentBatch, LatentSpec, SeedStreams, SeedTrace, StreamRng};
pub use tensor::Tensor;
