//! Seeded randomness.
//!
//! A single root seed fans out into independent named streams (`"shuffle"`,
//! `"latent"`, `"init"`, ...). Each stream is a ChaCha8 generator keyed by the
//! root seed and positioned on its own ChaCha stream id, so drawing from one
//! stream never perturbs another.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Stable 64-bit FNV-1a hash, used to turn stream names into ChaCha stream ids.
pub fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Exact position of a named stream, enough to replay any draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedTrace {
    pub root: u64,
    pub stream: String,
    pub word_pos: u128,
}

impl SeedTrace {
    pub fn rng(&self) -> StreamRng {
        let mut rng = StreamRng::new(self.root, &self.stream);
        rng.inner.set_word_pos(self.word_pos);
        rng
    }
}

/// Root of all randomness for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    root: u64,
}

impl SeedStreams {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn stream(&self, name: &str) -> StreamRng {
        StreamRng::new(self.root, name)
    }

    /// A child root for a nested run, e.g. one repeat of a sweep.
    pub fn child_seed(&self, name: &str) -> u64 {
        self.stream(name).next_u64()
    }
}

/// A named random stream.
#[derive(Debug, Clone)]
pub struct StreamRng {
    root: u64,
    name: String,
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(root: u64, name: &str) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(root);
        inner.set_stream(stream_id(name));
        Self { root, name: name.into(), inner }
    }

    pub fn trace(&self) -> SeedTrace {
        SeedTrace { root: self.root, stream: self.name.clone(), word_pos: self.inner.get_word_pos() }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Latent distribution: independent standard normal coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentSpec {
    dim: usize,
}

impl LatentSpec {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            bail!(InvalidArgument, "latent dimension must be positive");
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// A batch of latent vectors plus the stream position it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub values: Tensor,
    pub seed_trace: SeedTrace,
}

/// Draws an `n × dim` matrix of i.i.d. standard normal values.
pub fn sample_latent(spec: LatentSpec, n: usize, rng: &mut StreamRng) -> Result<LatentBatch> {
    if n == 0 {
        bail!(InvalidArgument, "latent batch size must be positive");
    }
    let seed_trace = rng.trace();
    let values: Vec<f64> = (0..n * spec.dim).map(|_| rng.normal()).collect();
    let values = Tensor::from_vec(&[n, spec.dim], values)?;
    Ok(LatentBatch { values, seed_trace })
}

impl LatentBatch {
    /// Redraws the batch from its recorded trace.
    pub fn replay(&self) -> Result<LatentBatch> {
        let spec = LatentSpec::new(self.values.shape()[1])?;
        sample_latent(spec, self.values.batch(), &mut self.seed_trace.rng())
    }
}
