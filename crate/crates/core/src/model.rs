//! Parameterized models with a trainable/frozen mode.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest, Sha256};

use crate::arch::{ArchSpec, InputStats};
use crate::error::{bail, Error, Result};
use crate::nn::{Adam, Network, Pass};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Trainable,
    Frozen,
}

/// SHA-256 over the little-endian bytes of every trainable parameter.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamDigest(pub [u8; 32]);

impl ParamDigest {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut h = Sha256::new();
        for v in values {
            h.update(v.to_le_bytes());
        }
        Self(h.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        use core::fmt::Write;
        let mut s = String::with_capacity(64);
        for b in self.0 {
            let _ = write!(s, "{b:02x}");
        }
        s
    }
}

impl fmt::Display for ParamDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ParamDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParamDigest({})", &self.to_hex()[..16])
    }
}

/// A generator, discriminator or classifier together with its architecture record.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHandle {
    arch: ArchSpec,
    net: Network,
    mode: Mode,
    input_stats: InputStats,
}

impl ModelHandle {
    pub(crate) fn new(arch: ArchSpec, net: Network, input_stats: InputStats) -> Self {
        Self { arch, net, mode: Mode::Trainable, input_stats }
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_frozen(&self) -> bool {
        self.mode == Mode::Frozen
    }

    /// Input normalization a classifier expects, or the output range of a generator.
    pub fn input_stats(&self) -> InputStats {
        self.input_stats
    }

    pub fn freeze(mut self) -> Self {
        self.mode = Mode::Frozen;
        self
    }

    /// A trainable copy, e.g. a student initialised from a teacher.
    pub fn thawed_copy(&self) -> Self {
        let mut m = self.clone();
        m.mode = Mode::Trainable;
        m
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn param_digest(&self) -> ParamDigest {
        ParamDigest::of(self.net.params().iter().flat_map(|p| p.value.iter().copied()))
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.net.flat_params()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.net.flat_grads()
    }

    pub fn flat_buffers(&self) -> Vec<f64> {
        self.net.flat_buffers()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        self.ensure_trainable("set parameters")?;
        self.net.set_flat_params(flat)
    }

    pub fn set_flat_buffers(&mut self, flat: &[f64]) -> Result<()> {
        self.ensure_trainable("set buffers")?;
        self.net.set_flat_buffers(flat)
    }

    /// Forward pass that records what `backward` needs. Frozen models always
    /// run in evaluation mode so their state never changes.
    pub fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let pass = if self.is_frozen() { Pass::Eval } else { pass };
        self.net.forward(x, pass)
    }

    /// Stateless evaluation-mode forward pass.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.net.infer(x)
    }

    /// Stateless forward pass normalizing with batch statistics.
    pub fn infer_batch_stats(&self, x: &Tensor) -> Result<Tensor> {
        self.net.infer_with(x, Pass::Batch)
    }

    /// Input gradient of the last forward pass. Parameter gradients are only
    /// accumulated for trainable models.
    pub fn backward(&mut self, gy: &Tensor) -> Result<Tensor> {
        let param_grads = !self.is_frozen();
        self.net.backward(gy, param_grads)
    }

    /// Input gradient of the last forward pass, leaving parameter gradients untouched.
    pub fn backward_input(&mut self, gy: &Tensor) -> Result<Tensor> {
        self.net.backward(gy, false)
    }

    pub fn zero_grad(&mut self) {
        self.net.zero_grad();
    }

    /// Mutable access to the layers, e.g. to widen a classifier head.
    pub(crate) fn network_mut(&mut self) -> Result<&mut Network> {
        self.ensure_trainable("modify layers")?;
        Ok(&mut self.net)
    }

    pub(crate) fn set_arch(&mut self, arch: ArchSpec) {
        self.arch = arch;
    }

    fn ensure_trainable(&self, what: &str) -> Result<()> {
        if self.is_frozen() {
            return Err(Error::Frozen(alloc::format!("cannot {what} on a frozen {}", self.arch.family.name())));
        }
        Ok(())
    }
}

/// Rebuilds a model from its architecture record and saved state.
pub fn restore(
    arch: &ArchSpec,
    params: &[f64],
    buffers: &[f64],
    input_stats: InputStats,
    mode: Mode,
) -> Result<ModelHandle> {
    let mut model = crate::arch::build(arch, &mut crate::rng::StreamRng::new(0, "restore"))?;
    model.set_flat_params(params)?;
    model.set_flat_buffers(buffers)?;
    model.input_stats = input_stats;
    model.mode = mode;
    Ok(model)
}

/// Returns the model in frozen mode.
pub fn freeze(model: ModelHandle) -> ModelHandle {
    model.freeze()
}

impl Adam {
    /// One optimizer update from the model's accumulated gradients.
    pub fn step(&mut self, model: &mut ModelHandle) -> Result<()> {
        if model.is_frozen() {
            bail!(Frozen, "optimizer step rejected for frozen {}", model.arch.family.name());
        }
        self.apply(&mut model.net);
        Ok(())
    }
}
