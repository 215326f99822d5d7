//! Minimal layer stack with explicit backward passes.
//!
//! Networks are plain sequences of [`Layer`]s. `forward` records a per-layer
//! cache, `backward` consumes it and returns the gradient with respect to the
//! network input while (optionally) accumulating parameter gradients.

mod conv;
mod layers;
mod optim;

use alloc::vec;
use alloc::vec::Vec;

pub use conv::{conv_out, conv_transpose_out, Conv2d, ConvTranspose2d};
pub use layers::{Activation, BatchNorm, Dense};
pub use optim::Adam;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// A parameter tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(len: usize) -> Self {
        Self { value: vec![0.0; len], grad: vec![0.0; len] }
    }
}

/// Whether a forward pass uses batch statistics (and updates running ones).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Train,
    /// Batch statistics without touching running statistics.
    Batch,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Cache {
    Input(Tensor),
    Output(Tensor),
    Cols { cols: Vec<f64>, geometry: conv::Geometry, n: usize },
    Transposed { input: Tensor, geometry: conv::Geometry },
    Norm { xhat: Tensor, inv_std: Vec<f64>, train: bool },
    Pool { argmax: Vec<usize>, input_shape: Vec<usize> },
    Shape(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv(Conv2d),
    ConvTranspose(ConvTranspose2d),
    BatchNorm(BatchNorm),
    Activation(Activation),
    MaxPool2,
    /// Flattens every item to a vector.
    Flatten,
    /// Reshapes every item to the given per-item shape.
    Reshape(Vec<usize>),
    CenterCrop(usize),
}

impl Layer {
    fn forward(&self, x: &Tensor, pass: Pass) -> Result<(Tensor, Cache, Option<(Vec<f64>, Vec<f64>)>)> {
        let (y, cache) = match self {
            Layer::Dense(l) => l.forward(x)?,
            Layer::Conv(l) => l.forward(x)?,
            Layer::ConvTranspose(l) => l.forward(x)?,
            Layer::BatchNorm(l) => return l.forward(x, pass != Pass::Eval),
            Layer::Activation(a) => a.forward(x),
            Layer::MaxPool2 => layers::max_pool_forward(x)?,
            Layer::Flatten => {
                let shape = [x.batch(), x.item_len()];
                (x.clone().reshape(&shape)?, Cache::Shape(x.shape().to_vec()))
            }
            Layer::Reshape(item) => {
                let mut shape = vec![x.batch()];
                shape.extend_from_slice(item);
                (x.clone().reshape(&shape)?, Cache::Shape(x.shape().to_vec()))
            }
            Layer::CenterCrop(size) => layers::center_crop_forward(x, *size)?,
        };
        Ok((y, cache, None))
    }

    fn backward(&mut self, cache: &Cache, gy: &Tensor, param_grads: bool) -> Result<Tensor> {
        match self {
            Layer::Dense(l) => l.backward(cache, gy, param_grads),
            Layer::Conv(l) => l.backward(cache, gy, param_grads),
            Layer::ConvTranspose(l) => l.backward(cache, gy, param_grads),
            Layer::BatchNorm(l) => l.backward(cache, gy, param_grads),
            Layer::Activation(a) => a.backward(cache, gy),
            Layer::MaxPool2 => layers::max_pool_backward(cache, gy),
            Layer::Flatten | Layer::Reshape(_) => match cache {
                Cache::Shape(shape) => gy.clone().reshape(shape),
                _ => bail!(Contract, "reshape backward without forward cache"),
            },
            Layer::CenterCrop(_) => layers::center_crop_backward(cache, gy),
        }
    }

    fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::ConvTranspose(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::ConvTranspose(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            _ => Vec::new(),
        }
    }
}

/// A sequential network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    layers: Vec<Layer>,
    caches: Vec<Option<Cache>>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        let caches = vec![None; layers.len()];
        Self { layers, caches }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Forward pass that records caches for [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let mut cur = x.clone();
        for i in 0..self.layers.len() {
            let (y, cache, stats) = self.layers[i].forward(&cur, pass)?;
            if let (Some((mean, var)), Layer::BatchNorm(bn), Pass::Train) = (stats, &mut self.layers[i], pass) {
                bn.update_running(&mean, &var);
            }
            self.caches[i] = Some(cache);
            cur = y;
        }
        Ok(cur)
    }

    /// Evaluation-mode forward pass; touches no state.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.infer_with(x, Pass::Eval)
    }

    /// Stateless forward pass; `Pass::Train` behaves like `Pass::Batch`.
    pub fn infer_with(&self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur, pass)?.0;
        }
        Ok(cur)
    }

    /// Back-propagates `gy` through the last forward pass and returns the input gradient.
    pub fn backward(&mut self, gy: &Tensor, param_grads: bool) -> Result<Tensor> {
        let mut g = gy.clone();
        for i in (0..self.layers.len()).rev() {
            let Some(cache) = self.caches[i].take() else {
                bail!(Contract, "backward called without a matching forward pass");
            };
            g = self.layers[i].backward(&cache, &g, param_grads)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            bail!(InvalidArgument, "expected {} parameters, got {}", self.param_count(), flat.len());
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.value.len();
            p.value.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Non-trainable state (batch-norm running statistics), flattened.
    pub fn flat_buffers(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Layer::BatchNorm(bn) = layer {
                out.extend_from_slice(&bn.running_mean);
                out.extend_from_slice(&bn.running_var);
            }
        }
        out
    }

    pub fn set_flat_buffers(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.flat_buffers().len();
        if flat.len() != expected {
            bail!(InvalidArgument, "expected {expected} buffer values, got {}", flat.len());
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            if let Layer::BatchNorm(bn) = layer {
                let c = bn.channels;
                bn.running_mean.copy_from_slice(&flat[offset..offset + c]);
                bn.running_var.copy_from_slice(&flat[offset + c..offset + 2 * c]);
                offset += 2 * c;
            }
        }
        Ok(())
    }
}
