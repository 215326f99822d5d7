//! Dense, normalization, activation and reshaping layers.

use alloc::vec;
use alloc::vec::Vec;

use super::{Cache, Param};
use crate::error::{bail, Result};
use crate::math::sigmoid;
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[inputs, outputs]`
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: Param::zeros(inputs * outputs), bias: Param::zeros(outputs) }
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        if x.item_len() != self.inputs {
            bail!(InvalidArgument, "dense layer expects {} inputs per item, got {:?}", self.inputs, x.shape());
        }
        let n = x.batch();
        let mut out = vec![0.0; n * self.outputs];
        for row in out.chunks_exact_mut(self.outputs) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(n, self.inputs, self.outputs, x.data(), false, &self.weight.value, false, &mut out, 1.0);
        Ok((Tensor::from_vec(&[n, self.outputs], out)?, Cache::Input(x.clone())))
    }

    pub(crate) fn backward(&mut self, cache: &Cache, gy: &Tensor, param_grads: bool) -> Result<Tensor> {
        let Cache::Input(x) = cache else {
            bail!(Contract, "dense backward without forward cache");
        };
        let n = x.batch();
        if param_grads {
            gemm(self.inputs, n, self.outputs, x.data(), true, gy.data(), false, &mut self.weight.grad, 1.0);
            for row in gy.data().chunks_exact(self.outputs) {
                for (g, v) in self.bias.grad.iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        let mut gx = vec![0.0; n * self.inputs];
        gemm(n, self.outputs, self.inputs, gy.data(), false, &self.weight.value, true, &mut gx, 0.0);
        Tensor::from_vec(x.shape(), gx)
    }
}

/// Batch normalization over every axis but the last (channel) one.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param { value: vec![1.0; channels], grad: vec![0.0; channels] },
            beta: Param::zeros(channels),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Returns the output, the cache, and (in training) the batch mean and unbiased variance.
    pub(crate) fn forward(&self, x: &Tensor, train: bool) -> Result<(Tensor, Cache, Option<(Vec<f64>, Vec<f64>)>)> {
        let c = self.channels;
        if x.shape().last() != Some(&c) {
            bail!(InvalidArgument, "batch norm over {c} channels got {:?}", x.shape());
        }
        let m = x.len() / c;
        let (mean, var, stats) = if train {
            if m < 2 {
                bail!(InvalidArgument, "batch norm in training needs at least two values per channel");
            }
            let mut mean = vec![0.0; c];
            for row in x.data().chunks_exact(c) {
                for (a, v) in mean.iter_mut().zip(row) {
                    *a += v;
                }
            }
            mean.iter_mut().for_each(|a| *a /= m as f64);
            let mut var = vec![0.0; c];
            for row in x.data().chunks_exact(c) {
                for ((a, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                    *a += (v - mu) * (v - mu);
                }
            }
            var.iter_mut().for_each(|a| *a /= m as f64);
            let unbiased = var.iter().map(|v| v * m as f64 / (m - 1) as f64).collect();
            (mean.clone(), var, Some((mean, unbiased)))
        } else {
            (self.running_mean.clone(), self.running_var.clone(), None)
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + self.eps)).collect();
        let mut xhat = x.data().to_vec();
        let mut out = vec![0.0; x.len()];
        for (xr, or) in xhat.chunks_exact_mut(c).zip(out.chunks_exact_mut(c)) {
            for j in 0..c {
                xr[j] = (xr[j] - mean[j]) * inv_std[j];
                or[j] = self.gamma.value[j] * xr[j] + self.beta.value[j];
            }
        }
        let out = Tensor::from_vec(x.shape(), out)?;
        let xhat = Tensor::from_vec(x.shape(), xhat)?;
        Ok((out, Cache::Norm { xhat, inv_std, train }, stats))
    }

    pub(crate) fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let mo = self.momentum;
        for j in 0..self.channels {
            self.running_mean[j] = (1.0 - mo) * self.running_mean[j] + mo * mean[j];
            self.running_var[j] = (1.0 - mo) * self.running_var[j] + mo * var[j];
        }
    }

    pub(crate) fn backward(&mut self, cache: &Cache, gy: &Tensor, param_grads: bool) -> Result<Tensor> {
        let Cache::Norm { xhat, inv_std, train } = cache else {
            bail!(Contract, "batch norm backward without forward cache");
        };
        let c = self.channels;
        let m = (xhat.len() / c) as f64;
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (g, xh) in gy.data().chunks_exact(c).zip(xhat.data().chunks_exact(c)) {
            for j in 0..c {
                sum_g[j] += g[j];
                sum_gx[j] += g[j] * xh[j];
            }
        }
        if param_grads {
            for j in 0..c {
                self.beta.grad[j] += sum_g[j];
                self.gamma.grad[j] += sum_gx[j];
            }
        }
        let mut gx = vec![0.0; gy.len()];
        for ((o, g), xh) in gx.chunks_exact_mut(c).zip(gy.data().chunks_exact(c)).zip(xhat.data().chunks_exact(c)) {
            for j in 0..c {
                let scale = self.gamma.value[j] * inv_std[j];
                o[j] = if *train { scale * (g[j] - sum_g[j] / m - xh[j] * sum_gx[j] / m) } else { scale * g[j] };
            }
        }
        Tensor::from_vec(gy.shape(), gx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub(crate) fn forward(&self, x: &Tensor) -> (Tensor, Cache) {
        match *self {
            Activation::Relu => (x.map(|v| v.max(0.0)), Cache::Input(x.clone())),
            Activation::LeakyRelu(a) => (x.map(|v| if v > 0.0 { v } else { a * v }), Cache::Input(x.clone())),
            Activation::Tanh => {
                let y = x.map(libm::tanh);
                (y.clone(), Cache::Output(y))
            }
            Activation::Sigmoid => {
                let y = x.map(sigmoid);
                (y.clone(), Cache::Output(y))
            }
        }
    }

    pub(crate) fn backward(&self, cache: &Cache, gy: &Tensor) -> Result<Tensor> {
        let (src, f): (&Tensor, fn(f64, f64, f64) -> f64) = match (*self, cache) {
            (Activation::Relu, Cache::Input(x)) => (x, |x, g, _| if x > 0.0 { g } else { 0.0 }),
            (Activation::LeakyRelu(_), Cache::Input(x)) => (x, |x, g, a| if x > 0.0 { g } else { a * g }),
            (Activation::Tanh, Cache::Output(y)) => (y, |y, g, _| g * (1.0 - y * y)),
            (Activation::Sigmoid, Cache::Output(y)) => (y, |y, g, _| g * y * (1.0 - y)),
            _ => bail!(Contract, "activation backward without forward cache"),
        };
        let slope = if let Activation::LeakyRelu(a) = *self { a } else { 0.0 };
        let data = src.data().iter().zip(gy.data()).map(|(&s, &g)| f(s, g, slope)).collect();
        Tensor::from_vec(gy.shape(), data)
    }
}

/// 2×2 max pooling with stride 2 (odd trailing rows/columns are dropped).
pub(crate) fn max_pool_forward(x: &Tensor) -> Result<(Tensor, Cache)> {
    let &[n, h, w, c] = x.shape() else {
        bail!(InvalidArgument, "max pool expects NHWC input, got {:?}", x.shape());
    };
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        bail!(InvalidArgument, "max pool input {h}×{w} too small");
    }
    let mut out = vec![0.0; n * oh * ow * c];
    let mut argmax = vec![0usize; out.len()];
    let xd = x.data();
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if xd[i] > best {
                            best = xd[i];
                            best_i = i;
                        }
                    }
                    let o = ((b * oh + oy) * ow + ox) * c + ch;
                    out[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[n, oh, ow, c], out)?, Cache::Pool { argmax, input_shape: x.shape().to_vec() }))
}

pub(crate) fn max_pool_backward(cache: &Cache, gy: &Tensor) -> Result<Tensor> {
    let Cache::Pool { argmax, input_shape } = cache else {
        bail!(Contract, "max pool backward without forward cache");
    };
    let mut gx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(gy.data()) {
        gx.data_mut()[i] += g;
    }
    Ok(gx)
}

/// Center crop of an NHWC batch to `size × size`.
pub(crate) fn center_crop_forward(x: &Tensor, size: usize) -> Result<(Tensor, Cache)> {
    let &[n, h, w, c] = x.shape() else {
        bail!(InvalidArgument, "crop expects NHWC input, got {:?}", x.shape());
    };
    if size > h || size > w {
        bail!(InvalidArgument, "cannot crop {h}×{w} to {size}×{size}");
    }
    let (top, left) = ((h - size) / 2, (w - size) / 2);
    let mut out = Vec::with_capacity(n * size * size * c);
    for b in 0..n {
        for y in 0..size {
            let start = ((b * h + top + y) * w + left) * c;
            out.extend_from_slice(&x.data()[start..start + size * c]);
        }
    }
    Ok((Tensor::from_vec(&[n, size, size, c], out)?, Cache::Shape(x.shape().to_vec())))
}

pub(crate) fn center_crop_backward(cache: &Cache, gy: &Tensor) -> Result<Tensor> {
    let Cache::Shape(shape) = cache else {
        bail!(Contract, "crop backward without forward cache");
    };
    let &[n, h, w, c] = shape.as_slice() else {
        bail!(Contract, "crop cache holds a non-image shape");
    };
    let size = gy.shape()[1];
    let (top, left) = ((h - size) / 2, (w - size) / 2);
    let mut gx = Tensor::zeros(shape);
    for b in 0..n {
        for y in 0..size {
            let dst = ((b * h + top + y) * w + left) * c;
            let src = ((b * size + y) * size) * c;
            gx.data_mut()[dst..dst + size * c].copy_from_slice(&gy.data()[src..src + size * c]);
        }
    }
    Ok(gx)
}
