//! Strided 2-D convolution and its transpose over NHWC batches, lowered to GEMM
//! through im2col/col2im.

use alloc::vec;
use alloc::vec::Vec;

use super::{Cache, Param};
use crate::error::{bail, Result};
use crate::tensor::{gemm, Tensor};

/// Geometry of a convolution taking a `h × w × c` image to an `oh × ow` grid of patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.k * self.k * self.c
    }
}

/// Output side of a convolution, or `None` when the kernel does not fit.
pub fn conv_out(side: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = side + 2 * pad;
    if padded < k {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

/// Output side of a transposed convolution.
pub fn conv_transpose_out(side: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    side.checked_sub(1).and_then(|s| (s * stride + k).checked_sub(2 * pad)).filter(|&s| s > 0)
}

pub(crate) fn im2col(g: &Geometry, n: usize, x: &[f64]) -> Vec<f64> {
    let plen = g.patch_len();
    let mut cols = vec![0.0; n * g.oh * g.ow * plen];
    for b in 0..n {
        let img = &x[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((b * g.oh + oy) * g.ow + ox) * plen;
                for ky in 0..g.k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.k {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = (iy as usize * g.w + ix as usize) * g.c;
                        let dst = row + (ky * g.k + kx) * g.c;
                        cols[dst..dst + g.c].copy_from_slice(&img[src..src + g.c]);
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im(g: &Geometry, n: usize, cols: &[f64]) -> Vec<f64> {
    let plen = g.patch_len();
    let mut x = vec![0.0; n * g.h * g.w * g.c];
    for b in 0..n {
        let img = &mut x[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((b * g.oh + oy) * g.ow + ox) * plen;
                for ky in 0..g.k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.k {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = (iy as usize * g.w + ix as usize) * g.c;
                        let src = row + (ky * g.k + kx) * g.c;
                        for (d, s) in img[dst..dst + g.c].iter_mut().zip(&cols[src..src + g.c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    x
}

fn image_dims(x: &Tensor, channels: usize) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [n, h, w, c] if c == channels => Ok((n, h, w)),
        _ => bail!(InvalidArgument, "expected NHWC batch with {channels} channels, got {:?}", x.shape()),
    }
}

fn add_bias(out: &mut [f64], bias: &[f64]) {
    if bias.is_empty() {
        return;
    }
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn accumulate_bias_grad(grad: &mut [f64], gy: &[f64]) {
    if grad.is_empty() {
        return;
    }
    for row in gy.chunks_exact(grad.len()) {
        for (g, v) in grad.iter_mut().zip(row) {
            *g += v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[k·k·in, out]`, rows ordered (ky, kx, in-channel).
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weight: Param::zeros(kernel * kernel * in_channels * out_channels),
            bias: Param::zeros(out_channels),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        let (n, h, w) = image_dims(x, self.in_channels)?;
        let (Some(oh), Some(ow)) =
            (conv_out(h, self.kernel, self.stride, self.pad), conv_out(w, self.kernel, self.stride, self.pad))
        else {
            bail!(InvalidArgument, "kernel {} does not fit a {h}×{w} input", self.kernel);
        };
        let g = Geometry { h, w, c: self.in_channels, k: self.kernel, stride: self.stride, pad: self.pad, oh, ow };
        let cols = im2col(&g, n, x.data());
        let rows = n * oh * ow;
        let mut out = vec![0.0; rows * self.out_channels];
        gemm(rows, g.patch_len(), self.out_channels, &cols, false, &self.weight.value, false, &mut out, 0.0);
        add_bias(&mut out, &self.bias.value);
        Ok((Tensor::from_vec(&[n, oh, ow, self.out_channels], out)?, Cache::Cols { cols, geometry: g, n }))
    }

    pub(crate) fn backward(&mut self, cache: &Cache, gy: &Tensor, param_grads: bool) -> Result<Tensor> {
        let Cache::Cols { cols, geometry: g, n } = cache else {
            bail!(Contract, "conv backward without forward cache");
        };
        let rows = n * g.oh * g.ow;
        let plen = g.patch_len();
        if param_grads {
            gemm(plen, rows, self.out_channels, cols, true, gy.data(), false, &mut self.weight.grad, 1.0);
            accumulate_bias_grad(&mut self.bias.grad, gy.data());
        }
        let mut gcols = vec![0.0; rows * plen];
        gemm(rows, self.out_channels, plen, gy.data(), false, &self.weight.value, true, &mut gcols, 0.0);
        Tensor::from_vec(&[*n, g.h, g.w, g.c], col2im(g, *n, &gcols))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[in, k·k·out]`, columns ordered (ky, kx, out-channel).
    pub weight: Param,
    pub bias: Param,
}

impl ConvTranspose2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weight: Param::zeros(kernel * kernel * in_channels * out_channels),
            bias: Param::zeros(out_channels),
        }
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        let (n, ih, iw) = image_dims(x, self.in_channels)?;
        let (Some(h), Some(w)) = (
            conv_transpose_out(ih, self.kernel, self.stride, self.pad),
            conv_transpose_out(iw, self.kernel, self.stride, self.pad),
        ) else {
            bail!(InvalidArgument, "transposed conv produces an empty image from {ih}×{iw}");
        };
        let g =
            Geometry { h, w, c: self.out_channels, k: self.kernel, stride: self.stride, pad: self.pad, oh: ih, ow: iw };
        let rows = n * ih * iw;
        let plen = g.patch_len();
        let mut cols = vec![0.0; rows * plen];
        gemm(rows, self.in_channels, plen, x.data(), false, &self.weight.value, false, &mut cols, 0.0);
        let mut out = col2im(&g, n, &cols);
        add_bias(&mut out, &self.bias.value);
        Ok((Tensor::from_vec(&[n, h, w, self.out_channels], out)?, Cache::Transposed { input: x.clone(), geometry: g }))
    }

    pub(crate) fn backward(&mut self, cache: &Cache, gy: &Tensor, param_grads: bool) -> Result<Tensor> {
        let Cache::Transposed { input, geometry: g } = cache else {
            bail!(Contract, "transposed conv backward without forward cache");
        };
        let n = input.batch();
        let rows = n * g.oh * g.ow;
        let plen = g.patch_len();
        let gcols = im2col(g, n, gy.data());
        if param_grads {
            gemm(self.in_channels, rows, plen, input.data(), true, &gcols, false, &mut self.weight.grad, 1.0);
            accumulate_bias_grad(&mut self.bias.grad, gy.data());
        }
        let mut gx = vec![0.0; rows * self.in_channels];
        gemm(rows, plen, self.in_channels, &gcols, false, &self.weight.value, true, &mut gx, 0.0);
        Tensor::from_vec(input.shape(), gx)
    }
}
