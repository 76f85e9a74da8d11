//! Layers with explicit forward/backward passes.
//!
//! Each forward returns the output plus whatever context the backward needs;
//! backward accumulates parameter gradients into the layer and returns the
//! input gradient. Nothing here mutates state implicitly: batch-norm running
//! statistics are returned as an update the caller applies, so forwards stay
//! pure for finite-difference checks.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::nn::{Mode, Scalar};

fn kaiming_fill<E: Scalar>(t: &mut Tensor<E>, fan_in: usize, rng: &mut ChaCha8Rng) {
    let std = (2.0 / fan_in as f64).sqrt();
    for v in t.data_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *v = E::of(n * std);
    }
}

// ---------------------------------------------------------------- Conv2d ---

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<E> {
    pub weight: Tensor<E>, // [out_c, in_c, k, k]
    pub bias: Tensor<E>,   // [out_c]
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub grad_weight: Tensor<E>,
    pub grad_bias: Tensor<E>,
}

impl<E: Scalar> Conv2d<E> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut weight = Tensor::zeros(&[out_channels, in_channels, kernel, kernel]);
        kaiming_fill(&mut weight, in_channels * kernel * kernel, rng);
        let bias = Tensor::zeros(&[out_channels]);
        Conv2d {
            grad_weight: weight.zeros_like(),
            grad_bias: bias.zeros_like(),
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn out_spatial(&self, h: usize) -> Result<usize> {
        let padded = h + 2 * self.padding;
        if padded < self.kernel {
            return Err(Error::ShapeMismatch {
                context: "conv2d",
                expected: format!("input >= {} after padding", self.kernel),
                got: format!("{padded}"),
            });
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let (b, c, h, w) = x.dim4()?;
        if c != self.in_channels {
            return Err(Error::ShapeMismatch {
                context: "conv2d",
                expected: format!("{} input channels", self.in_channels),
                got: format!("{c}"),
            });
        }
        let oh = self.out_spatial(h)?;
        let ow = self.out_spatial(w)?;
        let oc = self.out_channels;
        let k = self.kernel;
        let (s, p) = (self.stride as i64, self.padding as i64);
        let mut out = Tensor::zeros(&[b, oc, oh, ow]);
        let wdat = self.weight.data();
        let bdat = self.bias.data();
        out.data_mut()
            .par_chunks_mut(oc * oh * ow)
            .zip(x.data().par_chunks(c * h * w))
            .for_each(|(ob, xb)| {
                for o in 0..oc {
                    let wbase = o * c * k * k;
                    for oy in 0..oh {
                        let iy0 = oy as i64 * s - p;
                        for ox in 0..ow {
                            let ix0 = ox as i64 * s - p;
                            let mut acc = bdat[o];
                            for ic in 0..c {
                                let xbase = ic * h * w;
                                let wcbase = wbase + ic * k * k;
                                for ky in 0..k {
                                    let iy = iy0 + ky as i64;
                                    if iy < 0 || iy >= h as i64 {
                                        continue;
                                    }
                                    let xrow = xbase + iy as usize * w;
                                    let wrow = wcbase + ky * k;
                                    for kx in 0..k {
                                        let ix = ix0 + kx as i64;
                                        if ix < 0 || ix >= w as i64 {
                                            continue;
                                        }
                                        acc = acc + wdat[wrow + kx] * xb[xrow + ix as usize];
                                    }
                                }
                            }
                            ob[o * oh * ow + oy * ow + ox] = acc;
                        }
                    }
                }
            });
        Ok(out)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<E>, grad_out: &Tensor<E>) -> Result<Tensor<E>> {
        let (b, c, h, w) = x.dim4()?;
        let (gb, goc, oh, ow) = grad_out.dim4()?;
        if gb != b || goc != self.out_channels {
            return Err(Error::ShapeMismatch {
                context: "conv2d backward",
                expected: format!("[{b}, {}, ..]", self.out_channels),
                got: format!("{:?}", grad_out.shape()),
            });
        }
        let k = self.kernel;
        let (s, p) = (self.stride as i64, self.padding as i64);
        let oc = self.out_channels;
        let wdat = self.weight.data();

        // Input gradient: disjoint writes per batch element.
        let mut dx = x.zeros_like();
        dx.data_mut()
            .par_chunks_mut(c * h * w)
            .zip(grad_out.data().par_chunks(oc * oh * ow))
            .for_each(|(dxb, gob)| {
                for o in 0..oc {
                    let wbase = o * c * k * k;
                    for oy in 0..oh {
                        let iy0 = oy as i64 * s - p;
                        for ox in 0..ow {
                            let ix0 = ox as i64 * s - p;
                            let g = gob[o * oh * ow + oy * ow + ox];
                            for ic in 0..c {
                                let xbase = ic * h * w;
                                let wcbase = wbase + ic * k * k;
                                for ky in 0..k {
                                    let iy = iy0 + ky as i64;
                                    if iy < 0 || iy >= h as i64 {
                                        continue;
                                    }
                                    let xrow = xbase + iy as usize * w;
                                    let wrow = wcbase + ky * k;
                                    for kx in 0..k {
                                        let ix = ix0 + kx as i64;
                                        if ix < 0 || ix >= w as i64 {
                                            continue;
                                        }
                                        dxb[xrow + ix as usize] =
                                            dxb[xrow + ix as usize] + wdat[wrow + kx] * g;
                                    }
                                }
                            }
                        }
                    }
                }
            });

        // Parameter gradients: per-sample partials merged in batch order so the
        // result is deterministic no matter how many threads run.
        let partials: Vec<(Vec<E>, Vec<E>)> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let xb = &x.data()[bi * c * h * w..(bi + 1) * c * h * w];
                let gob = &grad_out.data()[bi * oc * oh * ow..(bi + 1) * oc * oh * ow];
                let mut dw = vec![E::zero(); oc * c * k * k];
                let mut db = vec![E::zero(); oc];
                for o in 0..oc {
                    let wbase = o * c * k * k;
                    for oy in 0..oh {
                        let iy0 = oy as i64 * s - p;
                        for ox in 0..ow {
                            let ix0 = ox as i64 * s - p;
                            let g = gob[o * oh * ow + oy * ow + ox];
                            db[o] = db[o] + g;
                            for ic in 0..c {
                                let xbase = ic * h * w;
                                let wcbase = wbase + ic * k * k;
                                for ky in 0..k {
                                    let iy = iy0 + ky as i64;
                                    if iy < 0 || iy >= h as i64 {
                                        continue;
                                    }
                                    let xrow = xbase + iy as usize * w;
                                    let wrow = wcbase + ky * k;
                                    for kx in 0..k {
                                        let ix = ix0 + kx as i64;
                                        if ix < 0 || ix >= w as i64 {
                                            continue;
                                        }
                                        dw[wrow + kx] =
                                            dw[wrow + kx] + xb[xrow + ix as usize] * g;
                                    }
                                }
                            }
                        }
                    }
                }
                (dw, db)
            })
            .collect();
        for (dw, db) in partials {
            for (a, v) in self.grad_weight.data_mut().iter_mut().zip(dw) {
                *a = *a + v;
            }
            for (a, v) in self.grad_bias.data_mut().iter_mut().zip(db) {
                *a = *a + v;
            }
        }
        Ok(dx)
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(E::zero());
        self.grad_bias.fill(E::zero());
    }
}

// ------------------------------------------------------------- MaxPool2d ---

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
}

impl MaxPool2d {
    pub fn out_spatial(&self, h: usize) -> Result<usize> {
        if h < self.kernel {
            return Err(Error::ShapeMismatch {
                context: "maxpool",
                expected: format!("input >= kernel {}", self.kernel),
                got: format!("{h}"),
            });
        }
        Ok((h - self.kernel) / self.stride + 1)
    }

    /// Returns the pooled tensor plus the flat input index of each maximum
    /// (ties resolved to the first in scan order).
    pub fn forward<E: Scalar>(&self, x: &Tensor<E>) -> Result<(Tensor<E>, Vec<u32>)> {
        let (b, c, h, w) = x.dim4()?;
        let oh = self.out_spatial(h)?;
        let ow = self.out_spatial(w)?;
        let mut out = Tensor::zeros(&[b, c, oh, ow]);
        let mut argmax = vec![0u32; b * c * oh * ow];
        out.data_mut()
            .par_chunks_mut(c * oh * ow)
            .zip(argmax.par_chunks_mut(c * oh * ow))
            .zip(x.data().par_chunks(c * h * w))
            .enumerate()
            .for_each(|(bi, ((ob, ab), xb))| {
                for ch in 0..c {
                    let xbase = ch * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let iy0 = oy * self.stride;
                            let ix0 = ox * self.stride;
                            let mut best = xb[xbase + iy0 * w + ix0];
                            let mut best_idx = xbase + iy0 * w + ix0;
                            for ky in 0..self.kernel {
                                for kx in 0..self.kernel {
                                    let idx = xbase + (iy0 + ky) * w + (ix0 + kx);
                                    if xb[idx] > best {
                                        best = xb[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                            ob[ch * oh * ow + oy * ow + ox] = best;
                            ab[ch * oh * ow + oy * ow + ox] =
                                (bi * c * h * w + best_idx) as u32;
                        }
                    }
                }
            });
        Ok((out, argmax))
    }

    pub fn backward<E: Scalar>(
        &self,
        input_shape: &[usize],
        argmax: &[u32],
        grad_out: &Tensor<E>,
    ) -> Tensor<E> {
        let mut dx = Tensor::zeros(input_shape);
        let d = dx.data_mut();
        for (g, idx) in grad_out.data().iter().zip(argmax.iter()) {
            d[*idx as usize] = d[*idx as usize] + *g;
        }
        dx
    }
}

// ----------------------------------------------------- AdaptiveAvgPool2d ---

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveAvgPool2d {
    pub out: usize,
}

fn adaptive_span(i: usize, in_dim: usize, out_dim: usize) -> (usize, usize) {
    let start = i * in_dim / out_dim;
    let end = ((i + 1) * in_dim).div_ceil(out_dim);
    (start, end)
}

impl AdaptiveAvgPool2d {
    pub fn forward<E: Scalar>(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let (b, c, h, w) = x.dim4()?;
        let t = self.out;
        let mut out = Tensor::zeros(&[b, c, t, t]);
        let od = out.data_mut();
        for bi in 0..b {
            for ch in 0..c {
                let xbase = (bi * c + ch) * h * w;
                let obase = (bi * c + ch) * t * t;
                for oy in 0..t {
                    let (y0, y1) = adaptive_span(oy, h, t);
                    for ox in 0..t {
                        let (x0, x1) = adaptive_span(ox, w, t);
                        let mut acc = E::zero();
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                acc = acc + x.data()[xbase + y * w + xx];
                            }
                        }
                        let area = E::of(((y1 - y0) * (x1 - x0)) as f64);
                        od[obase + oy * t + ox] = acc / area;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward<E: Scalar>(&self, input_shape: &[usize], grad_out: &Tensor<E>) -> Tensor<E> {
        let (b, c, h, w) = (
            input_shape[0],
            input_shape[1],
            input_shape[2],
            input_shape[3],
        );
        let t = self.out;
        let mut dx = Tensor::zeros(input_shape);
        let d = dx.data_mut();
        for bi in 0..b {
            for ch in 0..c {
                let xbase = (bi * c + ch) * h * w;
                let obase = (bi * c + ch) * t * t;
                for oy in 0..t {
                    let (y0, y1) = adaptive_span(oy, h, t);
                    for ox in 0..t {
                        let (x0, x1) = adaptive_span(ox, w, t);
                        let area = E::of(((y1 - y0) * (x1 - x0)) as f64);
                        let g = grad_out.data()[obase + oy * t + ox] / area;
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                d[xbase + y * w + xx] = d[xbase + y * w + xx] + g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

// ------------------------------------------------------------------ ReLU ---

pub fn relu_forward<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < E::zero() {
            *v = E::zero();
        }
    }
    out
}

/// Gradient masked by the pre-activation sign (zero at the kink).
pub fn relu_backward<E: Scalar>(pre: &Tensor<E>, grad_out: &Tensor<E>) -> Tensor<E> {
    let mut dx = grad_out.clone();
    for (d, p) in dx.data_mut().iter_mut().zip(pre.data()) {
        if *p <= E::zero() {
            *d = E::zero();
        }
    }
    dx
}

// ---------------------------------------------------------------- Linear ---

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<E> {
    pub weight: Tensor<E>, // [out, in]
    pub bias: Tensor<E>,   // [out]
    pub grad_weight: Tensor<E>,
    pub grad_bias: Tensor<E>,
}

impl<E: Scalar> Linear<E> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut weight = Tensor::zeros(&[out_dim, in_dim]);
        kaiming_fill(&mut weight, in_dim, rng);
        let bias = Tensor::zeros(&[out_dim]);
        Linear {
            grad_weight: weight.zeros_like(),
            grad_bias: bias.zeros_like(),
            weight,
            bias,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let (b, d) = x.dim2()?;
        if d != self.in_dim() {
            return Err(Error::ShapeMismatch {
                context: "linear",
                expected: format!("input dim {}", self.in_dim()),
                got: format!("{d}"),
            });
        }
        let o = self.out_dim();
        let mut out = Tensor::zeros(&[b, o]);
        let w = self.weight.data();
        out.data_mut()
            .par_chunks_mut(o)
            .zip(x.data().par_chunks(d))
            .for_each(|(ob, xb)| {
                for oi in 0..o {
                    let wrow = &w[oi * d..(oi + 1) * d];
                    let mut acc = self.bias.data()[oi];
                    for (wv, xv) in wrow.iter().zip(xb) {
                        acc = acc + *wv * *xv;
                    }
                    ob[oi] = acc;
                }
            });
        Ok(out)
    }

    pub fn backward(&mut self, x: &Tensor<E>, grad_out: &Tensor<E>) -> Result<Tensor<E>> {
        let (b, d) = x.dim2()?;
        let (_, o) = grad_out.dim2()?;
        let w = self.weight.data();
        let mut dx = x.zeros_like();
        dx.data_mut()
            .par_chunks_mut(d)
            .zip(grad_out.data().par_chunks(o))
            .for_each(|(dxb, gb)| {
                for oi in 0..o {
                    let g = gb[oi];
                    let wrow = &w[oi * d..(oi + 1) * d];
                    for (dv, wv) in dxb.iter_mut().zip(wrow) {
                        *dv = *dv + *wv * g;
                    }
                }
            });
        let dw = self.grad_weight.data_mut();
        let db = self.grad_bias.data_mut();
        for bi in 0..b {
            let xb = &x.data()[bi * d..(bi + 1) * d];
            let gb = &grad_out.data()[bi * o..(bi + 1) * o];
            for oi in 0..o {
                let g = gb[oi];
                db[oi] = db[oi] + g;
                let wrow = &mut dw[oi * d..(oi + 1) * d];
                for (wv, xv) in wrow.iter_mut().zip(xb) {
                    *wv = *wv + *xv * g;
                }
            }
        }
        Ok(dx)
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(E::zero());
        self.grad_bias.fill(E::zero());
    }
}

// ----------------------------------------------------------- BatchNorm1d ---

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d<E> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub running_mean: Tensor<E>,
    pub running_var: Tensor<E>,
    pub eps: f64,
    pub momentum: f64,
    pub grad_gamma: Tensor<E>,
    pub grad_beta: Tensor<E>,
}

#[derive(Debug, Clone)]
pub struct BnCache<E> {
    pub xhat: Tensor<E>,
    pub inv_std: Vec<E>,
    pub mode: Mode,
}

/// Running-statistics update produced by a training-mode forward; the caller
/// applies it so the forward itself stays pure.
#[derive(Debug, Clone)]
pub struct BnUpdate<E> {
    pub mean: Vec<E>,
    pub var_unbiased: Vec<E>,
}

impl<E: Scalar> BatchNorm1d<E> {
    pub fn new(dim: usize, eps: f64, momentum: f64) -> Self {
        let mut gamma = Tensor::zeros(&[dim]);
        gamma.fill(E::one());
        let beta = Tensor::zeros(&[dim]);
        let mut running_var = Tensor::zeros(&[dim]);
        running_var.fill(E::one());
        BatchNorm1d {
            grad_gamma: gamma.zeros_like(),
            grad_beta: beta.zeros_like(),
            gamma,
            beta,
            running_mean: Tensor::zeros(&[dim]),
            running_var,
            eps,
            momentum,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(
        &self,
        x: &Tensor<E>,
        mode: Mode,
    ) -> Result<(Tensor<E>, BnCache<E>, Option<BnUpdate<E>>)> {
        let (b, c) = x.dim2()?;
        if c != self.dim() {
            return Err(Error::ShapeMismatch {
                context: "batchnorm",
                expected: format!("{} features", self.dim()),
                got: format!("{c}"),
            });
        }
        match mode {
            Mode::Train => {
                if b < 2 {
                    return Err(Error::Numeric {
                        context: "batchnorm",
                        reason: format!("training mode needs batch >= 2, got {b}"),
                    });
                }
                let nb = E::of(b as f64);
                let mut mean = vec![E::zero(); c];
                for bi in 0..b {
                    for (m, v) in mean.iter_mut().zip(x.row(bi)) {
                        *m = *m + *v;
                    }
                }
                for m in mean.iter_mut() {
                    *m = *m / nb;
                }
                let mut var = vec![E::zero(); c];
                for bi in 0..b {
                    for ((s, v), m) in var.iter_mut().zip(x.row(bi)).zip(&mean) {
                        let d = *v - *m;
                        *s = *s + d * d;
                    }
                }
                for s in var.iter_mut() {
                    *s = *s / nb;
                }
                let inv_std: Vec<E> = var
                    .iter()
                    .map(|v| E::one() / (*v + E::of(self.eps)).sqrt())
                    .collect();
                let mut xhat = x.zeros_like();
                let mut out = x.zeros_like();
                for bi in 0..b {
                    for ci in 0..c {
                        let xh = (x.data()[bi * c + ci] - mean[ci]) * inv_std[ci];
                        xhat.data_mut()[bi * c + ci] = xh;
                        out.data_mut()[bi * c + ci] =
                            self.gamma.data()[ci] * xh + self.beta.data()[ci];
                    }
                }
                let unbias = E::of(b as f64 / (b as f64 - 1.0));
                let update = BnUpdate {
                    mean,
                    var_unbiased: var.iter().map(|v| *v * unbias).collect(),
                };
                let cache = BnCache {
                    xhat,
                    inv_std,
                    mode,
                };
                Ok((out, cache, Some(update)))
            }
            Mode::Eval => {
                let inv_std: Vec<E> = self
                    .running_var
                    .data()
                    .iter()
                    .map(|v| E::one() / (*v + E::of(self.eps)).sqrt())
                    .collect();
                let mut xhat = x.zeros_like();
                let mut out = x.zeros_like();
                for bi in 0..b {
                    for ci in 0..c {
                        let xh =
                            (x.data()[bi * c + ci] - self.running_mean.data()[ci]) * inv_std[ci];
                        xhat.data_mut()[bi * c + ci] = xh;
                        out.data_mut()[bi * c + ci] =
                            self.gamma.data()[ci] * xh + self.beta.data()[ci];
                    }
                }
                let cache = BnCache {
                    xhat,
                    inv_std,
                    mode,
                };
                Ok((out, cache, None))
            }
        }
    }

    pub fn apply_update(&mut self, update: &BnUpdate<E>) {
        let m = E::of(self.momentum);
        let keep = E::one() - m;
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(&update.mean) {
            *r = keep * *r + m * *b;
        }
        for (r, b) in self
            .running_var
            .data_mut()
            .iter_mut()
            .zip(&update.var_unbiased)
        {
            *r = keep * *r + m * *b;
        }
    }

    pub fn backward(&mut self, cache: &BnCache<E>, grad_out: &Tensor<E>) -> Result<Tensor<E>> {
        let (b, c) = grad_out.dim2()?;
        let nb = E::of(b as f64);
        let mut sum_g = vec![E::zero(); c];
        let mut sum_gx = vec![E::zero(); c];
        for bi in 0..b {
            for ci in 0..c {
                let g = grad_out.data()[bi * c + ci];
                sum_g[ci] = sum_g[ci] + g;
                sum_gx[ci] = sum_gx[ci] + g * cache.xhat.data()[bi * c + ci];
            }
        }
        for ci in 0..c {
            self.grad_gamma.data_mut()[ci] = self.grad_gamma.data()[ci] + sum_gx[ci];
            self.grad_beta.data_mut()[ci] = self.grad_beta.data()[ci] + sum_g[ci];
        }
        let mut dx = grad_out.zeros_like();
        match cache.mode {
            Mode::Train => {
                for bi in 0..b {
                    for ci in 0..c {
                        let g = grad_out.data()[bi * c + ci];
                        let xh = cache.xhat.data()[bi * c + ci];
                        let term = g - sum_g[ci] / nb - xh * (sum_gx[ci] / nb);
                        dx.data_mut()[bi * c + ci] =
                            self.gamma.data()[ci] * cache.inv_std[ci] * term;
                    }
                }
            }
            Mode::Eval => {
                for bi in 0..b {
                    for ci in 0..c {
                        dx.data_mut()[bi * c + ci] = grad_out.data()[bi * c + ci]
                            * self.gamma.data()[ci]
                            * cache.inv_std[ci];
                    }
                }
            }
        }
        Ok(dx)
    }

    pub fn zero_grad(&mut self) {
        self.grad_gamma.fill(E::zero());
        self.grad_beta.fill(E::zero());
    }
}

// ------------------------------------------------------------ L2 normalize ---

#[derive(Debug, Clone)]
pub struct L2Cache<E> {
    pub normalized: Tensor<E>,
    pub norms: Vec<E>,
    /// Rows whose pre-norm magnitude fell below epsilon and were zeroed.
    pub flagged: Vec<usize>,
}

/// Row-wise ℓ2 normalization. Rows with norm below `eps` map to the zero
/// vector and are flagged.
pub fn l2_normalize_forward<E: Scalar>(x: &Tensor<E>, eps: f64) -> Result<(Tensor<E>, L2Cache<E>)> {
    if !x.is_finite() {
        return Err(Error::Numeric {
            context: "l2_normalize",
            reason: "non-finite input".into(),
        });
    }
    let (b, d) = x.dim2()?;
    let mut out = x.zeros_like();
    let mut norms = vec![E::zero(); b];
    let mut flagged = Vec::new();
    for bi in 0..b {
        let row = x.row(bi);
        let norm = row.iter().map(|v| *v * *v).sum::<E>().sqrt();
        norms[bi] = norm;
        if norm.as_f64() < eps {
            flagged.push(bi);
            continue; // row stays zero
        }
        for (o, v) in out.data_mut()[bi * d..(bi + 1) * d].iter_mut().zip(row) {
            *o = *v / norm;
        }
    }
    let cache = L2Cache {
        normalized: out.clone(),
        norms,
        flagged,
    };
    Ok((out, cache))
}

pub fn l2_normalize_backward<E: Scalar>(cache: &L2Cache<E>, grad_out: &Tensor<E>) -> Tensor<E> {
    let (b, d) = grad_out.dim2().expect("2-d gradient");
    let mut dx = grad_out.zeros_like();
    for bi in 0..b {
        if cache.flagged.contains(&bi) {
            continue;
        }
        let z = cache.normalized.row(bi);
        let g = grad_out.row(bi);
        let zg = z.iter().zip(g).map(|(a, c)| *a * *c).sum::<E>();
        let norm = cache.norms[bi];
        for i in 0..d {
            dx.data_mut()[bi * d + i] = (g[i] - z[i] * zg) / norm;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::derive_rng;

    #[test]
    fn conv_shapes_and_identity_kernel() {
        let mut rng = derive_rng(0, "test", 0);
        let mut conv = Conv2d::<f64>::new(1, 1, 1, 1, 0, &mut rng);
        conv.weight.data_mut()[0] = 1.0;
        conv.bias.data_mut()[0] = 0.5;
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.5, 2.5, 3.5, 4.5]);
    }

    #[test]
    fn conv_rejects_wrong_channels() {
        let mut rng = derive_rng(0, "test", 1);
        let conv = Conv2d::<f64>::new(2, 1, 3, 1, 1, &mut rng);
        let x = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        assert!(conv.forward(&x).is_err());
    }

    #[test]
    fn maxpool_picks_first_max_on_ties() {
        let pool = MaxPool2d { kernel: 2, stride: 2 };
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![3.0_f64, 3.0, 1.0, 2.0]).unwrap();
        let (y, am) = pool.forward(&x).unwrap();
        assert_eq!(y.data(), &[3.0]);
        assert_eq!(am, vec![0]);
        let dx = pool.backward(&[1, 1, 2, 2], &am, &Tensor::from_vec(&[1, 1, 1, 1], vec![5.0]).unwrap());
        assert_eq!(dx.data(), &[5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn adaptive_pool_upsamples_and_averages() {
        let pool = AdaptiveAvgPool2d { out: 2 };
        // 1x1 input duplicates into the 2x2 output.
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![0.7_f64]).unwrap();
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.7, 0.7, 0.7, 0.7]);
        // 4x4 input averages 2x2 blocks.
        let x = Tensor::from_vec(&[1, 1, 4, 4], (0..16).map(|i| i as f64).collect()).unwrap();
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn batchnorm_train_normalizes_and_eval_uses_running() {
        let mut bn = BatchNorm1d::<f64>::new(2, 1e-5, 0.1);
        let x = Tensor::from_vec(&[4, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]).unwrap();
        let (y, _, update) = bn.forward(&x, Mode::Train).unwrap();
        // Per-feature mean ~0, variance ~1 after normalization.
        for ci in 0..2 {
            let mean: f64 = (0..4).map(|b| y.data()[b * 2 + ci]).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
        }
        bn.apply_update(&update.unwrap());
        assert!(bn.running_mean.data()[0] > 0.0);
        // Eval output is deterministic and independent of batch composition.
        let x1 = Tensor::from_vec(&[2, 2], vec![1.0, 10.0, 2.0, 20.0]).unwrap();
        let (e1, _, none) = bn.forward(&x1, Mode::Eval).unwrap();
        assert!(none.is_none());
        let x2 = Tensor::from_vec(&[2, 2], vec![1.0, 10.0, 99.0, -3.0]).unwrap();
        let (e2, _, _) = bn.forward(&x2, Mode::Eval).unwrap();
        assert_eq!(e1.data()[..2], e2.data()[..2]);
    }

    #[test]
    fn batchnorm_train_rejects_singleton_batch() {
        let bn = BatchNorm1d::<f64>::new(2, 1e-5, 0.1);
        let x = Tensor::<f64>::zeros(&[1, 2]);
        assert!(bn.forward(&x, Mode::Train).is_err());
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn l2_normalize_unit_rows_and_flags_null_rows() {
        let x = Tensor::from_vec(&[2, 3], vec![3.0_f64, 4.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let (y, cache) = l2_normalize_forward(&x, 1e-12).unwrap();
        let n0: f64 = y.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n0 - 1.0).abs() < 1e-12);
        assert_eq!(y.row(1), &[0.0, 0.0, 0.0]);
        assert_eq!(cache.flagged, vec![1]);
    }
}
