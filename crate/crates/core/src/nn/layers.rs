//! Layer kernels with explicit forward caches and backward passes.
//!
//! Every forward call returns its own [`Tape`], so one network may be applied
//! several times within a single objective and differentiated through each
//! application independently.

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::image::{clamp_index, reflect_index};

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Zero,
    Reflect,
    Replicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        pad_mode: PadMode,
        bias: bool,
    },
    /// Per-sample, per-channel normalisation without affine parameters.
    InstanceNorm,
    Relu,
    LeakyRelu(f64),
    Tanh,
    /// Nearest-neighbour 2× upsampling.
    Upsample2x,
    /// `x + f(x)`
    Residual(Vec<LayerSpec>),
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => out_channels * in_channels * kernel * kernel + if *bias { *out_channels } else { 0 },
            LayerSpec::Residual(inner) => inner.iter().map(LayerSpec::param_count).sum(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Conv { input: Tensor },
    Norm { normed: Tensor, inv_std: Vec<f64> },
    Relu { input: Tensor },
    LeakyRelu { input: Tensor },
    Tanh { output: Tensor },
    Upsample,
    Residual { tape: Tape },
}

/// Activations recorded by one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    caches: Vec<Cache>,
}

/// A feed-forward network: layer descriptors plus one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

impl Network {
    pub fn new(layers: Vec<LayerSpec>, params: Vec<f64>) -> Result<Self> {
        let expected: usize = layers.iter().map(LayerSpec::param_count).sum();
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "{} parameters supplied, architecture needs {expected}",
                params.len()
            )));
        }
        Ok(Network { layers, params })
    }

    /// Weights drawn from N(0, `std`²), biases zero.
    pub fn init(layers: Vec<LayerSpec>, std: f64, rng: &mut impl RngCore) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut params = Vec::new();
        fn fill(layers: &[LayerSpec], params: &mut Vec<f64>, normal: &Normal<f64>, rng: &mut impl RngCore) {
            for layer in layers {
                match layer {
                    LayerSpec::Conv {
                        in_channels,
                        out_channels,
                        kernel,
                        bias,
                        ..
                    } => {
                        let n = out_channels * in_channels * kernel * kernel;
                        params.extend((0..n).map(|_| normal.sample(rng)));
                        if *bias {
                            params.extend(std::iter::repeat_n(0.0, *out_channels));
                        }
                    }
                    LayerSpec::Residual(inner) => fill(inner, params, normal, rng),
                    _ => {}
                }
            }
        }
        fill(&layers, &mut params, &normal, rng);
        Network { layers, params }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Sets the parameters of the last convolution to zero.
    pub fn zero_last_conv(&mut self) {
        let mut offset = 0;
        let mut last = None;
        for layer in &self.layers {
            let n = layer.param_count();
            if matches!(layer, LayerSpec::Conv { .. }) {
                last = Some((offset, n));
            }
            offset += n;
        }
        if let Some((o, n)) = last {
            self.params[o..o + n].iter_mut().for_each(|p| *p = 0.0);
        }
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        run_forward(&self.layers, &self.params, x.clone(), None)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tape)> {
        let mut tape = Tape::default();
        let y = run_forward(&self.layers, &self.params, x.clone(), Some(&mut tape))?;
        Ok((y, tape))
    }

    /// Back-propagates `grad_out` through the pass recorded in `tape`,
    /// accumulating parameter gradients into `grads`; returns the input gradient.
    pub fn backward(&self, tape: &Tape, grad_out: Tensor, grads: &mut [f64]) -> Tensor {
        debug_assert_eq!(grads.len(), self.params.len());
        run_backward(&self.layers, &self.params, tape, grad_out, grads)
    }
}

fn run_forward(layers: &[LayerSpec], params: &[f64], mut x: Tensor, mut tape: Option<&mut Tape>) -> Result<Tensor> {
    let mut offset = 0;
    for layer in layers {
        let n = layer.param_count();
        let p = &params[offset..offset + n];
        offset += n;
        x = match layer {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                pad_mode,
                bias,
            } => {
                if x.c != *in_channels {
                    return Err(Error::Shape(format!(
                        "convolution expects {in_channels} channels, got {}",
                        x.c
                    )));
                }
                let geom = ConvGeom::new(&x, *out_channels, *kernel, *stride, *padding, *pad_mode)?;
                let y = conv_forward(&geom, &x, p, *bias);
                if let Some(t) = tape.as_deref_mut() {
                    t.caches.push(Cache::Conv { input: x });
                }
                y
            }
            LayerSpec::InstanceNorm => {
                let (y, inv_std) = instance_norm(&x);
                if let Some(t) = tape.as_deref_mut() {
                    t.caches.push(Cache::Norm {
                        normed: y.clone(),
                        inv_std,
                    });
                }
                y
            }
            LayerSpec::Relu => {
                let y = x.map(|v| v.max(0.0));
                if let Some(t) = tape.as_deref_mut() {
                    t.caches.push(Cache::Relu { input: x });
                }
                y
            }
            LayerSpec::LeakyRelu(slope) => {
                let s = *slope;
                let y = x.map(|v| if v > 0.0 { v } else { s * v });
                if let Some(t) = tape.as_deref_mut() {
                    t.caches.push(Cache::LeakyRelu { input: x });
                }
                y
            }
            LayerSpec::Tanh => {
                let y = x.map(f64::tanh);
                if let Some(t) = tape.as_deref_mut() {
                    t.caches.push(Cache::Tanh { output: y.clone() });
                }
                y
            }
            LayerSpec::Upsample2x => {
                let y = upsample2x(&x);
                if let Some(t) = tape.as_deref_mut() {
                    t.caches.push(Cache::Upsample);
                }
                y
            }
            LayerSpec::Residual(inner) => match tape.as_deref_mut() {
                Some(t) => {
                    let mut sub = Tape::default();
                    let mut y = run_forward(inner, p, x.clone(), Some(&mut sub))?;
                    check_residual(&x, &y)?;
                    y.add_assign(&x);
                    t.caches.push(Cache::Residual { tape: sub });
                    y
                }
                None => {
                    let mut y = run_forward(inner, p, x.clone(), None)?;
                    check_residual(&x, &y)?;
                    y.add_assign(&x);
                    y
                }
            },
        };
    }
    Ok(x)
}

fn check_residual(x: &Tensor, y: &Tensor) -> Result<()> {
    if !x.same_shape(y) {
        return Err(Error::Shape(format!(
            "residual branch maps {:?} to {:?}",
            x.shape(),
            y.shape()
        )));
    }
    Ok(())
}

fn run_backward(layers: &[LayerSpec], params: &[f64], tape: &Tape, mut grad: Tensor, grads: &mut [f64]) -> Tensor {
    let mut offsets = Vec::with_capacity(layers.len());
    let mut offset = 0;
    for layer in layers {
        offsets.push(offset);
        offset += layer.param_count();
    }
    for (i, layer) in layers.iter().enumerate().rev() {
        let n = layer.param_count();
        let o = offsets[i];
        let p = &params[o..o + n];
        let g = &mut grads[o..o + n];
        grad = match (layer, &tape.caches[i]) {
            (
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    pad_mode,
                    bias,
                    ..
                },
                Cache::Conv { input },
            ) => {
                let geom = ConvGeom::new(input, *out_channels, *kernel, *stride, *padding, *pad_mode)
                    .expect("geometry validated in forward");
                conv_backward(&geom, input, p, *bias, &grad, g)
            }
            (LayerSpec::InstanceNorm, Cache::Norm { normed, inv_std }) => {
                instance_norm_backward(normed, inv_std, &grad)
            }
            (LayerSpec::Relu, Cache::Relu { input }) => {
                let mut out = grad;
                out.data
                    .iter_mut()
                    .zip(&input.data)
                    .for_each(|(d, &x)| *d = if x > 0.0 { *d } else { 0.0 });
                out
            }
            (LayerSpec::LeakyRelu(s), Cache::LeakyRelu { input }) => {
                let mut out = grad;
                out.data
                    .iter_mut()
                    .zip(&input.data)
                    .for_each(|(d, &x)| *d = if x > 0.0 { *d } else { *s * *d });
                out
            }
            (LayerSpec::Tanh, Cache::Tanh { output }) => {
                let mut out = grad;
                out.data
                    .iter_mut()
                    .zip(&output.data)
                    .for_each(|(d, &y)| *d *= 1.0 - y * y);
                out
            }
            (LayerSpec::Upsample2x, Cache::Upsample) => upsample2x_backward(&grad),
            (LayerSpec::Residual(inner), Cache::Residual { tape: sub }) => {
                let mut out = run_backward(inner, p, sub, grad.clone(), g);
                out.add_assign(&grad);
                out
            }
            _ => unreachable!("tape does not match layer list"),
        };
    }
    grad
}

struct ConvGeom {
    in_c: usize,
    out_c: usize,
    k: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    /// Source row for each (ki, oy); `None` for zero padding.
    row_src: Vec<Option<usize>>,
    col_src: Vec<Option<usize>>,
}

impl ConvGeom {
    fn new(x: &Tensor, out_c: usize, k: usize, stride: usize, pad: usize, mode: PadMode) -> Result<Self> {
        if x.h + 2 * pad < k || x.w + 2 * pad < k {
            return Err(Error::Shape(format!(
                "{}x{} input too small for a {k}x{k} kernel with padding {pad}",
                x.h, x.w
            )));
        }
        if mode == PadMode::Reflect && (pad >= x.h || pad >= x.w) {
            return Err(Error::Shape(format!(
                "reflect padding {pad} needs inputs larger than {}x{}",
                x.h, x.w
            )));
        }
        let out_h = (x.h + 2 * pad - k) / stride + 1;
        let out_w = (x.w + 2 * pad - k) / stride + 1;
        let map = |len: usize, out: usize| -> Vec<Option<usize>> {
            let mut v = Vec::with_capacity(k * out);
            for ki in 0..k {
                for o in 0..out {
                    let i = (o * stride + ki) as isize - pad as isize;
                    v.push(if i >= 0 && (i as usize) < len {
                        Some(i as usize)
                    } else {
                        match mode {
                            PadMode::Zero => None,
                            PadMode::Reflect => Some(reflect_index(i, len)),
                            PadMode::Replicate => Some(clamp_index(i, len)),
                        }
                    });
                }
            }
            v
        };
        Ok(ConvGeom {
            in_c: x.c,
            out_c,
            k,
            in_h: x.h,
            in_w: x.w,
            out_h,
            out_w,
            row_src: map(x.h, out_h),
            col_src: map(x.w, out_w),
        })
    }

    fn col_rows(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn im2col(&self, input: &[f64], cols: &mut [f64]) {
        let p = self.positions();
        let plane = self.in_h * self.in_w;
        for ci in 0..self.in_c {
            let src = &input[ci * plane..(ci + 1) * plane];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let rows = &self.row_src[ki * self.out_h..(ki + 1) * self.out_h];
                    let cs = &self.col_src[kj * self.out_w..(kj + 1) * self.out_w];
                    for (oy, ry) in rows.iter().enumerate() {
                        let d = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        match ry {
                            None => d.iter_mut().for_each(|v| *v = 0.0),
                            Some(ry) => {
                                let line = &src[ry * self.in_w..(ry + 1) * self.in_w];
                                for (v, cx) in d.iter_mut().zip(cs) {
                                    *v = cx.map_or(0.0, |cx| line[cx]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], grad_in: &mut [f64]) {
        let p = self.positions();
        let plane = self.in_h * self.in_w;
        for ci in 0..self.in_c {
            let dst = &mut grad_in[ci * plane..(ci + 1) * plane];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    let rows = &self.row_src[ki * self.out_h..(ki + 1) * self.out_h];
                    let cs = &self.col_src[kj * self.out_w..(kj + 1) * self.out_w];
                    for (oy, ry) in rows.iter().enumerate() {
                        let Some(ry) = ry else { continue };
                        let s = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        for (&v, cx) in s.iter().zip(cs) {
                            if let Some(cx) = cx {
                                dst[ry * self.in_w + cx] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `C[m×n] = alpha·A[m×k]·B[k×n] + beta·C` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: bounds checked above for the strided extents; slices do not alias.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_forward(geom: &ConvGeom, x: &Tensor, params: &[f64], bias: bool) -> Tensor {
    let kk = geom.col_rows();
    let p = geom.positions();
    let weights = &params[..geom.out_c * kk];
    let mut out = Tensor::zeros(x.n, geom.out_c, geom.out_h, geom.out_w);
    let mut cols = vec![0.0; kk * p];
    for i in 0..x.n {
        geom.im2col(x.sample(i), &mut cols);
        let y = &mut out.data[i * geom.out_c * p..(i + 1) * geom.out_c * p];
        gemm(geom.out_c, kk, p, weights, kk, 1, &cols, p, 1, 0.0, y);
        if bias {
            let b = &params[geom.out_c * kk..];
            for (oc, chunk) in y.chunks_exact_mut(p).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[oc]);
            }
        }
    }
    out
}

fn conv_backward(geom: &ConvGeom, x: &Tensor, params: &[f64], bias: bool, grad: &Tensor, g: &mut [f64]) -> Tensor {
    let kk = geom.col_rows();
    let p = geom.positions();
    let weights = &params[..geom.out_c * kk];
    let mut grad_in = Tensor::zeros(x.n, x.c, x.h, x.w);
    let mut cols = vec![0.0; kk * p];
    let mut dcols = vec![0.0; kk * p];
    let (gw, gb) = g.split_at_mut(geom.out_c * kk);
    for i in 0..x.n {
        let dy = grad.sample(i);
        geom.im2col(x.sample(i), &mut cols);
        // dW += dY · colsᵀ
        gemm(geom.out_c, p, kk, dy, p, 1, &cols, 1, p, 1.0, gw);
        // dcols = Wᵀ · dY
        gemm(kk, geom.out_c, p, weights, 1, kk, dy, p, 1, 0.0, &mut dcols);
        let gi = &mut grad_in.data[i * x.sample_len()..(i + 1) * x.sample_len()];
        geom.col2im(&dcols, gi);
        if bias {
            for (oc, chunk) in dy.chunks_exact(p).enumerate() {
                gb[oc] += chunk.iter().sum::<f64>();
            }
        }
    }
    grad_in
}

fn instance_norm(x: &Tensor) -> (Tensor, Vec<f64>) {
    let plane = x.h * x.w;
    let mut y = x.clone();
    let mut inv_std = Vec::with_capacity(x.n * x.c);
    for chunk in y.data.chunks_exact_mut(plane) {
        let mean = chunk.iter().sum::<f64>() / plane as f64;
        let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64;
        let s = 1.0 / (var + NORM_EPS).sqrt();
        chunk.iter_mut().for_each(|v| *v = (*v - mean) * s);
        inv_std.push(s);
    }
    (y, inv_std)
}

fn instance_norm_backward(normed: &Tensor, inv_std: &[f64], grad: &Tensor) -> Tensor {
    let plane = normed.h * normed.w;
    let mut out = grad.clone();
    for ((d, y), &s) in out
        .data
        .chunks_exact_mut(plane)
        .zip(normed.data.chunks_exact(plane))
        .zip(inv_std)
    {
        let mean_d = d.iter().sum::<f64>() / plane as f64;
        let mean_dy = d.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / plane as f64;
        d.iter_mut()
            .zip(y)
            .for_each(|(v, &yy)| *v = s * (*v - mean_d - yy * mean_dy));
    }
    out
}

fn upsample2x(x: &Tensor) -> Tensor {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.n, x.c, h2, w2);
    for (src, dst) in x.data.chunks_exact(x.h * x.w).zip(out.data.chunks_exact_mut(h2 * w2)) {
        for r in 0..h2 {
            for c in 0..w2 {
                dst[r * w2 + c] = src[(r / 2) * x.w + c / 2];
            }
        }
    }
    out
}

fn upsample2x_backward(grad: &Tensor) -> Tensor {
    let (h, w) = (grad.h / 2, grad.w / 2);
    let mut out = Tensor::zeros(grad.n, grad.c, h, w);
    for (src, dst) in grad.data.chunks_exact(grad.h * grad.w).zip(out.data.chunks_exact_mut(h * w)) {
        for r in 0..grad.h {
            for c in 0..grad.w {
                dst[(r / 2) * w + c / 2] += src[r * grad.w + c];
            }
        }
    }
    out
}
