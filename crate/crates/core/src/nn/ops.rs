//! Forward and backward kernels for every layer type, as free functions over
//! batched tensors (`[N, C, H, W]` for feature maps, `[N, D]` for vectors).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linalg::{gemm, Mat};
use super::{Mode, NnError, Tensor};
use crate::scalar::Scalar;

/// Output extent of a sliding window: `floor((n + 2p - k) / s) + 1`.
pub fn out_extent(n: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || n + 2 * padding < kernel {
        None
    } else {
        Some((n + 2 * padding - kernel) / stride + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Tanh,
    Relu,
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Fills row `r = (ci * k + ki) * k + kj` of the patch matrix `[C*k*k, N*H'*W']`
/// for every sample.
fn im2col_row<T: Scalar>(x: &Tensor<T>, g: &ConvGeom, r: usize, row: &mut [T]) {
    let (ci, ki, kj) = (r / (g.k * g.k), r / g.k % g.k, r % g.k);
    let p = g.positions();
    for (xs, out) in x.data().chunks_exact(x.sample_len()).zip(row.chunks_exact_mut(p)) {
        let plane = &xs[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for oy in 0..g.oh {
            let iy = (oy * g.stride + ki) as isize - g.pad as isize;
            let dst = &mut out[oy * g.ow..(oy + 1) * g.ow];
            if iy < 0 || iy >= g.h as isize {
                dst.fill(T::zero());
                continue;
            }
            let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
            if g.stride == 1 && kj >= g.pad && kj - g.pad + g.ow <= g.w {
                dst.copy_from_slice(&src[kj - g.pad..kj - g.pad + g.ow]);
                continue;
            }
            for (ox, d) in dst.iter_mut().enumerate() {
                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
            }
        }
    }
}

/// Adjoint of [`im2col_row`] for one sample: scatters all rows of its block
/// of the patch matrix back onto the input grid.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, n: usize, sample: usize, dx: &mut [T]) {
    let p = g.positions();
    for r in 0..g.patch() {
        let (ci, ki, kj) = (r / (g.k * g.k), r / g.k % g.k, r % g.k);
        let src = &cols[r * n * p + sample * p..][..p];
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for oy in 0..g.oh {
            let iy = (oy * g.stride + ki) as isize - g.pad as isize;
            if iy < 0 || iy >= g.h as isize {
                continue;
            }
            let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
            let line = &src[oy * g.ow..(oy + 1) * g.ow];
            if g.stride == 1 && kj >= g.pad && kj - g.pad + g.ow <= g.w {
                for (d, &v) in dst[kj - g.pad..kj - g.pad + g.ow].iter_mut().zip(line) {
                    *d += v;
                }
                continue;
            }
            for (ox, &v) in line.iter().enumerate() {
                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                if ix >= 0 && ix < g.w as isize {
                    dst[ix as usize] += v;
                }
            }
        }
    }
}

/// Patch matrix `[C*k*k, N*H'*W']` for the whole batch.
fn batch_cols<T: Scalar>(x: &Tensor<T>, g: &ConvGeom, parallel: bool) -> Vec<T> {
    let len = x.batch() * g.positions();
    let mut cols = vec![T::zero(); g.patch() * len];
    if parallel {
        cols.par_chunks_mut(len).enumerate().for_each(|(r, row)| im2col_row(x, g, r, row));
    } else {
        cols.chunks_mut(len).enumerate().for_each(|(r, row)| im2col_row(x, g, r, row));
    }
    cols
}

fn conv_geom<T: Scalar>(x: &Tensor<T>, kernels: &Tensor<T>, stride: usize, pad: usize) -> Result<(usize, usize, ConvGeom), NnError> {
    let (n, c, h, w) = x.dims4()?;
    let (f, kc, k, k2) = kernels.dims4()?;
    if kc != c || k != k2 {
        return Err(NnError::ShapeMismatch { expected: vec![f, c, k, k], actual: kernels.shape().to_vec() });
    }
    match (out_extent(h, k, stride, pad), out_extent(w, k, stride, pad)) {
        (Some(oh), Some(ow)) => Ok((n, f, ConvGeom { c, h, w, k, stride, pad, oh, ow })),
        _ => Err(NnError::KernelLargerThanInput { kernel: k, height: h + 2 * pad, width: w + 2 * pad }),
    }
}

/// Cross-correlation with zero padding. `x: [N, C, H, W]`, `kernels: [F, C, k, k]`,
/// `bias: [F]`, output `[N, F, H', W']`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, kernels: &Tensor<T>, bias: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>, NnError> {
    conv2d_forward(x, kernels, bias, stride, padding, false)
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
    parallel: bool,
) -> Result<Tensor<T>, NnError> {
    let (n, f, g) = conv_geom(x, kernels, stride, padding)?;
    bias.ensure_shape(&[f])?;
    let (kk, p) = (g.patch(), g.positions());
    let cols = batch_cols(x, &g, parallel);
    // [F, N*P] = W [F, K] x cols [K, N*P]
    let mut yf = vec![T::zero(); f * n * p];
    gemm(T::one(), Mat::new(kernels.data(), f, kk), Mat::new(&cols, kk, n * p), T::zero(), &mut yf);
    drop(cols);
    let mut y = Tensor::zeros(&[n, f, g.oh, g.ow]);
    for (fi, (row, &b)) in yf.chunks_exact(n * p).zip(bias.data()).enumerate() {
        for (i, src) in row.chunks_exact(p).enumerate() {
            let dst = &mut y.data_mut()[(i * f + fi) * p..][..p];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v + b;
            }
        }
    }
    Ok(y)
}

/// Gradients of [`conv2d`] with respect to input, kernels and bias. The
/// batch is reduced inside a single matrix product, so the result does not
/// depend on `parallel`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    padding: usize,
    parallel: bool,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    let (n, f, g) = conv_geom(x, kernels, stride, padding)?;
    dy.ensure_shape(&[n, f, g.oh, g.ow])?;
    let (kk, p) = (g.patch(), g.positions());

    let mut db = Tensor::zeros(&[f]);
    // dY as [F, N*P]
    let mut dyf = vec![T::zero(); f * n * p];
    for (i, dys) in dy.data().chunks_exact(f * p).enumerate() {
        for (fi, plane) in dys.chunks_exact(p).enumerate() {
            db.data_mut()[fi] += plane.iter().copied().sum::<T>();
            dyf[fi * n * p + i * p..][..p].copy_from_slice(plane);
        }
    }

    let mut cols = batch_cols(x, &g, parallel);
    let mut dw = Tensor::zeros(kernels.shape());
    gemm(T::one(), Mat::new(&dyf, f, n * p), Mat::new(&cols, kk, n * p).t(), T::zero(), dw.data_mut());
    gemm(T::one(), Mat::new(kernels.data(), f, kk).t(), Mat::new(&dyf, f, n * p), T::zero(), &mut cols);

    let mut dx = Tensor::zeros(x.shape());
    let in_len = x.sample_len();
    if parallel {
        dx.data_mut().par_chunks_mut(in_len).enumerate().for_each(|(i, d)| col2im(&cols, &g, n, i, d));
    } else {
        dx.data_mut().chunks_mut(in_len).enumerate().for_each(|(i, d)| col2im(&cols, &g, n, i, d));
    }
    Ok((dx, dw, db))
}

/// Cache needed to route pooling gradients.
#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    /// For max pooling: flat input index of each output's winner.
    argmax: Vec<usize>,
}

struct PoolGeom {
    size: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn pool_geom(h: usize, w: usize, size: usize, stride: usize, pad: usize) -> Result<PoolGeom, NnError> {
    if pad >= size {
        return Err(NnError::InvalidLayer(format!("pool padding {pad} must be smaller than window {size}")));
    }
    match (out_extent(h, size, stride, pad), out_extent(w, size, stride, pad)) {
        (Some(oh), Some(ow)) => Ok(PoolGeom { size, stride, pad, oh, ow }),
        _ => Err(NnError::WindowLargerThanInput { window: size, height: h + 2 * pad, width: w + 2 * pad }),
    }
}

/// Window bounds clipped to the real (unpadded) input.
fn window(o: usize, g: &PoolGeom, n: usize) -> (usize, usize) {
    let start = (o * g.stride) as isize - g.pad as isize;
    let lo = start.max(0) as usize;
    let hi = ((start + g.size as isize).min(n as isize)).max(0) as usize;
    (lo, hi)
}

/// Max or average pooling. Padding never wins a max and is excluded from
/// average denominators.
pub fn pool2d<T: Scalar>(x: &Tensor<T>, kind: PoolKind, size: usize, stride: usize, padding: usize) -> Result<Tensor<T>, NnError> {
    pool2d_forward(x, kind, size, stride, padding).map(|(y, _)| y)
}

pub(crate) fn pool2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kind: PoolKind,
    size: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, PoolCache), NnError> {
    let (n, c, h, w) = x.dims4()?;
    let g = pool_geom(h, w, size, stride, padding)?;
    let mut y = Tensor::zeros(&[n, c, g.oh, g.ow]);
    let mut argmax = if kind == PoolKind::Max { vec![0usize; y.len()] } else { Vec::new() };
    let xd = x.data();
    let yd = y.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..g.oh {
            let (y0, y1) = window(oy, &g, h);
            for ox in 0..g.ow {
                let (x0, x1) = window(ox, &g, w);
                let out = plane * g.oh * g.ow + oy * g.ow + ox;
                match kind {
                    PoolKind::Max => {
                        let mut best = base + y0 * w + x0;
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                let idx = base + iy * w + ix;
                                if xd[idx] > xd[best] {
                                    best = idx;
                                }
                            }
                        }
                        yd[out] = xd[best];
                        argmax[out] = best;
                    }
                    PoolKind::Avg => {
                        let mut sum = T::zero();
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                sum += xd[base + iy * w + ix];
                            }
                        }
                        yd[out] = sum / T::of(((y1 - y0) * (x1 - x0)) as f64);
                    }
                }
            }
        }
    }
    Ok((y, PoolCache { input_shape: x.shape().to_vec(), argmax }))
}

pub(crate) fn pool2d_backward<T: Scalar>(
    dy: &Tensor<T>,
    cache: &PoolCache,
    kind: PoolKind,
    size: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w) = match *cache.input_shape.as_slice() {
        [n, c, h, w] => (n, c, h, w),
        _ => unreachable!("pool cache always holds a rank-4 shape"),
    };
    let g = pool_geom(h, w, size, stride, padding)?;
    dy.ensure_shape(&[n, c, g.oh, g.ow])?;
    let mut dx = Tensor::zeros(&cache.input_shape);
    let dxd = dx.data_mut();
    match kind {
        PoolKind::Max => {
            for (&src, &grad) in cache.argmax.iter().zip(dy.data()) {
                dxd[src] += grad;
            }
        }
        PoolKind::Avg => {
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..g.oh {
                    let (y0, y1) = window(oy, &g, h);
                    for ox in 0..g.ow {
                        let (x0, x1) = window(ox, &g, w);
                        let grad = dy.data()[plane * g.oh * g.ow + oy * g.ow + ox] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                dxd[base + iy * w + ix] += grad;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// `(batch, channels, spatial)` view used by batch normalisation.
fn bn_dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize), NnError> {
    match *x.shape() {
        [n, c, h, w] => Ok((n, c, h * w)),
        [n, d] => Ok((n, d, 1)),
        _ => Err(NnError::RankMismatch { expected: 4, actual: x.shape().to_vec() }),
    }
}

/// Running statistics and hyper-parameters of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: T::of(0.9),
            eps: T::of(1e-5),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    mode: Mode,
    x_hat: Vec<T>,
    inv_std: Vec<T>,
}

/// Per-channel normalisation over batch and spatial positions, followed by
/// `gamma * x_hat + beta`. Training mode uses batch statistics and updates the
/// running averages (`running = m * running + (1 - m) * batch`).
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<Tensor<T>, NnError> {
    batch_norm_forward(x, gamma, beta, state, mode).map(|(y, _)| y)
}

pub(crate) fn batch_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>), NnError> {
    let (n, c, s) = bn_dims(x)?;
    gamma.ensure_shape(&[c])?;
    beta.ensure_shape(&[c])?;
    // the (sample, channel) runs of `s` contiguous values
    let runs = || (0..n * c).map(|j| (j % c, j * s));
    let xd = x.data();
    let (mean, var) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(NnError::SingletonBatchInTrainMode);
            }
            let count = n * s;
            let m = T::of(count as f64);
            let mut sums = vec![T::zero(); c];
            for (ch, at) in runs() {
                sums[ch] += xd[at..at + s].iter().copied().sum::<T>();
            }
            let means: Vec<T> = sums.iter().map(|&v| v / m).collect();
            let mut sq = vec![T::zero(); c];
            for (ch, at) in runs() {
                let mu = means[ch];
                sq[ch] += xd[at..at + s].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
            }
            let mom = state.momentum;
            let unbiased_den = T::of((count - 1).max(1) as f64);
            for ch in 0..c {
                let rm = &mut state.running_mean.data_mut()[ch];
                *rm = mom * *rm + (T::one() - mom) * means[ch];
                let rv = &mut state.running_var.data_mut()[ch];
                *rv = mom * *rv + (T::one() - mom) * sq[ch] / unbiased_den;
            }
            (means, sq.iter().map(|&v| v / m).collect::<Vec<T>>())
        }
        Mode::Eval => (state.running_mean.data().to_vec(), state.running_var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + state.eps).sqrt()).collect();
    let keep = mode == Mode::Train;
    let mut x_hat = if keep { vec![T::zero(); x.len()] } else { Vec::new() };
    let mut y = Tensor::zeros(x.shape());
    let yd = y.data_mut();
    for (ch, at) in runs() {
        let (mu, inv, g, b) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
        let src = &xd[at..at + s];
        if keep {
            let xh = &mut x_hat[at..at + s];
            for ((o, h), &v) in yd[at..at + s].iter_mut().zip(xh.iter_mut()).zip(src) {
                *h = (v - mu) * inv;
                *o = g * *h + b;
            }
        } else {
            for (o, &v) in yd[at..at + s].iter_mut().zip(src) {
                *o = g * ((v - mu) * inv) + b;
            }
        }
    }
    Ok((y, BatchNormCache { mode, x_hat, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batch_norm_backward<T: Scalar>(
    dy: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    let (n, c, s) = bn_dims(dy)?;
    if cache.mode != Mode::Train || cache.x_hat.len() != dy.len() {
        return Err(NnError::NoForwardCache);
    }
    let dyd = dy.data();
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xh = vec![T::zero(); c];
    for j in 0..n * c {
        let (ch, at) = (j % c, j * s);
        let g = &dyd[at..at + s];
        sum_dy[ch] += g.iter().copied().sum::<T>();
        sum_dy_xh[ch] += g.iter().zip(&cache.x_hat[at..at + s]).map(|(&a, &b)| a * b).sum::<T>();
    }
    let m = T::of((n * s) as f64);
    let mut dx = Tensor::zeros(dy.shape());
    let dxd = dx.data_mut();
    for j in 0..n * c {
        let (ch, at) = (j % c, j * s);
        let scale = gamma.data()[ch] * cache.inv_std[ch] / m;
        let (sd, sdx) = (sum_dy[ch], sum_dy_xh[ch]);
        for ((o, &g), &h) in dxd[at..at + s].iter_mut().zip(&dyd[at..at + s]).zip(&cache.x_hat[at..at + s]) {
            *o = scale * (m * g - sd - h * sdx);
        }
    }
    Ok((dx, Tensor::from_vec(&[c], sum_dy_xh)?, Tensor::from_vec(&[c], sum_dy)?))
}

/// Inverted dropout mask: zero with probability `rate`, otherwise `1 / (1 - rate)`.
pub(crate) fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect()
}

/// Inverted dropout. Identity in evaluation mode or when `rate == 0`.
pub fn dropout<T: Scalar>(x: &Tensor<T>, rate: f64, mode: Mode, seed: u64) -> Result<Tensor<T>, NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidLayer(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask: Vec<T> = dropout_mask(x.len(), rate, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
    Ok(y)
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: ActivationKind) -> Tensor<T> {
    let mut y = x.clone();
    activation_in_place(&mut y, kind);
    y
}

pub(crate) fn activation_in_place<T: Scalar>(x: &mut Tensor<T>, kind: ActivationKind) {
    let zero = T::zero();
    match kind {
        ActivationKind::Tanh => x.data_mut().iter_mut().for_each(|v| *v = v.tanh()),
        ActivationKind::Relu => x.data_mut().iter_mut().for_each(|v| *v = if *v > zero { *v } else { zero }),
    }
}

/// Gradient through an activation given only its output `y` (for ReLU,
/// `y > 0` exactly when the input was positive).
pub(crate) fn activation_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>, kind: ActivationKind) -> Tensor<T> {
    let data = match kind {
        ActivationKind::Tanh => y.data().iter().zip(dy.data()).map(|(&y, &g)| g * (T::one() - y * y)).collect(),
        ActivationKind::Relu => {
            y.data().iter().zip(dy.data()).map(|(&y, &g)| if y > T::zero() { g } else { T::zero() }).collect()
        }
    };
    Tensor::from_vec(y.shape(), data).unwrap()
}

/// Row-wise softmax of `[N, D]` logits with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (_, d) = logits.dims2()?;
    let mut y = logits.clone();
    for row in y.data_mut().chunks_exact_mut(d) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(y)
}

pub(crate) fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (_, d) = y.dims2()?;
    dy.ensure_shape(y.shape())?;
    let mut dx = Tensor::zeros(y.shape());
    for ((yr, gr), dr) in y.data().chunks_exact(d).zip(dy.data().chunks_exact(d)).zip(dx.data_mut().chunks_exact_mut(d)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for i in 0..d {
            dr[i] = yr[i] * (gr[i] - dot);
        }
    }
    Ok(dx)
}

/// Lower clamp applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln(max(probs[label], 1e-12))`.
pub fn cross_entropy<T: Scalar>(probs: &[T], label: usize) -> T {
    -(probs[label].max(T::of(PROB_FLOOR))).ln()
}

/// Mean cross entropy over a `[N, D]` batch of probabilities.
pub fn mean_cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<T, NnError> {
    let (n, d) = probs.dims2()?;
    if labels.len() != n {
        return Err(NnError::ShapeMismatch { expected: vec![n], actual: vec![labels.len()] });
    }
    let total: T = probs.data().chunks_exact(d).zip(labels).map(|(row, &l)| cross_entropy(row, l)).sum();
    Ok(total / T::of(n as f64))
}

/// Gradient of [`mean_cross_entropy`] composed with softmax, with respect to
/// the logits: `(probs - onehot) / N`.
pub fn softmax_cross_entropy_grad<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>, NnError> {
    let (n, d) = probs.dims2()?;
    if labels.len() != n {
        return Err(NnError::ShapeMismatch { expected: vec![n], actual: vec![labels.len()] });
    }
    let scale = T::one() / T::of(n as f64);
    let mut g = probs.clone();
    for (row, &l) in g.data_mut().chunks_exact_mut(d).zip(labels) {
        row[l] -= T::one();
        row.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(g)
}

/// `y = x W^T + b` for `x: [N, in]`, `W: [out, in]`, `b: [out]`.
pub fn dense<T: Scalar>(x: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, d_in) = x.dims2()?;
    let (d_out, w_in) = weights.dims2()?;
    if w_in != d_in {
        return Err(NnError::ShapeMismatch { expected: vec![d_out, d_in], actual: weights.shape().to_vec() });
    }
    bias.ensure_shape(&[d_out])?;
    let mut y = Tensor::zeros(&[n, d_out]);
    for row in y.data_mut().chunks_exact_mut(d_out) {
        row.copy_from_slice(bias.data());
    }
    gemm(T::one(), Mat::new(x.data(), n, d_in), Mat::new(weights.data(), d_out, d_in).t(), T::one(), y.data_mut());
    Ok(y)
}

/// Returns `(dx, dW, db)`.
pub(crate) fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    let (n, d_in) = x.dims2()?;
    let (d_out, _) = weights.dims2()?;
    dy.ensure_shape(&[n, d_out])?;
    let mut dx = Tensor::zeros(&[n, d_in]);
    gemm(T::one(), Mat::new(dy.data(), n, d_out), Mat::new(weights.data(), d_out, d_in), T::zero(), dx.data_mut());
    let mut dw = Tensor::zeros(&[d_out, d_in]);
    gemm(T::one(), Mat::new(dy.data(), n, d_out).t(), Mat::new(x.data(), n, d_in), T::zero(), dw.data_mut());
    let mut db = Tensor::zeros(&[d_out]);
    for row in dy.data().chunks_exact(d_out) {
        db.data_mut().iter_mut().zip(row).for_each(|(a, &b)| *a += b);
    }
    Ok((dx, dw, db))
}
