use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::ops::{self, ActivationKind, BatchNormCache, BatchNormState, PoolCache, PoolKind};
use super::{Mode, NnError, Tensor};
use crate::scalar::Scalar;

/// One layer of a sequential network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { filters: usize, kernel: usize, stride: usize, padding: usize },
    Pool { pool: PoolKind, size: usize, stride: usize, padding: usize },
    BatchNorm,
    Activation { function: ActivationKind },
    Flatten,
    Dense { units: usize },
    Dropout { rate: f64 },
    Softmax,
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv { filters, kernel, stride, padding }
    }

    pub fn max_pool(size: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Pool { pool: PoolKind::Max, size, stride, padding }
    }

    pub fn avg_pool(size: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Pool { pool: PoolKind::Avg, size, stride, padding }
    }

    pub fn relu() -> Self {
        LayerSpec::Activation { function: ActivationKind::Relu }
    }

    pub fn tanh() -> Self {
        LayerSpec::Activation { function: ActivationKind::Tanh }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: String| Err(NnError::InvalidLayer(msg));
        match *self {
            LayerSpec::Conv { filters, kernel, stride, .. } if filters == 0 || kernel == 0 || stride == 0 => {
                bad(format!("{self}: filters, kernel and stride must be at least 1"))
            }
            LayerSpec::Pool { size, stride, padding, .. } if size == 0 || stride == 0 || padding >= size => {
                bad(format!("{self}: size and stride must be at least 1 and padding below size"))
            }
            LayerSpec::Dense { units: 0 } => bad("dense layer with zero units".into()),
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => bad(format!("dropout rate {rate} outside [0, 1)")),
            _ => Ok(()),
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. } | LayerSpec::BatchNorm)
    }

    /// Per-sample output shape for a per-sample input shape (`[C, H, W]` or `[D]`).
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>, NnError> {
        self.validate()?;
        let underflow = || NnError::ShapeUnderflow { index, layer: self.to_string(), input: input.to_vec() };
        let spatial = |k: usize, s: usize, p: usize| -> Result<(usize, usize, usize), NnError> {
            match *input {
                [c, h, w] => match (ops::out_extent(h, k, s, p), ops::out_extent(w, k, s, p)) {
                    (Some(oh), Some(ow)) => Ok((c, oh, ow)),
                    _ => Err(underflow()),
                },
                _ => Err(NnError::RankMismatch { expected: 3, actual: input.to_vec() }),
            }
        };
        match *self {
            LayerSpec::Conv { filters, kernel, stride, padding } => {
                let (_, h, w) = spatial(kernel, stride, padding)?;
                Ok(vec![filters, h, w])
            }
            LayerSpec::Pool { size, stride, padding, .. } => {
                let (c, h, w) = spatial(size, stride, padding)?;
                Ok(vec![c, h, w])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { units } => match *input {
                [_] => Ok(vec![units]),
                _ => Err(NnError::RankMismatch { expected: 1, actual: input.to_vec() }),
            },
            LayerSpec::Softmax => match *input {
                [_] => Ok(input.to_vec()),
                _ => Err(NnError::RankMismatch { expected: 1, actual: input.to_vec() }),
            },
            LayerSpec::BatchNorm | LayerSpec::Activation { .. } | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
        }
    }

    /// Trainable parameter count given the per-sample input shape.
    pub fn param_count(&self, input: &[usize]) -> usize {
        match *self {
            LayerSpec::Conv { filters, kernel, .. } => filters * (input[0] * kernel * kernel + 1),
            LayerSpec::Dense { units } => units * (input[0] + 1),
            LayerSpec::BatchNorm => 2 * input[0],
            _ => 0,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv { filters, kernel, stride, padding } => {
                write!(f, "conv {filters}@{kernel}x{kernel} s{stride} p{padding}")
            }
            LayerSpec::Pool { pool, size, stride, padding } => {
                let name = match pool {
                    PoolKind::Max => "maxpool",
                    PoolKind::Avg => "avgpool",
                };
                write!(f, "{name} {size}x{size} s{stride} p{padding}")
            }
            LayerSpec::BatchNorm => f.write_str("batchnorm"),
            LayerSpec::Activation { function: ActivationKind::Relu } => f.write_str("relu"),
            LayerSpec::Activation { function: ActivationKind::Tanh } => f.write_str("tanh"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Dense { units } => write!(f, "dense {units}"),
            LayerSpec::Dropout { rate } => write!(f, "dropout {rate}"),
            LayerSpec::Softmax => f.write_str("softmax"),
        }
    }
}

/// Weight initialisation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    /// `N(0, 2 / fan_in)`
    Kaiming,
    /// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`
    Xavier,
}

#[derive(Debug, Clone, Default)]
enum Cache<T> {
    #[default]
    Empty,
    Input(Tensor<T>),
    Output(Tensor<T>),
    Pool(PoolCache),
    Norm(BatchNormCache<T>),
    Mask(Vec<T>),
    Shape(Vec<usize>),
}

/// A layer instance: its spec, parameters, and whatever the last training
/// forward pass left behind for the backward pass.
#[derive(Debug, Clone)]
pub struct Layer<T> {
    spec: LayerSpec,
    params: Vec<Tensor<T>>,
    norm: Option<BatchNormState<T>>,
    rng: Option<ChaCha8Rng>,
    cache: Cache<T>,
}

impl<T: Scalar> Layer<T> {
    /// Builds a layer for the given per-sample input shape. Conv and dense
    /// weights are drawn from `rng`; biases start at zero, batch-norm at
    /// `gamma = 1, beta = 0`.
    pub(crate) fn new(spec: LayerSpec, input: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        spec.output_shape(0, input)?;
        let mut params = Vec::new();
        let mut norm = None;
        let mut own_rng = None;
        match spec {
            LayerSpec::Conv { filters, kernel, .. } => {
                let c = input[0];
                let shape = [filters, c, kernel, kernel];
                params.push(init_weights(&shape, c * kernel * kernel, filters * kernel * kernel, init, rng));
                params.push(Tensor::zeros(&[filters]));
            }
            LayerSpec::Dense { units } => {
                let d = input[0];
                params.push(init_weights(&[units, d], d, units, init, rng));
                params.push(Tensor::zeros(&[units]));
            }
            LayerSpec::BatchNorm => {
                let c = input[0];
                params.push(Tensor::full(&[c], T::one()));
                params.push(Tensor::zeros(&[c]));
                norm = Some(BatchNormState::new(c));
            }
            LayerSpec::Dropout { .. } => own_rng = Some(ChaCha8Rng::seed_from_u64(rng.random())),
            _ => {}
        }
        Ok(Self { spec, params, norm, rng: own_rng, cache: Cache::Empty })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    /// Trainable tensors: `[weights, bias]` or `[gamma, beta]`.
    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// Batch-norm running statistics `(mean, var)`.
    pub fn running_stats(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.norm.as_ref().map(|s| (&s.running_mean, &s.running_var))
    }

    pub fn running_stats_mut(&mut self) -> Option<(&mut Tensor<T>, &mut Tensor<T>)> {
        self.norm.as_mut().map(|s| (&mut s.running_mean, &mut s.running_var))
    }

    /// Restarts the dropout mask stream.
    pub fn reseed(&mut self, seed: u64) {
        if let Some(rng) = self.rng.as_mut() {
            *rng = ChaCha8Rng::seed_from_u64(seed);
        }
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<(), NnError> {
        match &mut self.spec {
            LayerSpec::Dropout { rate: r } => {
                let next = LayerSpec::Dropout { rate };
                next.validate()?;
                *r = rate;
                Ok(())
            }
            other => Err(NnError::InvalidLayer(format!("{other} has no dropout rate"))),
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = Cache::Empty;
    }

    /// Forward pass over a batch. Training mode keeps what backward needs.
    pub fn forward(&mut self, x: Tensor<T>, mode: Mode, parallel: bool) -> Result<Tensor<T>, NnError> {
        let train = mode == Mode::Train;
        self.cache = Cache::Empty;
        let (y, cache) = match self.spec {
            LayerSpec::Conv { stride, padding, .. } => {
                let y = ops::conv2d_forward(&x, &self.params[0], &self.params[1], stride, padding, parallel)?;
                (y, Cache::Input(x))
            }
            LayerSpec::Pool { pool, size, stride, padding } => {
                let (y, c) = ops::pool2d_forward(&x, pool, size, stride, padding)?;
                (y, Cache::Pool(c))
            }
            LayerSpec::BatchNorm => {
                let state = self.norm.as_mut().expect("batch norm layer has state");
                let (y, c) = ops::batch_norm_forward(&x, &self.params[0], &self.params[1], state, mode)?;
                (y, Cache::Norm(c))
            }
            LayerSpec::Activation { function } => {
                let mut y = x;
                ops::activation_in_place(&mut y, function);
                let cache = if train { Cache::Output(y.clone()) } else { Cache::Empty };
                (y, cache)
            }
            LayerSpec::Flatten => {
                let shape = x.shape().to_vec();
                let n = x.batch();
                let d = x.sample_len();
                (x.reshape(&[n, d])?, Cache::Shape(shape))
            }
            LayerSpec::Dense { .. } => {
                let y = ops::dense(&x, &self.params[0], &self.params[1])?;
                (y, Cache::Input(x))
            }
            LayerSpec::Dropout { rate } => {
                if !train || rate == 0.0 {
                    (x, Cache::Mask(Vec::new()))
                } else {
                    let rng = self.rng.as_mut().expect("dropout layer has an rng");
                    let mask: Vec<T> = ops::dropout_mask(x.len(), rate, rng);
                    let mut y = x;
                    y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
                    (y, Cache::Mask(mask))
                }
            }
            LayerSpec::Softmax => {
                let y = ops::softmax(&x)?;
                (y.clone(), Cache::Output(y))
            }
        };
        if train {
            self.cache = cache;
        }
        Ok(y)
    }

    /// Output of the last training forward pass, when it was cached (softmax
    /// and activations).
    pub fn cached_output(&self) -> Option<&Tensor<T>> {
        match &self.cache {
            Cache::Output(y) => Some(y),
            _ => None,
        }
    }

    /// Backward pass. Returns the input gradient and one gradient per
    /// parameter tensor. Consumes the cache.
    pub fn backward(&mut self, dy: Tensor<T>, parallel: bool) -> Result<(Tensor<T>, Vec<Tensor<T>>), NnError> {
        let cache = std::mem::take(&mut self.cache);
        match (self.spec, cache) {
            (LayerSpec::Conv { stride, padding, .. }, Cache::Input(x)) => {
                let (dx, dw, db) = ops::conv2d_backward(&x, &self.params[0], &dy, stride, padding, parallel)?;
                Ok((dx, vec![dw, db]))
            }
            (LayerSpec::Pool { pool, size, stride, padding }, Cache::Pool(c)) => {
                Ok((ops::pool2d_backward(&dy, &c, pool, size, stride, padding)?, Vec::new()))
            }
            (LayerSpec::BatchNorm, Cache::Norm(c)) => {
                let (dx, dg, db) = ops::batch_norm_backward(&dy, &self.params[0], &c)?;
                Ok((dx, vec![dg, db]))
            }
            (LayerSpec::Activation { function }, Cache::Output(y)) => {
                dy.ensure_shape(y.shape())?;
                Ok((ops::activation_backward(&y, &dy, function), Vec::new()))
            }
            (LayerSpec::Flatten, Cache::Shape(shape)) => Ok((dy.reshape(&shape)?, Vec::new())),
            (LayerSpec::Dense { .. }, Cache::Input(x)) => {
                let (dx, dw, db) = ops::dense_backward(&x, &self.params[0], &dy)?;
                Ok((dx, vec![dw, db]))
            }
            (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => {
                let mut dx = dy;
                if !mask.is_empty() {
                    if mask.len() != dx.len() {
                        return Err(NnError::ShapeMismatch { expected: vec![mask.len()], actual: dx.shape().to_vec() });
                    }
                    dx.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
                }
                Ok((dx, Vec::new()))
            }
            (LayerSpec::Softmax, Cache::Output(y)) => Ok((ops::softmax_backward(&y, &dy)?, Vec::new())),
            _ => Err(NnError::NoForwardCache),
        }
    }
}

fn init_weights<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, init: Init, rng: &mut ChaCha8Rng) -> Tensor<T> {
    match init {
        Init::Kaiming => {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            Tensor::from_fn(shape, |_| T::of(normal.sample(rng)))
        }
        Init::Xavier => {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let uniform = Uniform::new_inclusive(-a, a).unwrap();
            Tensor::from_fn(shape, |_| T::of(uniform.sample(rng)))
        }
    }
}
