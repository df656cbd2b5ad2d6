use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::Init;
use super::ops::{self, ActivationKind};
use super::{Layer, LayerSpec, Mode, NnError, Tensor};
use crate::scalar::Scalar;

/// Parameter gradients (one list per layer, aligned with [`Layer::params`])
/// and the gradient with respect to the network input.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: Vec<Vec<Tensor<T>>>,
    pub input: Tensor<T>,
}

/// A sequential network over per-sample inputs of a fixed shape.
#[derive(Debug, Clone)]
pub struct Model<T> {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    parallel: bool,
}

impl<T: Scalar> Model<T> {
    /// Builds and initialises a network. ReLU-fed layers get Kaiming normal
    /// weights, everything else Xavier uniform.
    pub fn new(name: impl Into<String>, input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let init = match following_activation(&specs[i + 1..]) {
                Some(ActivationKind::Relu) => Init::Kaiming,
                _ => Init::Xavier,
            };
            let next = spec.output_shape(i, &shape)?;
            layers.push(Layer::new(*spec, &shape, init, &mut rng)?);
            shape = next;
        }
        Ok(Self { name: name.into(), input_shape: input_shape.to_vec(), layers, parallel: false })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| *l.spec()).collect()
    }

    /// Allows per-sample parallelism inside conv layers. Off by default; the
    /// parallel weight-gradient reduction is not bit-reproducible.
    pub fn set_parallel(&mut self, parallel: bool) {
        self.parallel = parallel;
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(|p| p.len()).sum()
    }

    /// Runs the network on `[N, ...input_shape]` and returns the last layer's
    /// output (class probabilities for the built architectures).
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let mut expected = vec![x.batch()];
        expected.extend_from_slice(&self.input_shape);
        x.ensure_shape(&expected)?;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(h, mode, self.parallel)?;
        }
        Ok(h)
    }

    /// Backpropagates mean cross entropy against `labels` through the cached
    /// training forward pass. A trailing softmax is fused with the loss.
    pub fn backward(&mut self, labels: &[usize]) -> Result<Gradients<T>, NnError> {
        let last = self.layers.last_mut().ok_or(NnError::NoForwardCache)?;
        let probs = match (last.spec(), last.cached_output()) {
            (LayerSpec::Softmax, Some(p)) => p.clone(),
            (LayerSpec::Softmax, None) => return Err(NnError::NoForwardCache),
            (other, _) => return Err(NnError::InvalidLayer(format!("cross entropy backward needs a softmax output, found {other}"))),
        };
        let classes = probs.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(NnError::LabelOutOfRange { label: bad, classes });
        }
        let dlogits = ops::softmax_cross_entropy_grad(&probs, labels)?;
        last.clear_cache();
        let n = self.layers.len();
        self.backward_range(n - 1, dlogits)
    }

    /// Backpropagates an arbitrary upstream gradient of the network output.
    pub fn backward_from(&mut self, dy: Tensor<T>) -> Result<Gradients<T>, NnError> {
        let n = self.layers.len();
        self.backward_range(n, dy)
    }

    fn backward_range(&mut self, end: usize, mut grad: Tensor<T>) -> Result<Gradients<T>, NnError> {
        let mut params = vec![Vec::new(); self.layers.len()];
        for i in (0..end).rev() {
            let (dx, dp) = self.layers[i].backward(grad, self.parallel)?;
            params[i] = dp;
            grad = dx;
        }
        for layer in &mut self.layers[end..] {
            layer.clear_cache();
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if params[i].is_empty() && !layer.params().is_empty() {
                params[i] = layer.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
            }
        }
        Ok(Gradients { params, input: grad })
    }

    /// Argmax class per sample, evaluation mode.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Vec<usize>, NnError> {
        let probs = self.forward(x, Mode::Eval)?;
        let (_, d) = probs.dims2()?;
        Ok(probs.data().chunks_exact(d).map(argmax).collect())
    }

    /// Same network with every parameter and running statistic converted.
    pub fn cast<U: Scalar>(&self, seed: u64) -> Result<Model<U>, NnError> {
        let mut out = Model::<U>::new(self.name.clone(), &self.input_shape, &self.specs(), seed)?;
        out.parallel = self.parallel;
        for (dst, src) in out.layers.iter_mut().zip(&self.layers) {
            for (d, s) in dst.params_mut().iter_mut().zip(src.params()) {
                *d = s.cast();
            }
            if let (Some((dm, dv)), Some((sm, sv))) = (dst.running_stats_mut(), src.running_stats()) {
                *dm = sm.cast();
                *dv = sv.cast();
            }
        }
        Ok(out)
    }
}

/// Index of the largest value; ties go to the lower index.
pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn following_activation(rest: &[LayerSpec]) -> Option<ActivationKind> {
    for spec in rest {
        match spec {
            LayerSpec::Activation { function } => return Some(*function),
            LayerSpec::Conv { .. } | LayerSpec::Dense { .. } => return None,
            _ => {}
        }
    }
    None
}
