use super::{Gradients, Model, NnError, Tensor};
use crate::scalar::Scalar;

/// SGD with classical momentum: `v = m * v + g`, `p -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Self { lr, momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, model: &mut Model<T>, grads: &Gradients<T>) -> Result<(), NnError> {
        let layers = model.layers_mut();
        if grads.params.len() != layers.len() {
            return Err(NnError::ShapeMismatch { expected: vec![layers.len()], actual: vec![grads.params.len()] });
        }
        for (layer, g) in layers.iter().zip(&grads.params) {
            if layer.params().len() != g.len() {
                return Err(NnError::ShapeMismatch { expected: vec![layer.params().len()], actual: vec![g.len()] });
            }
            for (p, gp) in layer.params().iter().zip(g) {
                gp.ensure_shape(p.shape())?;
            }
        }
        if self.velocity.is_empty() {
            self.velocity =
                layers.iter().map(|l| l.params().iter().map(|p| Tensor::zeros(p.shape())).collect()).collect();
        }
        for ((layer, g), v) in layers.iter_mut().zip(&grads.params).zip(&mut self.velocity) {
            for ((p, gp), vp) in layer.params_mut().iter_mut().zip(g).zip(v) {
                for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(gp.data()).zip(vp.data_mut()) {
                    *vi = self.momentum * *vi + gi;
                    *pi -= self.lr * *vi;
                }
            }
        }
        Ok(())
    }
}
