//! Central finite-difference verification of analytic gradients, in `f64`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::Init;
use super::ops;
use super::{Layer, LayerSpec, Mode, Model, NnError, Tensor};

pub const STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Number of scalar partial derivatives compared.
    pub checked: usize,
}

impl GradCheckReport {
    fn absorb(&mut self, analytic: f64, numeric: f64) {
        self.max_rel_error = self.max_rel_error.max(rel_error(analytic, numeric));
        self.checked += 1;
    }
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Random values in (-1, 1) that are pairwise at least `1 / len` apart and
/// at least `1 / (2 len)` away from 0. Max pooling and ReLU are not
/// differentiable at ties and at 0, and a central difference that straddles
/// such a kink compares against a slope that does not exist.
fn separated_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let spacing = 2.0 / n as f64;
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(rng);
    Tensor::from_fn(shape, |i| -1.0 + spacing * (slots[i] as f64 + 0.5 + rng.random_range(-0.25..0.25)))
}

/// Checks one layer on a random batch of shape `input` (batch first) against
/// the surrogate loss `sum(g * layer(x))` for a random `g`. Input and every
/// parameter entry are perturbed.
pub fn check_layer(spec: LayerSpec, input: &[usize], seed: u64) -> Result<GradCheckReport, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Layer::<f64>::new(spec, &input[1..], Init::Xavier, &mut rng)?;
    for p in layer.params_mut() {
        *p = random_tensor(p.shape(), &mut rng);
    }
    let x = separated_tensor(input, &mut rng);
    let mask_seed = rng.random();

    let eval = |layer: &mut Layer<f64>, x: &Tensor<f64>| -> Result<Tensor<f64>, NnError> {
        layer.reseed(mask_seed);
        layer.forward(x.clone(), Mode::Train, false)
    };
    let y = eval(&mut layer, &x)?;
    let g = random_tensor(y.shape(), &mut rng);
    let (dx, dparams) = layer.backward(g.clone(), false)?;
    let loss = |y: &Tensor<f64>| y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum::<f64>();

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0 };
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + STEP;
        let up = loss(&eval(&mut layer, &xp)?);
        xp.data_mut()[i] = orig - STEP;
        let down = loss(&eval(&mut layer, &xp)?);
        xp.data_mut()[i] = orig;
        report.absorb(dx.data()[i], (up - down) / (2.0 * STEP));
    }
    for (k, dp) in dparams.iter().enumerate() {
        for i in 0..dp.len() {
            let orig = layer.params()[k].data()[i];
            layer.params_mut()[k].data_mut()[i] = orig + STEP;
            let up = loss(&eval(&mut layer, &x)?);
            layer.params_mut()[k].data_mut()[i] = orig - STEP;
            let down = loss(&eval(&mut layer, &x)?);
            layer.params_mut()[k].data_mut()[i] = orig;
            report.absorb(dp.data()[i], (up - down) / (2.0 * STEP));
        }
    }
    Ok(report)
}

/// Checks a whole network under mean cross entropy, perturbing the input and
/// every parameter. Dropout masks are frozen by reseeding before each pass.
pub fn check_model(model: &mut Model<f64>, x: &Tensor<f64>, labels: &[usize], seed: u64) -> Result<GradCheckReport, NnError> {
    let eval = |model: &mut Model<f64>, x: &Tensor<f64>| -> Result<f64, NnError> {
        for (i, layer) in model.layers_mut().iter_mut().enumerate() {
            layer.reseed(seed.wrapping_add(i as u64));
        }
        let probs = model.forward(x, Mode::Train)?;
        ops::mean_cross_entropy(&probs, labels)
    };
    eval(model, x)?;
    let grads = model.backward(labels)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0 };
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + STEP;
        let up = eval(model, &xp)?;
        xp.data_mut()[i] = orig - STEP;
        let down = eval(model, &xp)?;
        xp.data_mut()[i] = orig;
        report.absorb(grads.input.data()[i], (up - down) / (2.0 * STEP));
    }
    for (l, layer_grads) in grads.params.iter().enumerate() {
        for (k, dp) in layer_grads.iter().enumerate() {
            for i in 0..dp.len() {
                let orig = model.layers()[l].params()[k].data()[i];
                model.layers_mut()[l].params_mut()[k].data_mut()[i] = orig + STEP;
                let up = eval(model, x)?;
                model.layers_mut()[l].params_mut()[k].data_mut()[i] = orig - STEP;
                let down = eval(model, x)?;
                model.layers_mut()[l].params_mut()[k].data_mut()[i] = orig;
                report.absorb(dp.data()[i], (up - down) / (2.0 * STEP));
            }
        }
    }
    Ok(report)
}
