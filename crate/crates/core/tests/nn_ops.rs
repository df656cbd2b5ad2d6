use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsvmorph_core::nn::gradcheck::{check_layer, check_model};
use tsvmorph_core::nn::ops::{
    self, batch_norm, conv2d, cross_entropy, dropout, out_extent, pool2d, softmax, BatchNormState,
};
use tsvmorph_core::nn::{LayerSpec, Mode, Model, NnError, PoolKind, Sgd, Tensor};

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[test]
fn conv_output_extent_for_alexnet_stem() {
    let x = Tensor::<f32>::zeros(&[1, 1, 54, 54]);
    let k = Tensor::<f32>::zeros(&[2, 1, 11, 11]);
    let y = conv2d(&x, &k, &Tensor::zeros(&[2]), 4, 0).unwrap();
    assert_eq!(y.shape(), &[1, 2, 11, 11]);
}

#[test]
fn identity_kernel_reproduces_input() {
    let x = random(&[2, 1, 5, 7], 1);
    let y = conv2d(&x, &t(&[1, 1, 1, 1], &[1.0]), &t(&[1], &[0.0]), 1, 0).unwrap();
    assert_eq!(y, x);
}

#[test]
fn ones_kernel_sums_windows() {
    let x = Tensor::full(&[1, 1, 3, 3], 1.0);
    let y = conv2d(&x, &Tensor::full(&[1, 1, 2, 2], 1.0), &t(&[1], &[0.0]), 1, 0).unwrap();
    assert_eq!(y, Tensor::full(&[1, 1, 2, 2], 4.0));
}

#[test]
fn conv_is_cross_correlation_with_zero_padding() {
    let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let k = t(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 0.0]);
    let y = conv2d(&x, &k, &t(&[1], &[0.5]), 1, 1).unwrap();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    // top-left kernel tap picks x[oy - 1][ox - 1]
    assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5, 1.5, 2.5, 0.5, 3.5, 4.5]);
}

#[test]
fn oversized_kernel_is_rejected() {
    let x = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
    let err = conv2d(&x, &Tensor::zeros(&[1, 1, 5, 5]), &Tensor::zeros(&[1]), 1, 0).unwrap_err();
    assert!(matches!(err, NnError::KernelLargerThanInput { kernel: 5, .. }));
    assert!(conv2d(&x, &Tensor::zeros(&[1, 1, 5, 5]), &Tensor::zeros(&[1]), 1, 1).is_ok());
}

#[test]
fn pooling_examples() {
    let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(pool2d(&x, PoolKind::Max, 2, 2, 0).unwrap().data(), &[4.0]);
    assert_eq!(pool2d(&x, PoolKind::Avg, 2, 2, 0).unwrap().data(), &[2.5]);
    let odd = Tensor::<f64>::zeros(&[1, 1, 21, 21]);
    assert_eq!(pool2d(&odd, PoolKind::Max, 2, 2, 0).unwrap().shape(), &[1, 1, 10, 10]);
    let err = pool2d(&x, PoolKind::Max, 3, 1, 0).unwrap_err();
    assert!(matches!(err, NnError::WindowLargerThanInput { .. }));
}

#[test]
fn padded_cells_never_count() {
    let x = t(&[1, 1, 2, 2], &[-1.0, -2.0, -3.0, -4.0]);
    let max = pool2d(&x, PoolKind::Max, 2, 2, 1).unwrap();
    assert_eq!(max.data(), &[-1.0, -2.0, -3.0, -4.0]);
    let avg = pool2d(&x, PoolKind::Avg, 3, 1, 1).unwrap();
    assert_eq!(avg.data(), &[-2.5, -2.5, -2.5, -2.5]);
}

#[test]
fn batch_norm_keeps_already_normalised_input() {
    // per channel: mean 0, biased variance 1
    let x = t(&[2, 1, 1, 2], &[1.0, -1.0, -1.0, 1.0]);
    let mut state = BatchNormState::new(1);
    let y = batch_norm(&x, &t(&[1], &[1.0]), &t(&[1], &[0.0]), &mut state, Mode::Train).unwrap();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - b).abs() <= 1e-5);
    }
}

#[test]
fn batch_norm_training_output_is_standardised() {
    let x = random(&[8, 3, 4, 4], 3).map(|v| 5.0 * v + 2.0);
    let mut state = BatchNormState::new(3);
    let y = batch_norm(&x, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), &mut state, Mode::Train).unwrap();
    for c in 0..3 {
        let vals: Vec<f64> =
            (0..8).flat_map(|n| (0..16).map(move |j| (n, j))).map(|(n, j)| y.data()[n * 48 + c * 16 + j]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-4);
        assert!((var - 1.0).abs() < 1e-4);
    }
    assert!(state.running_mean.data().iter().all(|m| m.abs() > 0.0));
}

#[test]
fn batch_norm_rejects_singleton_training_batch() {
    let x = random(&[1, 2, 3, 3], 4);
    let mut state = BatchNormState::new(2);
    let err = batch_norm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), &mut state, Mode::Train).unwrap_err();
    assert!(matches!(err, NnError::SingletonBatchInTrainMode));
    assert!(batch_norm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), &mut state, Mode::Eval).is_ok());
}

#[test]
fn batch_norm_eval_is_affine() {
    let mut state = BatchNormState::new(1);
    state.running_mean = t(&[1], &[0.3]);
    state.running_var = t(&[1], &[2.0]);
    let gamma = t(&[1], &[1.7]);
    let beta = t(&[1], &[-0.4]);
    let x = random(&[16, 1, 2, 2], 5);
    let y = batch_norm(&x, &gamma, &beta, &mut state, Mode::Eval).unwrap();
    // least-squares line through (x, y)
    let n = x.len() as f64;
    let (mx, my) = (x.data().iter().sum::<f64>() / n, y.data().iter().sum::<f64>() / n);
    let sxy: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.data().iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let resid = x.data().iter().zip(y.data()).map(|(a, b)| (b - slope * a - icpt).abs()).fold(0.0, f64::max);
    assert!(resid < 1e-6);
}

#[test]
fn dropout_identities() {
    let x = random(&[4, 10], 6);
    assert_eq!(dropout(&x, 0.0, Mode::Train, 1).unwrap(), x);
    assert_eq!(dropout(&x, 0.0, Mode::Eval, 1).unwrap(), x);
    assert_eq!(dropout(&x, 0.7, Mode::Eval, 1).unwrap(), x);
    assert!(dropout(&x, 1.0, Mode::Train, 1).is_err());
}

#[test]
fn dropout_statistics() {
    let n = 1_000_000;
    let x = Tensor::<f64>::full(&[1, n], 1.0);
    let y = dropout(&x, 0.5, Mode::Train, 42).unwrap();
    let survivors = y.data().iter().filter(|v| **v != 0.0).count() as f64 / n as f64;
    assert!((survivors - 0.5).abs() <= 0.002, "survivor fraction {survivors}");
    let mean = y.data().iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() <= 0.01, "mean {mean}");
}

#[test]
fn softmax_and_cross_entropy_examples() {
    let p = softmax(&t(&[1, 3], &[0.0, 0.0, 0.0])).unwrap();
    for v in p.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
    assert!(cross_entropy(&[1.0f64, 0.0, 0.0], 0).abs() <= 1e-9);
    let clamped = cross_entropy(&[1.0f64, 0.0, 0.0], 1);
    assert!((clamped - (1e12f64).ln()).abs() < 1e-6);
}

#[test]
fn fused_gradient_matches_chain_rule() {
    let logits = random(&[5, 3], 7).map(|v| 4.0 * v);
    let labels = [0, 2, 1, 1, 0];
    let probs = softmax(&logits).unwrap();
    let fused = ops::softmax_cross_entropy_grad(&probs, &labels).unwrap();
    // chain rule through the softmax Jacobian with dL/dp = -1 / (N p_label)
    let mut dp = Tensor::zeros(&[5, 3]);
    for (i, &l) in labels.iter().enumerate() {
        dp.data_mut()[i * 3 + l] = -1.0 / (5.0 * probs.data()[i * 3 + l]);
    }
    let mut model = Model::<f64>::new("softmax", &[3], &[LayerSpec::Softmax], 0).unwrap();
    model.forward(&logits, Mode::Train).unwrap();
    let chained = model.backward_from(dp).unwrap().input;
    for (a, b) in fused.data().iter().zip(chained.data()) {
        assert!((a - b).abs() <= 1e-9);
    }
    let onehot_diff: Vec<f64> =
        probs.data().iter().enumerate().map(|(i, p)| (p - f64::from(labels[i / 3] == i % 3)) / 5.0).collect();
    for (a, b) in fused.data().iter().zip(&onehot_diff) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn dense_scalar_gradient_is_analytic() {
    let mut model = Model::<f64>::new("line", &[1], &[LayerSpec::Dense { units: 1 }], 0).unwrap();
    model.layers_mut()[0].params_mut()[0] = t(&[1, 1], &[0.7]);
    model.layers_mut()[0].params_mut()[1] = t(&[1], &[-0.2]);
    let (x, target) = (1.5, 2.0);
    let out = model.forward(&t(&[1, 1], &[x]), Mode::Train).unwrap().data()[0];
    let g = model.backward_from(t(&[1, 1], &[2.0 * (out - target)])).unwrap();
    let expected = 2.0 * (0.7 * x - 0.2 - target) * x;
    assert!((g.params[0][0].data()[0] - expected).abs() < 1e-12);
}

#[test]
fn backward_without_forward_fails() {
    let mut model = Model::<f64>::new("m", &[4], &[LayerSpec::Dense { units: 3 }, LayerSpec::Softmax], 0).unwrap();
    assert!(matches!(model.backward(&[0]), Err(NnError::NoForwardCache)));
    model.forward(&random(&[1, 4], 1), Mode::Eval).unwrap();
    assert!(matches!(model.backward(&[0]), Err(NnError::NoForwardCache)));
}

fn layer_cases() -> Vec<(LayerSpec, Vec<usize>)> {
    vec![
        (LayerSpec::conv(3, 3, 1, 0), vec![2, 2, 6, 6]),
        (LayerSpec::conv(2, 3, 2, 1), vec![2, 2, 7, 7]),
        (LayerSpec::max_pool(2, 2, 0), vec![2, 2, 5, 5]),
        (LayerSpec::max_pool(3, 2, 1), vec![2, 2, 5, 5]),
        (LayerSpec::avg_pool(2, 2, 0), vec![2, 2, 5, 5]),
        (LayerSpec::avg_pool(3, 2, 1), vec![2, 2, 5, 5]),
        (LayerSpec::BatchNorm, vec![4, 3, 3, 3]),
        (LayerSpec::BatchNorm, vec![5, 4]),
        (LayerSpec::relu(), vec![3, 2, 4, 4]),
        (LayerSpec::tanh(), vec![3, 2, 4, 4]),
        (LayerSpec::Flatten, vec![2, 2, 3, 3]),
        (LayerSpec::Dense { units: 4 }, vec![3, 6]),
        (LayerSpec::Dropout { rate: 0.4 }, vec![3, 8]),
        (LayerSpec::Softmax, vec![4, 3]),
    ]
}

#[test]
fn every_layer_passes_gradient_check() {
    for (spec, shape) in layer_cases() {
        for seed in 0..3 {
            let r = check_layer(spec, &shape, seed).unwrap();
            assert!(r.max_rel_error <= 1e-4, "{spec} seed {seed}: {}", r.max_rel_error);
            assert!(r.checked > 0);
        }
    }
}

#[test]
fn small_network_passes_gradient_check() {
    // batch norm directly after a conv makes the conv bias gradient exactly
    // zero, leaving only finite-difference roundoff to compare against
    let specs = [
        LayerSpec::conv(2, 3, 1, 1),
        LayerSpec::relu(),
        LayerSpec::BatchNorm,
        LayerSpec::max_pool(2, 2, 0),
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 5 },
        LayerSpec::tanh(),
        LayerSpec::Dropout { rate: 0.3 },
        LayerSpec::Dense { units: 3 },
        LayerSpec::Softmax,
    ];
    let mut model = Model::<f64>::new("tiny", &[1, 6, 6], &specs, 9).unwrap();
    let x = random(&[3, 1, 6, 6], 10);
    let r = check_model(&mut model, &x, &[0, 2, 1], 11).unwrap();
    assert!(r.max_rel_error <= 1e-4, "{}", r.max_rel_error);
}

#[test]
fn sgd_examples() {
    let specs = [LayerSpec::Dense { units: 2 }];
    let mut model = Model::<f64>::new("m", &[3], &specs, 1).unwrap();
    let before = model.layers()[0].params().to_vec();
    let grads = tsvmorph_core::nn::Gradients {
        params: vec![vec![Tensor::full(&[2, 3], 0.5), Tensor::full(&[2], -1.0)]],
        input: Tensor::zeros(&[1, 3]),
    };

    Sgd::new(0.0, 0.9).step(&mut model, &grads).unwrap();
    assert_eq!(model.layers()[0].params(), &before[..]);

    let mut plain = Sgd::new(0.1, 0.0);
    plain.step(&mut model, &grads).unwrap();
    for (p, b) in model.layers()[0].params()[0].data().iter().zip(before[0].data()) {
        assert_eq!(*p, b - 0.1 * 0.5);
    }

    let mut model = Model::<f64>::new("m", &[3], &specs, 1).unwrap();
    let mut sgd = Sgd::new(0.1, 0.9);
    sgd.step(&mut model, &grads).unwrap();
    sgd.step(&mut model, &grads).unwrap();
    for (p, b) in model.layers()[0].params()[1].data().iter().zip(before[1].data()) {
        assert!((p - (b - 0.1 * (-1.0 * (1.0 + 1.9)))).abs() < 1e-12);
    }

    let wrong = tsvmorph_core::nn::Gradients { params: vec![vec![Tensor::zeros(&[3, 2]), Tensor::zeros(&[2])]], input: Tensor::zeros(&[1]) };
    assert!(matches!(sgd.step(&mut model, &wrong), Err(NnError::ShapeMismatch { .. })));
}

#[test]
fn parallel_and_sequential_conv_gradients_agree() {
    let x = random(&[6, 3, 9, 9], 12).map(|v| v as f32 as f64).cast::<f32>();
    let k = random(&[4, 3, 3, 3], 13).cast::<f32>();
    let dy = random(&[6, 4, 7, 7], 14).cast::<f32>();
    let (a, b) = (
        ops::conv2d_backward(&x, &k, &dy, 1, 0, false).unwrap(),
        ops::conv2d_backward(&x, &k, &dy, 1, 0, true).unwrap(),
    );
    for (s, p) in [(&a.0, &b.0), (&a.1, &b.1), (&a.2, &b.2)] {
        for (u, v) in s.data().iter().zip(p.data()) {
            assert!((u - v).abs() <= 1e-5 * u.abs().max(v.abs()).max(1.0));
        }
    }
}

proptest! {
    #[test]
    fn extent_law(n in 1usize..80, k in 1usize..12, s in 1usize..5, p in 0usize..4) {
        match out_extent(n, k, s, p) {
            Some(o) => prop_assert_eq!(o, (n + 2 * p - k) / s + 1),
            None => prop_assert!(n + 2 * p < k),
        }
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(v in prop::collection::vec(-1e3f64..1e3, 3), c in -1e3f64..1e3) {
        let p = softmax(&t(&[1, 3], &v)).unwrap();
        prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        prop_assert!(p.all_finite());
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let q = softmax(&t(&[1, 3], &shifted)).unwrap();
        for (a, b) in p.data().iter().zip(q.data()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn dropout_preserves_expectation(seed in any::<u64>(), rate in 0.0f64..0.9) {
        let n = 20_000;
        let x = Tensor::<f64>::full(&[1, n], 2.0);
        let y = dropout(&x, rate, Mode::Train, seed).unwrap();
        let mean = y.data().iter().sum::<f64>() / n as f64;
        // standard error of the mean is 2 * sqrt(rate / (1 - rate) / n)
        let se = 2.0 * (rate / (1.0 - rate) / n as f64).sqrt();
        prop_assert!((mean - 2.0).abs() <= 6.0 * se + 1e-12);
    }
}
