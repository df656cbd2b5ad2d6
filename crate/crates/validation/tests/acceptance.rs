//! Pipeline-level acceptance checks. Each check prints one PASS/FAIL line;
//! the test fails if any check fails.

use std::time::{Duration, Instant};

use tsvmorph_core::arch::{build, ArchId};
use tsvmorph_core::augment::{augment_records, AugmentationType};
use tsvmorph_core::cropper::{crop_mosaic, estimate_grid, DEFAULT_THETA};
use tsvmorph_core::nn::gradcheck::{check_layer, check_model};
use tsvmorph_core::nn::{ops, LayerSpec, Mode, Model, Tensor};
use tsvmorph_core::surface::{render_grayscale, GrayImage};
use tsvmorph_core::synthetic::{balanced_labels, generate_mosaic, GenParams};
use tsvmorph_core::train::{
    run_sweep, sweep_cells, synthetic_split, to_input_tensor, train, CellRunner, Dropout, History, Metrics, Sample,
    SweepCell, SweepReport, TrainConfig, TrainError,
};

type Outcome = Result<String, String>;

struct Check {
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Stand-in 54x54 images with distinct, deterministic content.
fn patterned(n: usize) -> Vec<Sample> {
    let labels = balanced_labels(n, 1);
    (0..n)
        .map(|i| {
            let px = (0..54 * 54).map(|j| ((i * 31 + (j % 54) * 7 + (j / 54) * 13) % 256) as u8).collect();
            Sample::new(GrayImage::new(54, 54, px).unwrap(), labels[i], format!("s{i}"))
        })
        .collect()
}

fn augmentation_arithmetic() -> Outcome {
    let records = patterned(1004);
    let mut base = [0usize; 3];
    for r in &records {
        base[r.label.unwrap().index()] += 1;
    }
    let expected = [1004, 3012, 4016, 6024, 8032, 10040];
    let mut sizes = Vec::new();
    for (t, &want) in expected.iter().enumerate() {
        let ty = AugmentationType::new(t as u8).unwrap();
        let out = augment_records(&records, ty).map_err(|e| e.to_string())?;
        ensure(out.len() == want, || format!("type {t}: {} records, expected {want}", out.len()))?;
        let mut counts = [0usize; 3];
        for a in &out {
            counts[a.record.label.unwrap().index()] += 1;
            ensure(a.record.label == records[a.source_index].label, || format!("type {t}: label changed"))?;
        }
        let scaled = base.map(|c| c * ty.multiplier());
        ensure(counts == scaled, || format!("type {t}: label counts {counts:?}, expected {scaled:?}"))?;
        sizes.push(out.len());
    }
    Ok(format!("sizes {sizes:?}"))
}

fn shape_traces() -> Outcome {
    for id in ArchId::ALL {
        build(id).shape_trace(&[1, 54, 54]).map_err(|e| format!("{id}: {e}"))?;
    }
    let vgg = build(ArchId::VggInspiredAlexNet).pre_flatten_shape().map_err(|e| e.to_string())?;
    let lenet = build(ArchId::LeNet5).pre_flatten_shape().map_err(|e| e.to_string())?;
    ensure(vgg == [256, 3, 3], || format!("vgg pre-flatten {vgg:?}"))?;
    ensure(lenet == [120, 6, 6], || format!("lenet5 pre-flatten {lenet:?}"))?;
    Ok(format!("vgg {vgg:?}, lenet5 {lenet:?}"))
}

fn gradient_checks() -> Outcome {
    let cases: Vec<(LayerSpec, Vec<usize>)> = vec![
        (LayerSpec::conv(3, 3, 1, 0), vec![2, 2, 6, 6]),
        (LayerSpec::conv(2, 3, 2, 1), vec![2, 2, 7, 7]),
        (LayerSpec::max_pool(2, 2, 0), vec![2, 2, 5, 5]),
        (LayerSpec::max_pool(3, 2, 1), vec![2, 2, 5, 5]),
        (LayerSpec::avg_pool(3, 2, 1), vec![2, 2, 5, 5]),
        (LayerSpec::BatchNorm, vec![4, 3, 3, 3]),
        (LayerSpec::BatchNorm, vec![5, 4]),
        (LayerSpec::relu(), vec![3, 2, 4, 4]),
        (LayerSpec::tanh(), vec![3, 2, 4, 4]),
        (LayerSpec::Flatten, vec![2, 2, 3, 3]),
        (LayerSpec::Dense { units: 4 }, vec![3, 6]),
        (LayerSpec::Dropout { rate: 0.4 }, vec![3, 8]),
        (LayerSpec::Softmax, vec![4, 3]),
    ];
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        for (spec, shape) in &cases {
            let r = check_layer(spec.clone(), shape, seed).map_err(|e| e.to_string())?;
            ensure(r.max_rel_error <= 1e-4, || format!("{spec} seed {seed}: {:e}", r.max_rel_error))?;
            worst = worst.max(r.max_rel_error);
        }
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
        let mut model = Model::<f64>::new("net", &[1, 6, 6], &specs, seed).map_err(|e| e.to_string())?;
        let x = Tensor::from_fn(&[4, 1, 6, 6], |i| ((i as f64 + seed as f64) * 0.7).sin());
        let r = check_model(&mut model, &x, &[0, 1, 2, 1], seed).map_err(|e| e.to_string())?;
        ensure(r.max_rel_error <= 1e-4, || format!("network seed {seed}: {:e}", r.max_rel_error))?;
        worst = worst.max(r.max_rel_error);
    }
    Ok(format!("{} layer cases + 1 network x 10 seeds, worst {worst:.2e}", cases.len()))
}

fn numerical_hygiene() -> Outcome {
    // splitmix-style hash to spread logits over [-1e3, 1e3] without an rng dependency
    let unit = |k: u64| -> f64 {
        let mut z = k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 31)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        (z >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut worst: f64 = 0.0;
    for v in 0..10_000u64 {
        let d = 2 + (v % 9) as usize;
        let logits = Tensor::<f32>::from_fn(&[1, d], |j| match (v + j as u64) % 7 {
            0 => 1e3,
            1 => -1e3,
            _ => ((unit(v * 16 + j as u64) * 2.0 - 1.0) * 1e3) as f32,
        });
        let p = ops::softmax(&logits).map_err(|e| e.to_string())?;
        ensure(p.all_finite(), || format!("vector {v}: non-finite probabilities"))?;
        let sum: f64 = p.data().iter().map(|&x| x as f64).sum();
        worst = worst.max((sum - 1.0).abs());
    }
    ensure(worst <= 1e-6, || format!("softmax sum off by {worst:e}"))?;

    let (samples, _) = synthetic_split(6, 0, &GenParams::default(), 3).map_err(|e| e.to_string())?;
    let mut images: Vec<GrayImage> = samples.iter().map(|s| s.image.clone()).collect();
    images.push(GrayImage::filled(54, 54, 255));
    images.push(GrayImage::filled(54, 54, 0));
    let x = to_input_tensor::<f32>(&images.iter().collect::<Vec<_>>());
    let labels: Vec<usize> = (0..images.len()).map(|i| i % 3).collect();
    for id in ArchId::ALL {
        let mut model = build(id).with_dropout(0.5).unwrap().model::<f32>(1).map_err(|e| e.to_string())?;
        for mode in [Mode::Train, Mode::Eval] {
            let probs = model.forward(&x, mode).map_err(|e| e.to_string())?;
            ensure(probs.all_finite(), || format!("{id}: non-finite output in {mode:?}"))?;
            for row in probs.data().chunks(3) {
                let sum: f64 = row.iter().map(|&p| p as f64).sum();
                ensure((sum - 1.0).abs() <= 1e-6, || format!("{id}: probabilities sum to {sum}"))?;
            }
        }
        model.forward(&x, Mode::Train).map_err(|e| e.to_string())?;
        let grads = model.backward(&labels).map_err(|e| e.to_string())?;
        ensure(grads.input.all_finite(), || format!("{id}: non-finite input gradient"))?;
        for (i, g) in grads.params.iter().enumerate() {
            ensure(g.iter().all(|t| t.all_finite()), || format!("{id}: non-finite gradient in layer {i}"))?;
        }
        for layer in model.layers() {
            ensure(layer.cached_output().is_none_or(|y| y.all_finite()), || format!("{id}: non-finite activation"))?;
        }
    }
    Ok(format!("10^4 softmax vectors, worst |sum-1| {worst:.1e}; 4 architectures finite"))
}

fn cropper_fidelity() -> Outcome {
    let mut worst = 1.0f64;
    let mut vias = 0;
    for seed in 0..20u64 {
        let p = GenParams::default().with_seed(seed);
        let m = generate_mosaic(4, 5, &balanced_labels(20, seed), &p, 6).map_err(|e| e.to_string())?;
        let img = render_grayscale(&m.heightmap);
        let grid = estimate_grid(&img, 4, 5, DEFAULT_THETA).map_err(|e| e.to_string())?.grid;
        let crops = crop_mosaic(&img, &grid, DEFAULT_THETA).map_err(|e| e.to_string())?;
        for b in &m.boxes {
            let crop = crops
                .iter()
                .find(|c| c.grid_cell == (b.row, b.col))
                .ok_or_else(|| format!("seed {seed}: via ({}, {}) missed", b.row, b.col))?;
            let iou = crop.source_box.iou(&b.rect);
            ensure(iou >= 0.9, || format!("seed {seed}: via ({}, {}) IoU {iou:.3}", b.row, b.col))?;
            worst = worst.min(iou);
            vias += 1;
        }
    }
    Ok(format!("{vias} vias, 0 missed, worst IoU {worst:.3}"))
}

fn end_to_end() -> Outcome {
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in 0..3u64 {
        let (tr, te) = synthetic_split(300, 90, &GenParams::default(), seed).map_err(|e| e.to_string())?;
        let best = |arch| -> Result<(f64, usize), TrainError> {
            let cfg = TrainConfig {
                arch,
                epochs: 50,
                aug_type: AugmentationType::new(2).unwrap(),
                dropout: 0.2,
                seed,
                strict_determinism: true,
                // the max over epochs cannot rise past a perfect score
                stop_at_accuracy: Some(1.0),
                ..TrainConfig::default()
            };
            let (_, h) = train(&cfg, &tr, &te)?;
            Ok((h.max_total_accuracy(), h.epochs.len()))
        };
        let (vgg, vgg_epochs) = best(ArchId::VggInspiredAlexNet).map_err(|e| e.to_string())?;
        let (lenet, lenet_epochs) = best(ArchId::LeNet5).map_err(|e| e.to_string())?;
        lines.push(format!("seed {seed}: vgg {vgg:.3} ({vgg_epochs} ep), lenet5 {lenet:.3} ({lenet_epochs} ep)"));
        if vgg < 0.9 {
            failures.push(format!("seed {seed}: vgg {vgg:.3} < 0.90"));
        }
        if lenet < 0.8 {
            failures.push(format!("seed {seed}: lenet5 {lenet:.3} < 0.80"));
        }
        if vgg < lenet {
            failures.push(format!("seed {seed}: vgg {vgg:.3} < lenet5 {lenet:.3}"));
        }
    }
    if failures.is_empty() {
        Ok(lines.join("; "))
    } else {
        Err(format!("{} [{}]", failures.join("; "), lines.join("; ")))
    }
}

/// Reports a fixed accuracy per cell after a single epoch.
struct OneEpochStub;

impl CellRunner for OneEpochStub {
    fn run(&self, cell: &SweepCell) -> Result<History, TrainError> {
        let hits = 10 + cell.aug_type.id() as u64 * 2 + (cell.dropout.rate() * 10.0).round() as u64 + cell.arch as u64;
        let mut h = History::default();
        h.push(Metrics::from_confusion([[hits, 30 - hits, 0], [0, 30, 0], [1, 0, 29]], 1), 0.9);
        Ok(h)
    }
}

fn sweep_mechanics() -> Outcome {
    let augs: Vec<_> = (0..6).map(|t| AugmentationType::new(t).unwrap()).collect();
    let dropouts = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
    let cells = sweep_cells(&ArchId::ALL, &augs, &dropouts).map_err(|e| e.to_string())?;
    ensure(cells.len() == 114, || format!("{} cells, expected 114", cells.len()))?;
    let report = run_sweep(&cells, &OneEpochStub, true).map_err(|e| e.to_string())?;
    ensure(report.rows.len() == 114, || format!("{} rows", report.rows.len()))?;
    let lenet: Vec<_> = report.rows.iter().filter(|r| r.arch == ArchId::LeNet5).collect();
    ensure(lenet.len() == 6 && lenet.iter().all(|r| r.dropout == Dropout::NotApplicable), || {
        "LeNet5 rows must be one NA row per augmentation type".into()
    })?;
    let json = SweepReport::from_json(&report.to_json()).map_err(|e| e.to_string())?;
    let csv = SweepReport::from_csv(&report.to_csv()).map_err(|e| e.to_string())?;
    ensure(json == report, || "JSON round trip changed the report".into())?;
    ensure(csv == report, || "CSV round trip changed the report".into())?;
    ensure(SweepReport::from_csv(&json.to_csv()).map_err(|e| e.to_string())? == report, || "JSON -> CSV mismatch".into())?;
    for best in report.best_per_arch() {
        let max = report.rows.iter().filter(|r| r.arch == best.arch).map(|r| r.max_accuracy).fold(f64::MIN, f64::max);
        ensure(best.max_accuracy == max, || format!("{}: best row is not the max", best.arch))?;
    }
    Ok("114 runs (6 LeNet5 NA + 108), JSON<->CSV lossless".into())
}

fn determinism() -> Outcome {
    let (tr, te) = synthetic_split(30, 9, &GenParams::default(), 11).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        arch: ArchId::VggInspiredAlexNet,
        epochs: 2,
        aug_type: AugmentationType::new(2).unwrap(),
        dropout: 0.2,
        batch_size: 16,
        seed: 42,
        strict_determinism: true,
        workers: 4,
        ..TrainConfig::default()
    };
    let (_, a) = train(&cfg, &tr, &te).map_err(|e| e.to_string())?;
    let (_, b) = train(&cfg, &tr, &te).map_err(|e| e.to_string())?;
    let bits = |h: &History| h.train_loss.iter().map(|l| l.to_bits()).collect::<Vec<_>>();
    ensure(bits(&a) == bits(&b) && a == b, || format!("histories differ: {:?} vs {:?}", a.train_loss, b.train_loss))?;
    Ok(format!("2 epochs, losses {:?}", a.train_loss))
}

#[test]
fn acceptance() {
    let checks = [
        Check { name: "augmentation arithmetic", limit: Some(Duration::from_secs(10)), run: augmentation_arithmetic },
        Check { name: "shape traces", limit: Some(Duration::from_secs(1)), run: shape_traces },
        Check { name: "gradient checks", limit: Some(Duration::from_secs(60)), run: gradient_checks },
        Check { name: "numerical hygiene", limit: None, run: numerical_hygiene },
        Check { name: "cropper fidelity", limit: Some(Duration::from_secs(30)), run: cropper_fidelity },
        Check { name: "end-to-end synthetic training", limit: None, run: end_to_end },
        Check { name: "sweep mechanics", limit: None, run: sweep_mechanics },
        Check { name: "determinism", limit: None, run: determinism },
    ];
    let mut failed = Vec::new();
    for c in &checks {
        let start = Instant::now();
        let mut outcome = (c.run)();
        let elapsed = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&outcome, c.limit) {
            if elapsed > limit {
                outcome = Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}"));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS  {:<30} {detail} [{elapsed:.1?}]", c.name),
            Err(why) => {
                println!("FAIL  {:<30} {why} [{elapsed:.1?}]", c.name);
                failed.push(c.name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}

/// Networks listed in order of increasing complexity should carry strictly
/// more parameters.
#[test]
fn parameter_counts_follow_network_complexity() {
    let order = [ArchId::LeNet5, ArchId::AlexNetInspiredLeNet, ArchId::VggInspiredAlexNet, ArchId::AlexNet];
    let counts: Vec<usize> = order.iter().map(|&id| build(id).param_count().unwrap()).collect();
    println!("parameter counts {:?}", order.iter().zip(&counts).collect::<Vec<_>>());
    assert!(counts.windows(2).all(|w| w[0] < w[1]), "not increasing: {counts:?}");
}

