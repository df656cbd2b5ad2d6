use std::collections::HashSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{History, Metrics, Sample, TrainError};
use crate::arch::{build, ArchId};
use crate::augment::{augment_records, AugmentationType};
use crate::cropper::CROP_SIZE;
use crate::label::{MorphologyLabel, NUM_CLASSES};
use crate::nn::{ops, save_checkpoint, Mode, Model, Sgd, Tensor};

use super::to_input_tensor;

const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub arch: ArchId,
    pub epochs: u32,
    pub aug_type: AugmentationType,
    pub dropout: f64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Halve the learning rate every this many epochs; 0 keeps it constant.
    pub lr_halve_every: u32,
    pub seed: u64,
    pub strict_determinism: bool,
    pub workers: usize,
    /// Where to save the best-epoch model, if anywhere.
    pub checkpoint: Option<PathBuf>,
    /// Stop once test accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: ArchId::VggInspiredAlexNet,
            epochs: 200,
            aug_type: AugmentationType::new(0).unwrap(),
            dropout: 0.0,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            lr_halve_every: 50,
            seed: 0,
            strict_determinism: false,
            workers: 1,
            checkpoint: None,
            stop_at_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("learning rate {} must be finite and non-negative", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if let Some(t) = self.stop_at_accuracy {
            if !(t > 0.0 && t <= 1.0) {
                return bad(format!("target accuracy {t} outside (0, 1]"));
            }
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: u32) -> f64 {
        match self.lr_halve_every {
            0 => self.lr,
            n => self.lr * 0.5f64.powi(((epoch - 1) / n) as i32),
        }
    }
}

fn check_samples(samples: &[Sample]) -> Result<Vec<usize>, TrainError> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if s.image.width() != CROP_SIZE || s.image.height() != CROP_SIZE {
                return Err(TrainError::WrongImageSize { index: i, width: s.image.width(), height: s.image.height() });
            }
            s.label.map(|l| l.index()).ok_or(TrainError::UnlabeledRecord(i))
        })
        .collect()
}

/// Trains `config.arch` on `train_set`, evaluating on `test_set` after every
/// epoch. Only the training split is augmented. Returns the model of the
/// epoch with the highest test accuracy.
pub fn train(config: &TrainConfig, train_set: &[Sample], test_set: &[Sample]) -> Result<(Model<f32>, History), TrainError> {
    config.validate()?;
    check_samples(train_set)?;
    let test_labels = check_samples(test_set)?;
    let test_sources: HashSet<&str> = test_set.iter().map(|s| s.source_id.as_str()).collect();
    if let Some(s) = train_set.iter().find(|s| test_sources.contains(s.source_id.as_str())) {
        return Err(TrainError::OverlappingSplits(s.source_id.clone()));
    }
    let mut counts = [0usize; NUM_CLASSES];
    for s in train_set {
        counts[s.label.unwrap().index()] += 1;
    }
    if let Some(c) = (0..NUM_CLASSES).find(|&c| counts[c] == 0) {
        return Err(TrainError::EmptyClass(MorphologyLabel::ALL[c]));
    }
    let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
    if (hi - lo) as f64 > 0.1 * hi as f64 {
        log::warn!("training classes are imbalanced: {counts:?}");
    }

    let augmented = augment_records(train_set, config.aug_type)?;
    let images: Vec<_> = augmented.iter().map(|a| &a.record.image).collect();
    let labels: Vec<usize> = augmented.iter().map(|a| a.record.label.unwrap().index()).collect();
    let x_train: Tensor<f32> = to_input_tensor(&images);
    let x_test: Tensor<f32> = to_input_tensor(&test_set.iter().map(|s| &s.image).collect::<Vec<_>>());
    log::info!("training {} on {} images ({} before augmentation), testing on {}", config.arch, labels.len(), train_set.len(), test_set.len());

    let spec = build(config.arch).with_dropout(config.dropout)?;
    let mut model = spec.model::<f32>(config.seed)?;
    model.set_parallel(!config.strict_determinism && config.workers > 1);
    let mut sgd = Sgd::new(config.lr as f32, config.momentum as f32);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xA5A5_5A5A_F00D_CAFE);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let sample_len = x_train.sample_len();
    let mut history = History::default();
    let mut best: Option<Model<f32>> = None;

    for epoch in 1..=config.epochs {
        sgd.lr = config.lr_at(epoch) as f32;
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0);
        // a trailing batch of one would break batch norm, so it is skipped
        for batch in order.chunks(config.batch_size).filter(|b| b.len() >= 2) {
            let mut data = Vec::with_capacity(batch.len() * sample_len);
            for &i in batch {
                data.extend_from_slice(&x_train.data()[i * sample_len..(i + 1) * sample_len]);
            }
            let mut shape = x_train.shape().to_vec();
            shape[0] = batch.len();
            let xb = Tensor::from_vec(&shape, data)?;
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let probs = model.forward(&xb, Mode::Train)?;
            loss_sum += ops::mean_cross_entropy(&probs, &yb)? as f64 * batch.len() as f64;
            seen += batch.len();
            let grads = model.backward(&yb)?;
            sgd.step(&mut model, &grads)?;
        }
        let predicted = predict_batched(&mut model, &x_test)?;
        let metrics = Metrics::from_predictions(&test_labels, &predicted, epoch);
        let loss = loss_sum / seen.max(1) as f64;
        log::info!("epoch {epoch}: loss {loss:.4} test accuracy {:.4}", metrics.total_accuracy);
        if metrics.total_accuracy > history.max_total_accuracy() || best.is_none() {
            if let Some(path) = &config.checkpoint {
                save_checkpoint(path, &model, epoch, serde_json::to_value(&metrics).unwrap_or_default())?;
            }
            best = Some(model.clone());
        }
        let reached = config.stop_at_accuracy.is_some_and(|t| metrics.total_accuracy >= t);
        history.push(metrics, loss);
        if reached {
            log::info!("target accuracy reached at epoch {epoch}");
            break;
        }
    }
    Ok((best.expect("at least one epoch ran"), history))
}

fn predict_batched(model: &mut Model<f32>, x: &Tensor<f32>) -> Result<Vec<usize>, TrainError> {
    let n = x.batch();
    let len = x.sample_len();
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(EVAL_BATCH) {
        let end = (start + EVAL_BATCH).min(n);
        let mut shape = x.shape().to_vec();
        shape[0] = end - start;
        let xb = Tensor::from_vec(&shape, x.data()[start * len..end * len].to_vec())?;
        out.extend(model.predict(&xb)?);
    }
    Ok(out)
}

/// Confusion matrix and accuracies of `model` on labeled samples.
pub fn evaluate(model: &mut Model<f32>, samples: &[Sample]) -> Result<Metrics, TrainError> {
    let labels = check_samples(samples)?;
    let x: Tensor<f32> = to_input_tensor(&samples.iter().map(|s| &s.image).collect::<Vec<_>>());
    let predicted = predict_batched(model, &x)?;
    Ok(Metrics::from_predictions(&labels, &predicted, 0))
}
