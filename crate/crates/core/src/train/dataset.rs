use std::path::Path;

use super::{ManifestRecord, Split, TrainError};
use crate::augment::{Augmentable, Transform};
use crate::cropper::CROP_SIZE;
use crate::label::{MorphologyLabel, SoftLabel};
use crate::nn::Tensor;
use crate::scalar::Scalar;
use crate::surface::{decode_png, GrayImage};
use crate::synthetic::{balanced_labels, render_via, via_seed, GenError, GenParams};

/// A decoded crop with its label and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub label: Option<MorphologyLabel>,
    pub soft_label: Option<SoftLabel>,
    pub source_id: String,
    pub transform: Transform,
}

impl Sample {
    pub fn new(image: GrayImage, label: MorphologyLabel, source_id: impl Into<String>) -> Self {
        Self { image, label: Some(label), soft_label: None, source_id: source_id.into(), transform: Transform::Identity }
    }
}

impl Augmentable for Sample {
    fn image(&self) -> &GrayImage {
        &self.image
    }

    fn label(&self) -> Option<MorphologyLabel> {
        self.label
    }

    fn with_image(&self, image: GrayImage) -> Self {
        Self { image, ..self.clone() }
    }
}

/// Decodes the PNGs of `records` (paths relative to `base`) and partitions
/// them by split.
pub fn load_samples(records: &[ManifestRecord], base: &Path) -> Result<(Vec<Sample>, Vec<Sample>), TrainError> {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for r in records {
        let path = base.join(&r.path);
        let bytes = std::fs::read(&path)?;
        let image = decode_png(&bytes).map_err(|source| TrainError::Image { path: path.display().to_string(), source })?;
        let sample = Sample {
            image,
            label: r.label,
            soft_label: r.soft_label,
            source_id: r.source_id.clone(),
            transform: r.transform,
        };
        match r.split {
            Split::Train => train.push(sample),
            Split::Test => test.push(sample),
        }
    }
    Ok((train, test))
}

/// Balanced synthetic train and test sets rendered straight from the via
/// generator. Test vias use seeds disjoint from the training ones.
pub fn synthetic_split(
    n_train: usize,
    n_test: usize,
    params: &GenParams,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>), GenError> {
    let make = |n: usize, offset: u64, tag: &str| -> Result<Vec<Sample>, GenError> {
        balanced_labels(n, seed ^ offset)
            .into_iter()
            .enumerate()
            .map(|(i, label)| {
                let p = params.with_seed(via_seed(seed ^ offset, i as u64));
                Ok(Sample::new(render_via(label, &p)?, label, format!("{tag}{i}")))
            })
            .collect()
    };
    Ok((make(n_train, 0, "train")?, make(n_test, 0x5EED_7E57, "test")?))
}

/// Stacks images into `[N, 1, 54, 54]` scaled to `[-1, 1]` as `(p - 127.5) / 127.5`.
pub fn to_input_tensor<T: Scalar>(images: &[&GrayImage]) -> Tensor<T> {
    let side = CROP_SIZE as usize;
    let mut data = Vec::with_capacity(images.len() * side * side);
    for img in images {
        data.extend(img.pixels().iter().map(|&p| T::of((p as f64 - 127.5) / 127.5)));
    }
    Tensor::from_vec(&[images.len(), 1, side, side], data).expect("images are 54x54")
}
