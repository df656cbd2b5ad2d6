//! Training, evaluation and the architecture x augmentation x dropout sweep.

mod dataset;
mod manifest;
mod metrics;
mod sweep;
mod trainer;

pub use dataset::{load_samples, synthetic_split, to_input_tensor, Sample};
pub use manifest::{
    assign_splits, crop_records, export_crops, read_manifest, read_manifest_str, write_manifest, ManifestRecord, Split,
    MANIFEST_FILE,
};
pub use metrics::{History, Metrics};
pub use sweep::{
    run_sweep, sweep_cells, CellRunner, Dropout, SweepCell, SweepReport, SweepRow, TrainingRunner,
};
pub use trainer::{evaluate, train, TrainConfig};

use crate::augment::AugmentError;
use crate::label::MorphologyLabel;
use crate::nn::NnError;
use crate::surface::ImageError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("source {0:?} appears in both the train and test split")]
    OverlappingSplits(String),
    #[error("class {0} has no training samples")]
    EmptyClass(MorphologyLabel),
    #[error("record {0} has no label")]
    UnlabeledRecord(usize),
    #[error("record {index} is {width}x{height}, expected 54x54")]
    WrongImageSize { index: usize, width: u32, height: u32 },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("sweep axis {0} is empty")]
    EmptyAxis(&'static str),
    #[error("report: {0}")]
    Report(String),
    #[error("{path}: {source}")]
    Image { path: String, source: ImageError },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
