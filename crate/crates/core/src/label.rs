//! Morphology classes and soft (multi-class) labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_CLASSES: usize = 3;

/// Extrusion morphology class. The discriminant is the network output index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphologyLabel {
    Granular = 0,
    EdgeRing = 1,
    EdgeBulge = 2,
}

impl MorphologyLabel {
    pub const ALL: [MorphologyLabel; NUM_CLASSES] =
        [MorphologyLabel::Granular, MorphologyLabel::EdgeRing, MorphologyLabel::EdgeBulge];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MorphologyLabel::Granular => "granular",
            MorphologyLabel::EdgeRing => "edge_ring",
            MorphologyLabel::EdgeBulge => "edge_bulge",
        }
    }
}

impl fmt::Display for MorphologyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("unknown morphology label {0:?}")]
    Unknown(String),
    #[error("soft label components must be finite and non-negative: {0:?}")]
    NegativeConfidence([f64; NUM_CLASSES]),
    #[error("soft label must sum to 1 (got {0})")]
    NotNormalized(f64),
    #[error("hard label {hard} disagrees with soft label argmax {argmax}")]
    Disagreement { hard: MorphologyLabel, argmax: MorphologyLabel },
}

impl FromStr for MorphologyLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "granular" => Ok(Self::Granular),
            "edge_ring" => Ok(Self::EdgeRing),
            "edge_bulge" => Ok(Self::EdgeBulge),
            other => Err(LabelError::Unknown(other.to_string())),
        }
    }
}

/// Per-class confidences for an ambiguous via. Components are non-negative and
/// sum to one within `1e-6`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SoftLabel([f64; NUM_CLASSES]);

pub const SOFT_LABEL_TOLERANCE: f64 = 1e-6;

impl SoftLabel {
    pub fn new(v: [f64; NUM_CLASSES]) -> Result<Self, LabelError> {
        if v.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(LabelError::NegativeConfidence(v));
        }
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > SOFT_LABEL_TOLERANCE {
            return Err(LabelError::NotNormalized(sum));
        }
        Ok(Self(v))
    }

    /// Rescales arbitrary non-negative weights to sum to one.
    pub fn normalized(v: [f64; NUM_CLASSES]) -> Result<Self, LabelError> {
        if v.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(LabelError::NegativeConfidence(v));
        }
        let sum: f64 = v.iter().sum();
        if sum <= 0.0 {
            return Err(LabelError::NotNormalized(sum));
        }
        Ok(Self(v.map(|c| c / sum)))
    }

    pub fn values(&self) -> [f64; NUM_CLASSES] {
        self.0
    }

    /// Most confident class; ties go to the lower class index.
    pub fn argmax(&self) -> MorphologyLabel {
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        MorphologyLabel::ALL[best]
    }
}

impl<'de> Deserialize<'de> for SoftLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = <[f64; NUM_CLASSES]>::deserialize(d)?;
        SoftLabel::new(v).map_err(serde::de::Error::custom)
    }
}

/// Checks that a hard label, when both are present, equals the soft label argmax.
pub fn check_consistent(hard: Option<MorphologyLabel>, soft: Option<&SoftLabel>) -> Result<(), LabelError> {
    match (hard, soft) {
        (Some(hard), Some(soft)) if soft.argmax() != hard => {
            Err(LabelError::Disagreement { hard, argmax: soft.argmax() })
        }
        _ => Ok(()),
    }
}
