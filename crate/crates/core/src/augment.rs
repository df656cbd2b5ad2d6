//! Label-preserving geometric augmentation: rotations in 45° steps and axis
//! flips. Cropping, shearing and noise injection are deliberately absent since
//! they change what morphology an image shows.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cropper::{CropRecord, CROP_SIZE};
use crate::label::MorphologyLabel;
use crate::surface::GrayImage;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("augmentation expects {CROP_SIZE}x{CROP_SIZE} images, got {0}x{1}")]
    WrongSize(u32, u32),
    #[error("record {0} has no label")]
    UnlabeledRecord(usize),
    #[error("unsupported rotation {0}°")]
    BadRotation(u32),
    #[error("augmentation type must be 0..=5, got {0}")]
    BadType(u8),
    #[error("unknown transform {0:?}")]
    UnknownTransform(String),
}

/// Clockwise rotation by a multiple of 45 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rotation(u32);

impl Rotation {
    pub fn new(degrees: u32) -> Result<Self, AugmentError> {
        if degrees % 45 == 0 && (45..=315).contains(&degrees) {
            Ok(Self(degrees))
        } else {
            Err(AugmentError::BadRotation(degrees))
        }
    }

    pub fn degrees(self) -> u32 {
        self.0
    }

    pub fn is_axis_aligned(self) -> bool {
        self.0 % 90 == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    Identity,
    Rotate(Rotation),
    FlipHorizontal,
    FlipVertical,
}

impl Transform {
    pub fn rotate(degrees: u32) -> Result<Self, AugmentError> {
        Rotation::new(degrees).map(Transform::Rotate)
    }

    /// Whether the transform permutes pixel positions exactly.
    pub fn is_lossless(self) -> bool {
        !matches!(self, Transform::Rotate(r) if !r.is_axis_aligned())
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Identity => f.write_str("identity"),
            Transform::Rotate(r) => write!(f, "rot{}", r.degrees()),
            Transform::FlipHorizontal => f.write_str("flip_h"),
            Transform::FlipVertical => f.write_str("flip_v"),
        }
    }
}

impl FromStr for Transform {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Transform::Identity),
            "flip_h" => Ok(Transform::FlipHorizontal),
            "flip_v" => Ok(Transform::FlipVertical),
            _ => s
                .strip_prefix("rot")
                .and_then(|d| d.parse::<u32>().ok())
                .ok_or_else(|| AugmentError::UnknownTransform(s.to_string()))
                .and_then(Transform::rotate),
        }
    }
}

impl Serialize for Transform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Transform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One of the six fixed augmentation regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct AugmentationType(u8);

impl AugmentationType {
    pub const ALL: [AugmentationType; 6] = [Self(0), Self(1), Self(2), Self(3), Self(4), Self(5)];

    pub fn new(id: u8) -> Result<Self, AugmentError> {
        if id <= 5 {
            Ok(Self(id))
        } else {
            Err(AugmentError::BadType(id))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    /// Transforms in output order. Flips are applied to the originals only.
    pub fn transforms(self) -> Vec<Transform> {
        let rot = |d: &[u32]| d.iter().map(|&d| Transform::rotate(d).unwrap()).collect::<Vec<_>>();
        let flips = [Transform::FlipHorizontal, Transform::FlipVertical];
        let (rotations, flip) = match self.0 {
            0 => (vec![], false),
            1 => (vec![], true),
            2 => (rot(&[90, 180, 270]), false),
            3 => (rot(&[90, 180, 270]), true),
            4 => (rot(&[45, 90, 135, 180, 225, 270, 315]), false),
            _ => (rot(&[45, 90, 135, 180, 225, 270, 315]), true),
        };
        let mut out = vec![Transform::Identity];
        out.extend(rotations);
        if flip {
            out.extend(flips);
        }
        out
    }

    pub fn multiplier(self) -> usize {
        self.transforms().len()
    }
}

impl TryFrom<u8> for AugmentationType {
    type Error = AugmentError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<AugmentationType> for u8 {
    fn from(t: AugmentationType) -> u8 {
        t.0
    }
}

impl fmt::Display for AugmentationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Median of the outermost ring of pixels.
pub fn border_median(img: &GrayImage) -> u8 {
    let (w, h) = (img.width(), img.height());
    let mut border: Vec<u8> = Vec::with_capacity(2 * (w + h) as usize);
    for x in 0..w {
        border.push(img.get(x, 0));
        if h > 1 {
            border.push(img.get(x, h - 1));
        }
    }
    for y in 1..h.saturating_sub(1) {
        border.push(img.get(0, y));
        if w > 1 {
            border.push(img.get(w - 1, y));
        }
    }
    border.sort_unstable();
    border[border.len() / 2]
}

fn permute(img: &GrayImage, src: impl Fn(u32, u32) -> (u32, u32)) -> GrayImage {
    let n = img.width();
    let pixels = (0..n * n)
        .map(|i| {
            let (sx, sy) = src(i % n, i / n);
            img.get(sx, sy)
        })
        .collect();
    GrayImage::new(n, n, pixels).unwrap()
}

fn rotate_bilinear(img: &GrayImage, degrees: u32) -> GrayImage {
    let n = img.width();
    let fill = border_median(img) as f64;
    let c = (n as f64 - 1.0) / 2.0;
    let (sin, cos) = (degrees as f64).to_radians().sin_cos();
    let max = (n - 1) as f64;
    let pixels = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64 - c, (i / n) as f64 - c);
            // inverse of a clockwise rotation (y axis points down)
            let sx = cos * x + sin * y + c;
            let sy = -sin * x + cos * y + c;
            const EPS: f64 = 1e-9;
            if sx < -EPS || sy < -EPS || sx > max + EPS || sy > max + EPS {
                return fill.round() as u8;
            }
            let (sx, sy) = (sx.clamp(0.0, max), sy.clamp(0.0, max));
            let (x0, y0) = (sx.floor() as u32, sy.floor() as u32);
            let (x1, y1) = ((x0 + 1).min(n - 1), (y0 + 1).min(n - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let p = |x, y| img.get(x, y) as f64;
            let v = p(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + p(x1, y0) * fx * (1.0 - fy)
                + p(x0, y1) * (1.0 - fx) * fy
                + p(x1, y1) * fx * fy;
            v.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(n, n, pixels).unwrap()
}

/// Applies `t` to a 54x54 image. Flips and right-angle rotations are exact
/// permutations; 45° steps use bilinear interpolation with border-median fill.
pub fn apply(t: Transform, img: &GrayImage) -> Result<GrayImage, AugmentError> {
    if img.width() != CROP_SIZE || img.height() != CROP_SIZE {
        return Err(AugmentError::WrongSize(img.width(), img.height()));
    }
    let m = CROP_SIZE - 1;
    Ok(match t {
        Transform::Identity => img.clone(),
        Transform::FlipHorizontal => permute(img, |x, y| (m - x, y)),
        Transform::FlipVertical => permute(img, |x, y| (x, m - y)),
        Transform::Rotate(r) => match r.degrees() {
            90 => permute(img, |x, y| (y, m - x)),
            180 => permute(img, |x, y| (m - x, m - y)),
            270 => permute(img, |x, y| (m - y, x)),
            d => rotate_bilinear(img, d),
        },
    })
}

/// Anything carrying a labeled 54x54 image.
pub trait Augmentable: Clone + Send + Sync {
    fn image(&self) -> &GrayImage;
    fn label(&self) -> Option<MorphologyLabel>;
    fn with_image(&self, image: GrayImage) -> Self;
}

impl Augmentable for CropRecord {
    fn image(&self) -> &GrayImage {
        &self.image
    }

    fn label(&self) -> Option<MorphologyLabel> {
        CropRecord::label(self)
    }

    fn with_image(&self, image: GrayImage) -> Self {
        let mut out = self.clone();
        out.image = image;
        out
    }
}

/// An augmented copy together with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented<R> {
    pub source_index: usize,
    pub transform: Transform,
    pub record: R,
}

/// Expands every record by the transforms of `ty`: source order first, then
/// transform order. Labels are carried over unchanged.
pub fn augment_records<R: Augmentable>(records: &[R], ty: AugmentationType) -> Result<Vec<Augmented<R>>, AugmentError> {
    if let Some(i) = records.iter().position(|r| r.label().is_none()) {
        return Err(AugmentError::UnlabeledRecord(i));
    }
    let transforms = ty.transforms();
    let nested: Vec<Vec<Augmented<R>>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            transforms
                .iter()
                .map(|&t| {
                    Ok(Augmented { source_index: i, transform: t, record: r.with_image(apply(t, r.image())?) })
                })
                .collect::<Result<Vec<_>, AugmentError>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(nested.into_iter().flatten().collect())
}
