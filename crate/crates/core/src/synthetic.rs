//! Procedural height maps of single vias and multi-via mosaics.
//!
//! Every via sits in a square frame of `frame` pixels, centred on the integer
//! pixel `(frame / 2, frame / 2)`. The via footprint is the discrete disk of
//! pixels whose centre lies strictly inside `via_radius`. Inside the footprint
//! each class adds its own relief on top of a class-specific floor:
//!
//! * granular: band-limited undulation of RMS `noise_amplitude` over the whole disk
//! * edge ring: a Gaussian ridge at radius `via_radius - 2` covering most of the rim
//! * edge bulge: a few discrete Gaussian bumps centred on that same rim circle
//!
//! The floors keep every footprint visibly raised above the field so the
//! cropper can find the via edge.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Rect;
use crate::label::MorphologyLabel;
use crate::surface::{render_grayscale, GrayImage, HeightMap, DEFAULT_PITCH_UM};

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("mosaic needs {expected} labels, got {actual}")]
    LabelCountMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    /// Side of the square frame holding one via, in pixels.
    pub frame: u32,
    pub via_radius: f32,
    pub ring_sigma: f32,
    /// Inclusive range for the number of edge bulges.
    pub bump_count_range: (u32, u32),
    /// Relief height in nm.
    pub amplitude: f32,
    /// Granular undulation RMS in nm.
    pub noise_amplitude: f32,
    pub background_level: f32,
    pub pitch: f32,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            frame: 54,
            via_radius: 14.0,
            ring_sigma: 1.5,
            bump_count_range: (2, 5),
            amplitude: 100.0,
            noise_amplitude: 40.0,
            background_level: 0.0,
            pitch: DEFAULT_PITCH_UM,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::InvalidParams(m.to_string()));
        if self.frame < 8 {
            return bad("frame must be at least 8 px");
        }
        if !(self.via_radius > 2.0 && (self.via_radius as f64) < self.frame as f64 / 2.0) {
            return bad("via_radius must lie in (2, frame/2)");
        }
        if !(self.ring_sigma > 0.0 && self.ring_sigma.is_finite()) {
            return bad("ring_sigma must be positive");
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return bad("amplitude must be positive");
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite()) {
            return bad("noise_amplitude must be non-negative");
        }
        if !self.background_level.is_finite() {
            return bad("background_level must be finite");
        }
        if !(self.pitch > 0.0 && self.pitch.is_finite()) {
            return bad("pitch must be positive");
        }
        let (lo, hi) = self.bump_count_range;
        if !(1 <= lo && lo <= hi && hi <= 12) {
            return bad("bump_count_range must be a sub-interval of [1, 12]");
        }
        Ok(())
    }

    /// Pixel coordinate of the via centre inside its frame.
    pub fn center(&self) -> f64 {
        (self.frame / 2) as f64
    }

    /// Radius of the ridge / bulge circle.
    pub fn rim_radius(&self) -> f64 {
        self.via_radius as f64 - 2.0
    }

    /// Bounding box of the via footprint relative to the frame origin.
    pub fn footprint(&self) -> Rect {
        let c = self.frame / 2;
        // largest integer offset d with d^2 < r^2
        let d = (self.via_radius as f64).ceil() as u32 - 1;
        Rect::new(c - d, c - d, c + d + 1, c + d + 1)
    }
}

// Floors, as fractions of `amplitude`. Ring must stay low so the ridge dominates.
const GRANULAR_FLOOR: f64 = 1.0;
const RING_FLOOR: f64 = 0.3;
const BULGE_FLOOR: f64 = 0.8;
// RMS of the interior texture on ring and bulge vias, as a fraction of amplitude.
const INTERIOR_NOISE: f64 = 0.125;
const NOISE_CLIP: f64 = 2.0;
const NOISE_WAVES: usize = 20;
const MAX_RING_GAP: f64 = 0.12;

/// Zero-mean, unit-RMS (over the footprint) sum of random plane waves with
/// wavelengths between 4 and 16 px.
fn band_limited_noise(rng: &mut impl Rng, frame: usize, inside: &[bool]) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64)> = (0..NOISE_WAVES)
        .map(|_| {
            let lambda = rng.random_range(4.0..16.0);
            let theta = rng.random_range(0.0..TAU);
            let phase = rng.random_range(0.0..TAU);
            let k = TAU / lambda;
            (k * theta.cos(), k * theta.sin(), phase)
        })
        .collect();
    let mut field: Vec<f64> = (0..frame * frame)
        .map(|i| {
            let (x, y) = ((i % frame) as f64, (i / frame) as f64);
            waves.iter().map(|&(kx, ky, ph)| (kx * x + ky * y + ph).cos()).sum()
        })
        .collect();
    let n = inside.iter().filter(|&&b| b).count().max(1) as f64;
    let mean = field.iter().zip(inside).filter(|(_, &b)| b).map(|(v, _)| v).sum::<f64>() / n;
    let var = field.iter().zip(inside).filter(|(_, &b)| b).map(|(v, _)| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    for v in &mut field {
        *v = (*v - mean) / sd;
    }
    field
}

/// `k` angles with pairwise circular separation of at least `2π / (2k)`.
fn spread_angles(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let min_sep = TAU / (2 * k) as f64;
    let slack = TAU - min_sep * k as f64;
    let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0f64) + 1e-9).collect();
    let total: f64 = weights.iter().sum();
    let start = rng.random_range(0.0..TAU);
    let mut acc = start;
    weights
        .iter()
        .map(|w| {
            let a = acc;
            acc += min_sep + slack * w / total;
            a.rem_euclid(TAU)
        })
        .collect()
}

pub fn generate_via(label: MorphologyLabel, p: &GenParams) -> Result<HeightMap, GenError> {
    p.validate()?;
    let frame = p.frame as usize;
    let c = p.center();
    let r = p.via_radius as f64;
    let amp = p.amplitude as f64;
    let bg = p.background_level as f64;
    let rim = p.rim_radius();
    let sigma = p.ring_sigma as f64;

    let polar: Vec<(f64, f64)> = (0..frame * frame)
        .map(|i| {
            let dx = (i % frame) as f64 - c;
            let dy = (i / frame) as f64 - c;
            (dx.hypot(dy), dy.atan2(dx))
        })
        .collect();
    let inside: Vec<bool> = polar.iter().map(|&(rho, _)| rho < r).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ ((label.index() as u64 + 1) << 56));
    let noise = band_limited_noise(&mut rng, frame, &inside);
    let clip = |v: f64| v.clamp(-NOISE_CLIP, NOISE_CLIP);

    let relief: Box<dyn Fn(usize) -> f64> = match label {
        MorphologyLabel::Granular => {
            let na = p.noise_amplitude as f64;
            Box::new(move |i| GRANULAR_FLOOR * amp + na * clip(noise[i]))
        }
        MorphologyLabel::EdgeRing => {
            let gap = rng.random_range(0.0..MAX_RING_GAP) * TAU;
            let gap_start = rng.random_range(0.0..TAU);
            let polar = polar.clone();
            Box::new(move |i| {
                let (rho, theta) = polar[i];
                let into_gap = (theta - gap_start).rem_euclid(TAU);
                let coverage = if gap > 0.0 && into_gap < gap { 1.0 - (PI * into_gap / gap).sin() } else { 1.0 };
                let ridge = amp * coverage * (-(rho - rim).powi(2) / (2.0 * sigma * sigma)).exp();
                RING_FLOOR * amp + INTERIOR_NOISE * amp * clip(noise[i]) + ridge
            })
        }
        MorphologyLabel::EdgeBulge => {
            let (lo, hi) = p.bump_count_range;
            let k = rng.random_range(lo..=hi) as usize;
            let centers: Vec<(f64, f64)> = spread_angles(&mut rng, k)
                .into_iter()
                .map(|a| (c + rim * a.cos(), c + rim * a.sin()))
                .collect();
            let bump_sigma = 2.0 * sigma;
            Box::new(move |i| {
                let (x, y) = ((i % frame) as f64, (i / frame) as f64);
                let bump = centers
                    .iter()
                    .map(|&(bx, by)| amp * (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * bump_sigma * bump_sigma)).exp())
                    .fold(0.0, f64::max);
                BULGE_FLOOR * amp + INTERIOR_NOISE * amp * clip(noise[i]) + bump
            })
        }
    };

    let samples = (0..frame * frame)
        .map(|i| {
            let h = if inside[i] { relief(i).clamp(0.0, 4.0 * amp) } else { 0.0 };
            (bg + h) as f32
        })
        .collect();
    Ok(HeightMap::new(p.frame, p.frame, p.pitch, samples).expect("generator output satisfies height map invariants"))
}

/// Generates a via and renders it to grayscale with per-image min-max scaling.
pub fn render_via(label: MorphologyLabel, p: &GenParams) -> Result<GrayImage, GenError> {
    Ok(render_grayscale(&generate_via(label, p)?))
}

/// Ground-truth placement of one via in a mosaic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViaBox {
    pub row: u32,
    pub col: u32,
    #[serde(flatten)]
    pub rect: Rect,
    pub label: MorphologyLabel,
}

#[derive(Debug, Clone)]
pub struct Mosaic {
    pub heightmap: HeightMap,
    /// Row-major, one per via. Each box is the bounding box of the via footprint.
    pub boxes: Vec<ViaBox>,
}

/// Seed for the via at `index` of a mosaic generated with `seed`.
pub fn via_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 step
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Lays `rows x cols` vias on a regular grid. Frames are separated from each
/// other and from the image border by `gap` pixels of flat background.
pub fn generate_mosaic(
    rows: u32,
    cols: u32,
    labels: &[MorphologyLabel],
    p: &GenParams,
    gap: u32,
) -> Result<Mosaic, GenError> {
    p.validate()?;
    if rows == 0 || cols == 0 {
        return Err(GenError::InvalidParams("mosaic needs at least one row and column".into()));
    }
    if gap < 2 {
        return Err(GenError::InvalidParams("gap must be at least 2 px".into()));
    }
    let expected = (rows * cols) as usize;
    if labels.len() != expected {
        return Err(GenError::LabelCountMismatch { expected, actual: labels.len() });
    }
    let pitch = p.frame + gap;
    let width = cols * pitch + gap;
    let height = rows * pitch + gap;
    let mut samples = vec![p.background_level; width as usize * height as usize];
    let footprint = p.footprint();
    let mut boxes = Vec::with_capacity(expected);
    for row in 0..rows {
        for col in 0..cols {
            let idx = (row * cols + col) as usize;
            let via = generate_via(labels[idx], &p.with_seed(via_seed(p.seed, idx as u64)))?;
            let (ox, oy) = (gap + col * pitch, gap + row * pitch);
            for y in 0..p.frame {
                let dst = (oy + y) as usize * width as usize + ox as usize;
                let src = y as usize * p.frame as usize;
                samples[dst..dst + p.frame as usize].copy_from_slice(&via.samples()[src..src + p.frame as usize]);
            }
            boxes.push(ViaBox {
                row,
                col,
                rect: Rect::new(ox + footprint.x0, oy + footprint.y0, ox + footprint.x1, oy + footprint.y1),
                label: labels[idx],
            });
        }
    }
    let heightmap = HeightMap::new(width, height, p.pitch, samples).expect("mosaic satisfies height map invariants");
    Ok(Mosaic { heightmap, boxes })
}

/// Balanced labels cycling through the three classes, shuffled with `seed`.
pub fn balanced_labels(n: usize, seed: u64) -> Vec<MorphologyLabel> {
    use rand::seq::SliceRandom;
    let mut labels: Vec<_> = (0..n).map(|i| MorphologyLabel::ALL[i % 3]).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    labels
}

/// Summary statistics that characterise a generated via.
#[derive(Debug, Clone, Copy)]
pub struct ViaStats {
    /// Mean height above background on the rim annulus divided by the mean over
    /// the inner disk of radius `via_radius / 2`.
    pub rim_to_interior: f64,
    /// RMS about the mean on the outer annulus over RMS on the inner disk.
    pub periphery_to_interior_rms: f64,
    /// Fraction of 72 rim sectors whose mean rim height exceeds the interior
    /// mean by at least half the amplitude.
    pub rim_coverage: f64,
    /// RMS about the mean on the inner disk, in nm.
    pub interior_rms: f64,
}

pub fn via_stats(hm: &HeightMap, p: &GenParams) -> ViaStats {
    const SECTORS: usize = 72;
    let c = p.center();
    let r = p.via_radius as f64;
    let rim = p.rim_radius();
    let sigma = p.ring_sigma as f64;
    let bg = p.background_level as f64;
    let (mut rim_vals, mut inner_vals, mut outer_vals) = (Vec::new(), Vec::new(), Vec::new());
    let mut sectors = vec![(0.0f64, 0usize); SECTORS];
    for y in 0..hm.height() {
        for x in 0..hm.width() {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            let rho = dx.hypot(dy);
            let h = hm.get(x, y) as f64 - bg;
            if (rho - rim).abs() <= sigma {
                rim_vals.push(h);
                let s = (((dy.atan2(dx) + PI) / TAU) * SECTORS as f64) as usize % SECTORS;
                sectors[s].0 += h;
                sectors[s].1 += 1;
            }
            if rho < r / 2.0 {
                inner_vals.push(h);
            } else if rho >= 0.7 * r && rho < r {
                outer_vals.push(h);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let rms = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt()
    };
    let interior = mean(&inner_vals);
    let limit = interior + 0.5 * p.amplitude as f64;
    let covered = sectors.iter().filter(|(s, n)| *n > 0 && s / *n as f64 >= limit).count();
    ViaStats {
        rim_to_interior: mean(&rim_vals) / interior.max(1e-9),
        periphery_to_interior_rms: rms(&outer_vals) / rms(&inner_vals).max(1e-9),
        rim_coverage: covered as f64 / SECTORS as f64,
        interior_rms: rms(&inner_vals),
    }
}

/// Rule-based classifier over [`ViaStats`], used to check class separability:
/// textured interior means granular, otherwise rim coverage splits ring from bulge.
pub fn classify_by_stats(s: &ViaStats, p: &GenParams) -> MorphologyLabel {
    if s.interior_rms >= 0.25 * p.amplitude as f64 {
        MorphologyLabel::Granular
    } else if s.rim_coverage >= 0.8 {
        MorphologyLabel::EdgeRing
    } else {
        MorphologyLabel::EdgeBulge
    }
}
