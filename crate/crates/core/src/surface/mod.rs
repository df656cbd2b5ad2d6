//! Surface height maps, the `WLI1` raw format and grayscale rendering.

mod gray;
mod wli;

pub use gray::{decode_png, encode_png, GrayImage, ImageError};
pub use wli::{parse_wli, write_wli, WLI_HEADER_LEN, WLI_MAGIC};

use thiserror::Error;

/// Default lateral sampling pitch in micrometres per pixel.
pub const DEFAULT_PITCH_UM: f32 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum SurfaceError {
    #[error("bad magic: expected \"WLI1\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("sample {index} is not finite")]
    NonFiniteSample { index: usize },
    #[error("pitch must be finite and positive, got {0}")]
    ZeroPitch(f32),
    #[error("height map must have at least one sample ({width}x{height})")]
    EmptyGrid { width: u32, height: u32 },
}

/// A measured (or synthesized) surface: heights in nanometres on a regular
/// grid, row-major with a top-left origin.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    width: u32,
    height: u32,
    pitch: f32,
    samples: Vec<f32>,
}

impl HeightMap {
    pub fn new(width: u32, height: u32, pitch: f32, samples: Vec<f32>) -> Result<Self, SurfaceError> {
        if width == 0 || height == 0 {
            return Err(SurfaceError::EmptyGrid { width, height });
        }
        if !(pitch.is_finite() && pitch > 0.0) {
            return Err(SurfaceError::ZeroPitch(pitch));
        }
        let expected = width as usize * height as usize;
        if samples.len() != expected {
            return Err(SurfaceError::TruncatedPayload {
                expected: expected * 4,
                actual: samples.len() * 4,
            });
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SurfaceError::NonFiniteSample { index });
        }
        Ok(Self { width, height, pitch, samples })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Micrometres per pixel.
    pub fn pitch(&self) -> f32 {
        self.pitch
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.samples[y as usize * self.width as usize + x as usize]
    }

    /// Minimum and maximum sample.
    pub fn range(&self) -> (f32, f32) {
        self.samples
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)))
    }
}

/// Linear min-max mapping of heights onto `0..=255`.
///
/// A flat surface renders as uniform 128. Rounding is half away from zero.
pub fn render_grayscale(hm: &HeightMap) -> GrayImage {
    let (lo, hi) = hm.range();
    let pixels = if hi == lo {
        vec![128u8; hm.samples.len()]
    } else {
        let (lo, span) = (lo as f64, hi as f64 - lo as f64);
        hm.samples
            .iter()
            .map(|&h| (255.0 * (h as f64 - lo) / span).round().clamp(0.0, 255.0) as u8)
            .collect()
    };
    GrayImage::new(hm.width, hm.height, pixels).expect("dimensions carried over from a valid height map")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hm(w: u32, h: u32, s: &[f32]) -> HeightMap {
        HeightMap::new(w, h, 0.2, s.to_vec()).unwrap()
    }

    #[test]
    fn render_endpoints() {
        assert_eq!(render_grayscale(&hm(2, 1, &[0.0, 100.0])).pixels(), &[0, 255]);
    }

    #[test]
    fn render_flat_is_mid_gray() {
        assert_eq!(render_grayscale(&hm(2, 2, &[7.0; 4])).pixels(), &[128; 4]);
    }

    #[test]
    fn render_rounds_half_away_from_zero() {
        // 255 * 0.5 = 127.5 -> 128
        assert_eq!(render_grayscale(&hm(3, 1, &[0.0, 50.0, 100.0])).pixels(), &[0, 128, 255]);
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert_eq!(HeightMap::new(0, 3, 1.0, vec![]), Err(SurfaceError::EmptyGrid { width: 0, height: 3 }));
        assert_eq!(HeightMap::new(1, 1, 0.0, vec![1.0]), Err(SurfaceError::ZeroPitch(0.0)));
        assert!(matches!(
            HeightMap::new(1, 2, 1.0, vec![1.0, f32::NAN]),
            Err(SurfaceError::NonFiniteSample { index: 1 })
        ));
        assert!(matches!(HeightMap::new(2, 2, 1.0, vec![1.0]), Err(SurfaceError::TruncatedPayload { .. })));
    }

    proptest! {
        #[test]
        fn render_is_monotone(samples in prop::collection::vec(-1e4f32..1e4, 2..64)) {
            let n = samples.len() as u32;
            let img = render_grayscale(&hm(n, 1, &samples));
            for i in 0..samples.len() {
                for j in 0..samples.len() {
                    if samples[i] <= samples[j] {
                        prop_assert!(img.pixels()[i] <= img.pixels()[j]);
                    }
                }
            }
        }

        #[test]
        fn render_ignores_positive_affine_maps(
            samples in prop::collection::vec(-500i32..500, 2..64),
            scale_exp in -2i32..4,
            shift in -1000i32..1000,
        ) {
            // power-of-two scales and integer shifts keep the transformed heights exact in f32
            let a = 2f32.powi(scale_exp);
            let n = samples.len() as u32;
            let base: Vec<f32> = samples.iter().map(|&s| s as f32).collect();
            let moved: Vec<f32> = base.iter().map(|&s| a * s + shift as f32).collect();
            prop_assert_eq!(render_grayscale(&hm(n, 1, &base)), render_grayscale(&hm(n, 1, &moved)));
        }
    }
}
