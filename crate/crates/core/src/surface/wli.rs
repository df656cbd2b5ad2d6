//! `WLI1` raw height-map format.
//!
//! Little-endian layout:
//!
//! | bytes  | content                           |
//! |--------|-----------------------------------|
//! | 0..4   | magic `b"WLI1"`                   |
//! | 4..8   | `u32` width                       |
//! | 8..12  | `u32` height                      |
//! | 12..16 | `f32` pitch (µm / px)             |
//! | 16..   | `width * height` `f32` heights (nm), row-major, top-left origin |

use super::{HeightMap, SurfaceError};

pub const WLI_MAGIC: [u8; 4] = *b"WLI1";
pub const WLI_HEADER_LEN: usize = 16;

pub fn parse_wli(bytes: &[u8]) -> Result<HeightMap, SurfaceError> {
    if bytes.len() < 4 {
        return Err(SurfaceError::TruncatedPayload { expected: WLI_HEADER_LEN, actual: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != WLI_MAGIC {
        return Err(SurfaceError::BadMagic(magic));
    }
    if bytes.len() < WLI_HEADER_LEN {
        return Err(SurfaceError::TruncatedPayload { expected: WLI_HEADER_LEN, actual: bytes.len() });
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let pitch = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if !(pitch.is_finite() && pitch > 0.0) {
        return Err(SurfaceError::ZeroPitch(pitch));
    }
    let expected = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(WLI_HEADER_LEN))
        .unwrap_or(usize::MAX);
    if bytes.len() != expected {
        return Err(SurfaceError::TruncatedPayload { expected, actual: bytes.len() });
    }
    let samples = bytes[WLI_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    HeightMap::new(width, height, pitch, samples)
}

pub fn write_wli(hm: &HeightMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(WLI_HEADER_LEN + hm.samples().len() * 4);
    out.extend_from_slice(&WLI_MAGIC);
    out.extend_from_slice(&hm.width().to_le_bytes());
    out.extend_from_slice(&hm.height().to_le_bytes());
    out.extend_from_slice(&hm.pitch().to_le_bytes());
    for s in hm.samples() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}
