use std::io::Cursor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("pixel buffer holds {actual} bytes, expected {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("only 8-bit grayscale PNG is supported (found {0})")]
    UnsupportedPng(String),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(ImageError::SizeMismatch { expected, actual: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self { width, height, pixels: vec![value; width as usize * height as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = v;
    }

    /// Copies the `w x h` window whose top-left corner is `(x0, y0)`.
    pub fn sub_image(&self, x0: u32, y0: u32, w: u32, h: u32) -> GrayImage {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "window outside image");
        let mut out = Vec::with_capacity((w * h) as usize);
        for y in y0..y0 + h {
            let row = y as usize * self.width as usize;
            out.extend_from_slice(&self.pixels[row + x0 as usize..row + (x0 + w) as usize]);
        }
        GrayImage { width: w, height: h, pixels: out }
    }

    /// Intensity histogram.
    pub fn histogram(&self) -> [u32; 256] {
        let mut h = [0u32; 256];
        for &p in &self.pixels {
            h[p as usize] += 1;
        }
        h
    }
}

pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&img.pixels)?;
        writer.finish()?;
    }
    Ok(out)
}

/// Decodes an 8-bit grayscale PNG; pixel values are used directly.
pub fn decode_png(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::UnsupportedPng(format!("{:?} {:?}", info.color_type, info.bit_depth)));
    }
    let (width, height) = (info.width, info.height);
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let frame = reader.next_frame(&mut buf)?;
    buf.truncate(frame.buffer_size());
    GrayImage::new(width, height, buf)
}
