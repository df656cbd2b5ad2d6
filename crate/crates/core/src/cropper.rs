//! Grid partitioning of mosaic images and per-cell via box detection.
//!
//! The background intensity is the mode of the four 5x5 corner patches of the
//! image. A scanline (row or column of a cell) is "signal" when its mean
//! intensity differs from the background by more than `theta` levels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Rect;
use crate::label::{LabelError, MorphologyLabel, SoftLabel};
use crate::surface::GrayImage;

/// Side of every via crop.
pub const CROP_SIZE: u32 = 54;
pub const DEFAULT_THETA: f64 = 12.0;
pub const MIN_CELL: u32 = 8;
const CORNER_PATCH: u32 = 5;
const MIN_GAP_RUN: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum CropError {
    #[error("image is {width}x{height}, need at least 8x8")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("box {width}x{height} does not fit a {CROP_SIZE}x{CROP_SIZE} crop")]
    BoxTooLarge { width: u32, height: u32 },
    #[error("box {0:?} lies outside the image")]
    BoxOutOfBounds(Rect),
}

/// Uniform grid with optional per-cell drift.
///
/// Cell `(r, c)` has its top-left corner at
/// `(x_offset + c * cell_width + r * x_skew, y_offset + r * cell_height + c * y_skew)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: u32,
    pub cols: u32,
    pub x_offset: i32,
    pub y_offset: i32,
    pub cell_width: u32,
    pub cell_height: u32,
    #[serde(default)]
    pub x_skew: i32,
    #[serde(default)]
    pub y_skew: i32,
}

impl GridSpec {
    /// Even partition of an image without offsets or skew.
    pub fn uniform(width: u32, height: u32, rows: u32, cols: u32) -> Self {
        Self {
            rows,
            cols,
            x_offset: 0,
            y_offset: 0,
            cell_width: width / cols.max(1),
            cell_height: height / rows.max(1),
            x_skew: 0,
            y_skew: 0,
        }
    }

    fn corner(&self, row: u32, col: u32) -> (i64, i64) {
        let x = self.x_offset as i64 + col as i64 * self.cell_width as i64 + row as i64 * self.x_skew as i64;
        let y = self.y_offset as i64 + row as i64 * self.cell_height as i64 + col as i64 * self.y_skew as i64;
        (x, y)
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<(), CropError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(CropError::InvalidGrid("rows and cols must be at least 1".into()));
        }
        if self.cell_width < MIN_CELL || self.cell_height < MIN_CELL {
            return Err(CropError::InvalidGrid(format!("cells must be at least {MIN_CELL}x{MIN_CELL}")));
        }
        for row in 0..self.rows {
            for col in 0..self.cols {
                let (x, y) = self.corner(row, col);
                if x < 0
                    || y < 0
                    || x + self.cell_width as i64 > width as i64
                    || y + self.cell_height as i64 > height as i64
                {
                    return Err(CropError::InvalidGrid(format!("cell ({row},{col}) leaves the {width}x{height} image")));
                }
            }
        }
        Ok(())
    }

    /// Rectangle of cell `(row, col)`. Only meaningful for a validated grid.
    pub fn cell(&self, row: u32, col: u32) -> Rect {
        let (x, y) = self.corner(row, col);
        Rect::from_size(x.max(0) as u32, y.max(0) as u32, self.cell_width, self.cell_height)
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = ((u32, u32), Rect)> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| ((r, c), self.cell(r, c))))
    }

    pub fn len(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of automatic grid estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridEstimate {
    pub grid: GridSpec,
    /// False when either axis fell back to a plain uniform partition.
    pub confident: bool,
}

/// Mode of the four corner patches (ties resolve to the darker value).
pub fn background_estimate(img: &GrayImage) -> u8 {
    let (w, h) = (img.width(), img.height());
    let pw = CORNER_PATCH.min(w);
    let ph = CORNER_PATCH.min(h);
    let mut hist = [0u32; 256];
    for (x0, y0) in [(0, 0), (w - pw, 0), (0, h - ph), (w - pw, h - ph)] {
        for y in y0..y0 + ph {
            for x in x0..x0 + pw {
                hist[img.get(x, y) as usize] += 1;
            }
        }
    }
    let mut best = 0;
    for v in 1..256 {
        if hist[v] > hist[best] {
            best = v;
        }
    }
    best as u8
}

fn row_mean(img: &GrayImage, y: u32, x0: u32, x1: u32) -> f64 {
    (x0..x1).map(|x| img.get(x, y) as u64).sum::<u64>() as f64 / (x1 - x0) as f64
}

fn col_mean(img: &GrayImage, x: u32, y0: u32, y1: u32) -> f64 {
    (y0..y1).map(|y| img.get(x, y) as u64).sum::<u64>() as f64 / (y1 - y0) as f64
}

/// Maximal runs of signal positions, merging signal separated by background
/// runs shorter than two pixels. Returns `(start, end)` half-open.
fn signal_segments(signal: &[bool]) -> Vec<(usize, usize)> {
    let mut raw: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < signal.len() {
        if signal[i] {
            let start = i;
            while i < signal.len() && signal[i] {
                i += 1;
            }
            raw.push((start, i));
        } else {
            i += 1;
        }
    }
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for seg in raw {
        match merged.last_mut() {
            Some(last) if seg.0 - last.1 < MIN_GAP_RUN => last.1 = seg.1,
            _ => merged.push(seg),
        }
    }
    merged
}

/// Fits `offset + i * cell` to the segment centres along one axis. Returns
/// `None` when the segment count does not match the expected count.
fn fit_axis(profile: &[f64], background: f64, theta: f64, count: u32) -> Option<(i32, u32)> {
    let extent = profile.len() as f64;
    let signal: Vec<bool> = profile.iter().map(|m| (m - background).abs() > theta).collect();
    let segments = signal_segments(&signal);
    if segments.len() != count as usize {
        return None;
    }
    if count == 1 {
        return Some((0, profile.len() as u32));
    }
    let centers: Vec<f64> = segments.iter().map(|&(s, e)| (s + e) as f64 / 2.0).collect();
    let n = centers.len() as f64;
    let mean_i = (n - 1.0) / 2.0;
    let mean_c = centers.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, c) in centers.iter().enumerate() {
        sxy += (i as f64 - mean_i) * (c - mean_c);
        sxx += (i as f64 - mean_i).powi(2);
    }
    let pitch = sxy / sxx;
    let first = mean_c - pitch * mean_i;
    let mut cell = pitch.round().max(1.0) as i64;
    let mut offset = (first - pitch / 2.0).round() as i64;
    let total = |cell: i64| cell * count as i64;
    if total(cell) > extent as i64 {
        cell = extent as i64 / count as i64;
    }
    offset = offset.clamp(0, extent as i64 - total(cell));
    Some((offset as i32, cell as u32))
}

/// Estimates a uniform grid from row and column intensity profiles.
pub fn estimate_grid(img: &GrayImage, rows: u32, cols: u32, theta: f64) -> Result<GridEstimate, CropError> {
    let (w, h) = (img.width(), img.height());
    if w < MIN_CELL || h < MIN_CELL {
        return Err(CropError::ImageTooSmall { width: w, height: h });
    }
    if rows == 0 || cols == 0 || h / rows < MIN_CELL || w / cols < MIN_CELL {
        return Err(CropError::InvalidGrid(format!("{rows}x{cols} grid does not fit a {w}x{h} image")));
    }
    let bg = background_estimate(img) as f64;
    let row_profile: Vec<f64> = (0..h).map(|y| row_mean(img, y, 0, w)).collect();
    let col_profile: Vec<f64> = (0..w).map(|x| col_mean(img, x, 0, h)).collect();
    let fallback = GridSpec::uniform(w, h, rows, cols);
    let ys = fit_axis(&row_profile, bg, theta, rows).filter(|&(_, c)| c >= MIN_CELL);
    let xs = fit_axis(&col_profile, bg, theta, cols).filter(|&(_, c)| c >= MIN_CELL);
    let (y_offset, cell_height) = ys.unwrap_or((0, fallback.cell_height));
    let (x_offset, cell_width) = xs.unwrap_or((0, fallback.cell_width));
    let grid = GridSpec { rows, cols, x_offset, y_offset, cell_width, cell_height, x_skew: 0, y_skew: 0 };
    grid.validate(w, h)?;
    Ok(GridEstimate { grid, confident: xs.is_some() && ys.is_some() })
}

fn find_box(img: &GrayImage, cell: Rect, bg: f64, theta: f64) -> Option<Rect> {
    let hot = |m: f64| (m - bg).abs() > theta;
    let top = (cell.y0..cell.y1).find(|&y| hot(row_mean(img, y, cell.x0, cell.x1)))?;
    let bottom = (cell.y0..cell.y1).rev().find(|&y| hot(row_mean(img, y, cell.x0, cell.x1)))?;
    let left = (cell.x0..cell.x1).find(|&x| hot(col_mean(img, x, cell.y0, cell.y1)))?;
    let right = (cell.x0..cell.x1).rev().find(|&x| hot(col_mean(img, x, cell.y0, cell.y1)))?;
    Some(Rect::new(left, top, right + 1, bottom + 1))
}

/// Tightest box whose edges are the first signal scanlines met when sweeping
/// inward from each side of `cell`; the whole cell when nothing exceeds `theta`.
pub fn detect_box_in_cell(img: &GrayImage, cell: Rect, theta: f64) -> Rect {
    find_box(img, cell, background_estimate(img) as f64, theta).unwrap_or(cell)
}

fn check_inside(img: &GrayImage, r: &Rect) -> Result<(), CropError> {
    if r.is_empty() || r.x1 > img.width() || r.y1 > img.height() {
        return Err(CropError::BoxOutOfBounds(*r));
    }
    Ok(())
}

fn crop_centered_with(img: &GrayImage, rect: Rect, fill: u8) -> Result<GrayImage, CropError> {
    check_inside(img, &rect)?;
    let (w, h) = (rect.width(), rect.height());
    if w > CROP_SIZE || h > CROP_SIZE {
        return Err(CropError::BoxTooLarge { width: w, height: h });
    }
    let (left, top) = ((CROP_SIZE - w) / 2, (CROP_SIZE - h) / 2);
    let mut out = GrayImage::filled(CROP_SIZE, CROP_SIZE, fill);
    for y in 0..h {
        for x in 0..w {
            out.set(left + x, top + y, img.get(rect.x0 + x, rect.y0 + y));
        }
    }
    Ok(out)
}

/// Places the content of `rect` in the middle of a 54x54 canvas filled with the
/// background estimate. Odd padding puts the extra pixel on the right/bottom.
pub fn crop_centered(img: &GrayImage, rect: Rect) -> Result<GrayImage, CropError> {
    crop_centered_with(img, rect, background_estimate(img))
}

/// One cropped via and its labeling state.
#[derive(Debug, Clone, PartialEq)]
pub struct CropRecord {
    pub image: GrayImage,
    pub source_box: Rect,
    pub grid_cell: (u32, u32),
    label: Option<MorphologyLabel>,
    soft_label: Option<SoftLabel>,
}

impl CropRecord {
    pub fn new(image: GrayImage, source_box: Rect, grid_cell: (u32, u32)) -> Self {
        assert_eq!((image.width(), image.height()), (CROP_SIZE, CROP_SIZE), "crops are always 54x54");
        Self { image, source_box, grid_cell, label: None, soft_label: None }
    }

    pub fn label(&self) -> Option<MorphologyLabel> {
        self.label
    }

    pub fn soft_label(&self) -> Option<&SoftLabel> {
        self.soft_label.as_ref()
    }

    /// Sets a hard label, dropping any soft label that disagrees with it.
    pub fn set_label(&mut self, label: MorphologyLabel) {
        if self.soft_label.is_some_and(|s| s.argmax() != label) {
            self.soft_label = None;
        }
        self.label = Some(label);
    }

    /// Sets a soft label; the hard label becomes its argmax.
    pub fn set_soft_label(&mut self, soft: SoftLabel) {
        self.label = Some(soft.argmax());
        self.soft_label = Some(soft);
    }

    pub fn set_labels(&mut self, label: Option<MorphologyLabel>, soft: Option<SoftLabel>) -> Result<(), LabelError> {
        crate::label::check_consistent(label, soft.as_ref())?;
        self.label = label.or(soft.map(|s| s.argmax()));
        self.soft_label = soft;
        Ok(())
    }

    pub fn clear_label(&mut self) {
        self.label = None;
        self.soft_label = None;
    }
}

/// Central `CROP_SIZE` window of a cell (the whole cell when it is smaller).
fn central_window(cell: Rect) -> Rect {
    let w = cell.width().min(CROP_SIZE);
    let h = cell.height().min(CROP_SIZE);
    Rect::from_size(cell.x0 + (cell.width() - w) / 2, cell.y0 + (cell.height() - h) / 2, w, h)
}

/// Detects and crops every cell of `grid`, returning unlabeled records in
/// row-major cell order. Cells without signal yield their central window.
pub fn crop_mosaic(img: &GrayImage, grid: &GridSpec, theta: f64) -> Result<Vec<CropRecord>, CropError> {
    grid.validate(img.width(), img.height())?;
    let bg = background_estimate(img);
    let cells: Vec<_> = grid.cells().collect();
    cells
        .into_par_iter()
        .map(|(rc, cell)| {
            let rect = find_box(img, cell, bg as f64, theta).unwrap_or_else(|| central_window(cell));
            let image = crop_centered_with(img, rect, bg)?;
            Ok(CropRecord::new(image, rect, rc))
        })
        .collect()
}

/// File name used for an exported crop.
pub fn crop_file_name(source: &str, row: u32, col: u32) -> String {
    format!("{source}_{row}_{col}.png")
}
