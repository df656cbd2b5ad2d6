use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use tsvmorph_core::cropper::{crop_mosaic, estimate_grid, CropRecord, GridSpec};
use tsvmorph_core::geom::Rect;
use tsvmorph_core::label::{MorphologyLabel, SoftLabel};
use tsvmorph_core::surface::GrayImage;

use crate::ApiError;

/// One cropping and labeling session over a mosaic image.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub source: String,
    pub image: GrayImage,
    pub grid: GridSpec,
    pub confident: bool,
    pub theta: f64,
    pub crops: Vec<CropRecord>,
    /// Set by any mutation, cleared by export.
    pub dirty: bool,
}

/// Body of a label request. A soft label alone sets the hard label to its
/// argmax; neither clears the crop.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    #[serde(default)]
    pub label: Option<MorphologyLabel>,
    #[serde(default)]
    pub soft_label: Option<SoftLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropView {
    pub index: usize,
    pub row: u32,
    pub col: u32,
    pub source_box: Rect,
    pub label: Option<MorphologyLabel>,
    pub soft_label: Option<SoftLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub source: String,
    pub width: u32,
    pub height: u32,
    pub grid: GridSpec,
    pub confident: bool,
    pub theta: f64,
    pub crop_count: usize,
    pub labeled: usize,
    pub dirty: bool,
    pub crops: Vec<CropView>,
}

impl Session {
    pub fn create(id: String, source: String, image: GrayImage, rows: u32, cols: u32, theta: f64) -> Result<Self, ApiError> {
        let est = estimate_grid(&image, rows, cols, theta).map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let crops = crop_mosaic(&image, &est.grid, theta).map_err(|e| ApiError::BadRequest(e.to_string()))?;
        Ok(Self { id, source, image, grid: est.grid, confident: est.confident, theta, crops, dirty: false })
    }

    /// Re-cuts every crop for `grid`. Labels stay with their `(row, col)` cell.
    pub fn set_grid(&mut self, grid: GridSpec) -> Result<(), ApiError> {
        let mut crops = crop_mosaic(&self.image, &grid, self.theta).map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let old: HashMap<(u32, u32), &CropRecord> = self.crops.iter().map(|c| (c.grid_cell, c)).collect();
        for c in &mut crops {
            if let Some(prev) = old.get(&c.grid_cell) {
                c.set_labels(prev.label(), prev.soft_label().copied()).expect("labels were consistent before");
            }
        }
        self.crops = crops;
        self.grid = grid;
        self.confident = true;
        self.dirty = true;
        Ok(())
    }

    pub fn set_label(&mut self, index: usize, req: &LabelRequest) -> Result<CropView, ApiError> {
        let crop = self.crops.get_mut(index).ok_or_else(|| ApiError::NotFound(format!("crop {index}")))?;
        crop.set_labels(req.label, req.soft_label).map_err(|e| ApiError::BadRequest(e.to_string()))?;
        self.dirty = true;
        Ok(self.crop_view(index))
    }

    pub fn crop_index(&self, row: u32, col: u32) -> Option<usize> {
        self.crops.iter().position(|c| c.grid_cell == (row, col))
    }

    pub fn crop_view(&self, index: usize) -> CropView {
        let c = &self.crops[index];
        CropView {
            index,
            row: c.grid_cell.0,
            col: c.grid_cell.1,
            source_box: c.source_box,
            label: c.label(),
            soft_label: c.soft_label().copied(),
        }
    }

    pub fn labeled(&self) -> usize {
        self.crops.iter().filter(|c| c.label().is_some()).count()
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.id.clone(),
            source: self.source.clone(),
            width: self.image.width(),
            height: self.image.height(),
            grid: self.grid,
            confident: self.confident,
            theta: self.theta,
            crop_count: self.crops.len(),
            labeled: self.labeled(),
            dirty: self.dirty,
            crops: (0..self.crops.len()).map(|i| self.crop_view(i)).collect(),
        }
    }
}
