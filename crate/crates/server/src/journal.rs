//! Append-only JSON-lines log of session mutations, replayed on startup.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use tsvmorph_core::cropper::GridSpec;
use tsvmorph_core::surface::{decode_png, encode_png, GrayImage};

use crate::session::{LabelRequest, Session};
use crate::ApiError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Entry {
    Create { source: String, rows: u32, cols: u32, theta: f64 },
    Grid { grid: GridSpec },
    Label { index: usize, #[serde(flatten)] request: LabelRequest },
    Export,
}

#[derive(Debug, Clone)]
pub struct Journal {
    dir: PathBuf,
}

impl Journal {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    fn image_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.png"))
    }

    pub fn start(&self, id: &str, image: &GrayImage, entry: &Entry) -> Result<(), ApiError> {
        let png = encode_png(image).map_err(|e| ApiError::Internal(e.to_string()))?;
        fs::write(self.image_path(id), png)?;
        fs::write(self.log_path(id), "")?;
        self.append(id, entry)
    }

    pub fn append(&self, id: &str, entry: &Entry) -> Result<(), ApiError> {
        let mut line = serde_json::to_vec(entry).map_err(|e| ApiError::Internal(e.to_string()))?;
        line.push(b'\n');
        let mut f = OpenOptions::new().append(true).open(self.log_path(id))?;
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(())
    }

    /// Session ids with a journal on disk.
    pub fn ids(&self) -> std::io::Result<Vec<String>> {
        let mut ids = Vec::new();
        for e in fs::read_dir(&self.dir)? {
            let path = e?.path();
            if path.extension().is_some_and(|x| x == "jsonl") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Rebuilds a session by replaying its log. A torn final line (crash
    /// mid-write) is ignored.
    pub fn replay(&self, id: &str) -> Result<Session, ApiError> {
        let image = decode_png(&fs::read(self.image_path(id))?).map_err(|e| ApiError::Internal(e.to_string()))?;
        let file = BufReader::new(fs::File::open(self.log_path(id))?);
        let mut session: Option<Session> = None;
        for line in file.lines() {
            let line = line?;
            let Ok(entry) = serde_json::from_str::<Entry>(&line) else {
                log::warn!("session {id}: skipping unreadable journal line");
                continue;
            };
            match (entry, session.as_mut()) {
                (Entry::Create { source, rows, cols, theta }, None) => {
                    session = Some(Session::create(id.to_string(), source, image.clone(), rows, cols, theta)?);
                }
                (Entry::Grid { grid }, Some(s)) => s.set_grid(grid)?,
                (Entry::Label { index, request }, Some(s)) => {
                    s.set_label(index, &request)?;
                }
                (Entry::Export, Some(s)) => s.dirty = false,
                _ => return Err(ApiError::Internal(format!("session {id}: journal out of order"))),
            }
        }
        session.ok_or_else(|| ApiError::Internal(format!("session {id}: empty journal")))
    }
}

