use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::augment::Transform;
use crate::cropper::{crop_file_name, CropRecord};
use crate::surface::encode_png;
use crate::label::{MorphologyLabel, SoftLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

/// One line of a JSON-lines manifest. `label` may be absent for crops that
/// have not been labeled yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<MorphologyLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_label: Option<SoftLabel>,
    pub split: Split,
    pub source_id: String,
    pub transform: Transform,
}

pub fn read_manifest_str(text: &str) -> Result<Vec<ManifestRecord>, TrainError> {
    parse_lines(text.lines().map(|l| Ok(l.to_string())))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>, TrainError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    parse_lines(file.lines())
}

fn parse_lines(lines: impl Iterator<Item = std::io::Result<String>>) -> Result<Vec<ManifestRecord>, TrainError> {
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| TrainError::Manifest { line: i + 1, message: e.to_string() })?;
        if let (Some(hard), Some(soft)) = (rec.label, rec.soft_label) {
            if soft.argmax() != hard {
                return Err(TrainError::Manifest {
                    line: i + 1,
                    message: format!("label {hard} disagrees with soft label argmax {}", soft.argmax()),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(mut w: W, records: &[ManifestRecord]) -> Result<(), TrainError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| TrainError::Report(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Assigns whole sources to the test split so that about `test_fraction` of
/// them are held out; all records of one source share a split.
pub fn assign_splits(records: &mut [ManifestRecord], test_fraction: f64, seed: u64) -> Result<(), TrainError> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(TrainError::Config(format!("test fraction {test_fraction} outside [0, 1]")));
    }
    let mut sources: Vec<String> =
        records.iter().map(|r| r.source_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    sources.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (sources.len() as f64 * test_fraction).round() as usize;
    let test: BTreeSet<&String> = sources[..n_test].iter().collect();
    for r in records.iter_mut() {
        r.split = if test.contains(&r.source_id) { Split::Test } else { Split::Train };
    }
    Ok(())
}

/// Manifest records for a set of crops of `source`, one per crop in order.
pub fn crop_records(source: &str, crops: &[CropRecord], split: Split) -> Vec<ManifestRecord> {
    crops
        .iter()
        .map(|c| {
            let (row, col) = c.grid_cell;
            let path = crop_file_name(source, row, col);
            ManifestRecord {
                source_id: path.trim_end_matches(".png").to_string(),
                path,
                label: c.label(),
                soft_label: c.soft_label().copied(),
                split,
                transform: Transform::Identity,
            }
        })
        .collect()
}

/// File name of the manifest written next to exported crops.
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Writes every crop as a PNG plus `manifest.jsonl` into `dir`.
pub fn export_crops(dir: &Path, source: &str, crops: &[CropRecord], split: Split) -> Result<Vec<ManifestRecord>, TrainError> {
    std::fs::create_dir_all(dir)?;
    let records = crop_records(source, crops, split);
    for (crop, rec) in crops.iter().zip(&records) {
        let png = encode_png(&crop.image).map_err(|source| TrainError::Image { path: rec.path.clone(), source })?;
        std::fs::write(dir.join(&rec.path), png)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join(MANIFEST_FILE))?);
    write_manifest(&mut out, &records)?;
    out.flush()?;
    Ok(records)
}
