//! Checkpoint file: `TSVMCKPT`, a little-endian `u32` header length, a JSON
//! header, then every tensor as raw little-endian `f32` in layer order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, Model, NnError, Tensor};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TSVMCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub layer: usize,
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub arch: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub epoch: u32,
    #[serde(default)]
    pub metrics: serde_json::Value,
    pub tensors: Vec<CheckpointTensor>,
}

fn named_tensors<T: Scalar>(model: &Model<T>) -> Vec<(usize, &'static str, &Tensor<T>)> {
    let mut out = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        let names: &[&'static str] = match layer.spec() {
            LayerSpec::BatchNorm => &["gamma", "beta"],
            _ => &["weight", "bias"],
        };
        for (name, t) in names.iter().zip(layer.params()) {
            out.push((i, *name, t));
        }
        if let Some((m, v)) = layer.running_stats() {
            out.push((i, "running_mean", m));
            out.push((i, "running_var", v));
        }
    }
    out
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    mut w: W,
    model: &Model<T>,
    epoch: u32,
    metrics: serde_json::Value,
) -> Result<(), NnError> {
    let tensors = named_tensors(model);
    let mut offset = 0;
    let mut entries = Vec::with_capacity(tensors.len());
    for (layer, name, t) in &tensors {
        entries.push(CheckpointTensor { layer: *layer, name: name.to_string(), shape: t.shape().to_vec(), offset });
        offset += t.len() * 4;
    }
    let header = Checkpoint {
        arch: model.name().to_string(),
        input_shape: model.input_shape().to_vec(),
        layers: model.specs(),
        epoch,
        metrics,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, _, t) in tensors {
        for v in t.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<(Model<T>, Checkpoint), NnError> {
    let bad = |m: &str| NnError::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Checkpoint = serde_json::from_slice(&json).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;

    let mut model = Model::<T>::new(header.arch.clone(), &header.input_shape, &header.layers, 0)?;
    let expected = named_tensors(&model);
    if expected.len() != header.tensors.len() {
        return Err(bad("tensor count does not match the layer list"));
    }
    let mut loaded = Vec::with_capacity(expected.len());
    for ((layer, name, t), entry) in expected.iter().zip(&header.tensors) {
        if entry.layer != *layer || entry.name != *name || entry.shape != t.shape() {
            return Err(bad(&format!("unexpected tensor {} of layer {}", entry.name, entry.layer)));
        }
        let end = entry.offset + t.len() * 4;
        let bytes = payload.get(entry.offset..end).ok_or_else(|| bad("payload truncated"))?;
        let data =
            bytes.chunks_exact(4).map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)).collect();
        loaded.push(Tensor::from_vec(&entry.shape, data)?);
    }
    let mut it = loaded.into_iter();
    for layer in model.layers_mut() {
        for p in layer.params_mut() {
            *p = it.next().unwrap();
        }
        if let Some((m, v)) = layer.running_stats_mut() {
            *m = it.next().unwrap();
            *v = it.next().unwrap();
        }
    }
    Ok((model, header))
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    model: &Model<T>,
    epoch: u32,
    metrics: serde_json::Value,
) -> Result<(), NnError> {
    write_checkpoint(BufWriter::new(File::create(path)?), model, epoch, metrics)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(Model<T>, Checkpoint), NnError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
