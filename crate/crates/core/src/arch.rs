//! The four classifier architectures, all taking a 54x54 single-channel crop
//! and ending in a three-way softmax.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::label::NUM_CLASSES;
use crate::nn::{LayerSpec, Model, NnError};
use crate::scalar::Scalar;

pub const INPUT_SHAPE: [usize; 3] = [1, 54, 54];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchId {
    #[serde(rename = "lenet5")]
    LeNet5,
    #[serde(rename = "alexnet_inspired_lenet")]
    AlexNetInspiredLeNet,
    #[serde(rename = "alexnet")]
    AlexNet,
    #[serde(rename = "vgg_inspired_alexnet")]
    VggInspiredAlexNet,
}

impl ArchId {
    pub const ALL: [ArchId; 4] = [ArchId::LeNet5, ArchId::AlexNetInspiredLeNet, ArchId::AlexNet, ArchId::VggInspiredAlexNet];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchId::LeNet5 => "lenet5",
            ArchId::AlexNetInspiredLeNet => "alexnet_inspired_lenet",
            ArchId::AlexNet => "alexnet",
            ArchId::VggInspiredAlexNet => "vgg_inspired_alexnet",
        }
    }

    pub fn has_dropout(self) -> bool {
        self != ArchId::LeNet5
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown architecture {0:?} (expected lenet5, alexnet_inspired_lenet, alexnet or vgg_inspired_alexnet)")]
pub struct UnknownArch(pub String);

impl FromStr for ArchId {
    type Err = UnknownArch;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "lenet5" | "lenet" => Ok(ArchId::LeNet5),
            "alexnetinspiredlenet" => Ok(ArchId::AlexNetInspiredLeNet),
            "alexnet" => Ok(ArchId::AlexNet),
            "vgginspiredalexnet" | "vgg" => Ok(ArchId::VggInspiredAlexNet),
            _ => Err(UnknownArch(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub id: ArchId,
    pub layers: Vec<LayerSpec>,
    /// Indices of dropout layers whose rate is set by the sweep.
    pub dropout_slots: Vec<usize>,
}

fn conv_block(out: &mut Vec<LayerSpec>, conv: LayerSpec, norm: bool, pool: Option<LayerSpec>) {
    out.push(conv);
    if norm {
        out.push(LayerSpec::BatchNorm);
    }
    out.push(LayerSpec::relu());
    out.extend(pool);
}

fn fc(out: &mut Vec<LayerSpec>, units: usize, dropout: bool) {
    out.push(LayerSpec::Dense { units });
    out.push(LayerSpec::relu());
    if dropout {
        out.push(LayerSpec::Dropout { rate: 0.0 });
    }
}

fn head(out: &mut Vec<LayerSpec>) {
    out.push(LayerSpec::Dense { units: NUM_CLASSES });
    out.push(LayerSpec::Softmax);
}

pub fn build(id: ArchId) -> ArchitectureSpec {
    use LayerSpec as L;
    let mut layers = Vec::new();
    match id {
        ArchId::LeNet5 => {
            layers.extend([
                L::conv(6, 5, 1, 0),
                L::tanh(),
                L::avg_pool(2, 2, 0),
                L::conv(16, 5, 1, 0),
                L::tanh(),
                L::avg_pool(2, 2, 0),
                L::conv(120, 5, 1, 0),
                L::tanh(),
                L::Flatten,
                L::Dense { units: 84 },
                L::tanh(),
            ]);
        }
        ArchId::AlexNetInspiredLeNet => {
            for filters in [6, 16, 120] {
                conv_block(&mut layers, L::conv(filters, 5, 1, 0), true, Some(L::max_pool(2, 2, 0)));
            }
            layers.push(L::Flatten);
            fc(&mut layers, 512, true);
            fc(&mut layers, 64, true);
        }
        ArchId::AlexNet => {
            conv_block(&mut layers, L::conv(96, 11, 4, 0), true, Some(L::max_pool(3, 2, 0)));
            conv_block(&mut layers, L::conv(256, 5, 1, 2), true, Some(L::max_pool(3, 2, 0)));
            conv_block(&mut layers, L::conv(384, 3, 1, 1), false, None);
            conv_block(&mut layers, L::conv(384, 3, 1, 1), false, None);
            conv_block(&mut layers, L::conv(256, 3, 1, 1), false, Some(L::max_pool(3, 2, 1)));
            layers.push(L::Flatten);
            fc(&mut layers, 1024, true);
            fc(&mut layers, 1024, true);
        }
        ArchId::VggInspiredAlexNet => {
            conv_block(&mut layers, L::conv(96, 3, 1, 0), true, Some(L::max_pool(2, 2, 0)));
            conv_block(&mut layers, L::conv(256, 3, 1, 0), true, Some(L::max_pool(2, 2, 0)));
            conv_block(&mut layers, L::conv(384, 3, 1, 0), false, None);
            conv_block(&mut layers, L::conv(384, 3, 1, 0), false, None);
            conv_block(&mut layers, L::conv(256, 3, 1, 0), false, Some(L::max_pool(2, 2, 0)));
            layers.push(L::Flatten);
            fc(&mut layers, 1024, true);
            fc(&mut layers, 256, true);
            fc(&mut layers, 64, false);
        }
    }
    head(&mut layers);
    let dropout_slots = layers.iter().enumerate().filter(|(_, l)| matches!(l, L::Dropout { .. })).map(|(i, _)| i).collect();
    ArchitectureSpec { id, layers, dropout_slots }
}

/// One row of a shape trace: the layer and its per-sample output shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: usize,
    pub layer: LayerSpec,
    pub output: Vec<usize>,
    pub params: usize,
}

impl ArchitectureSpec {
    /// Sets every sweep-controlled dropout rate.
    pub fn with_dropout(mut self, rate: f64) -> Result<Self, NnError> {
        for &i in &self.dropout_slots {
            let spec = LayerSpec::Dropout { rate };
            spec.validate()?;
            self.layers[i] = spec;
        }
        Ok(self)
    }

    /// Applies the output-size law layer by layer from `input`.
    pub fn shape_trace(&self, input: &[usize]) -> Result<Vec<TraceEntry>, NnError> {
        let mut shape = input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            let params = layer.param_count(&shape);
            shape = layer.output_shape(index, &shape)?;
            out.push(TraceEntry { index, layer: *layer, output: shape.clone(), params });
        }
        Ok(out)
    }

    /// Shape entering the first flatten layer.
    pub fn pre_flatten_shape(&self) -> Result<Vec<usize>, NnError> {
        let trace = self.shape_trace(&INPUT_SHAPE)?;
        let at = trace.iter().position(|e| e.layer == LayerSpec::Flatten).expect("every architecture flattens");
        Ok(if at == 0 { INPUT_SHAPE.to_vec() } else { trace[at - 1].output.clone() })
    }

    pub fn param_count(&self) -> Result<usize, NnError> {
        Ok(self.shape_trace(&INPUT_SHAPE)?.iter().map(|e| e.params).sum())
    }

    pub fn model<T: Scalar>(&self, seed: u64) -> Result<Model<T>, NnError> {
        Model::new(self.id.as_str(), &INPUT_SHAPE, &self.layers, seed)
    }
}

fn shape_str(s: &[usize]) -> String {
    s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Layer table with output shapes and parameter counts.
pub fn describe(id: ArchId) -> Result<String, NnError> {
    let spec = build(id);
    let trace = spec.shape_trace(&INPUT_SHAPE)?;
    let mut s = String::new();
    writeln!(s, "architecture: {id}").unwrap();
    writeln!(s, "input: {}", shape_str(&INPUT_SHAPE)).unwrap();
    writeln!(s, "{:>3}  {:<24} {:<14} {:>10}", "#", "layer", "output", "params").unwrap();
    for e in &trace {
        writeln!(s, "{:>3}  {:<24} {:<14} {:>10}", e.index, e.layer.to_string(), shape_str(&e.output), e.params).unwrap();
    }
    writeln!(s, "dropout slots: {:?}", spec.dropout_slots).unwrap();
    writeln!(s, "total params: {}", trace.iter().map(|e| e.params).sum::<usize>()).unwrap();
    Ok(s)
}
