//! JSON model files.
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! rounding, so save/load reproduces every parameter bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Dense, LayerSpec, MlpError, Network, TrainMetadata};
use crate::dataset::NormStats;

pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    sizes: Vec<usize>,
    activation: Activation,
    /// One matrix per layer, as a list of rows.
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    norm_stats: Option<NormStats>,
    metadata: TrainMetadata,
}

impl From<&Network> for ModelFile {
    fn from(net: &Network) -> Self {
        Self {
            version: MODEL_VERSION,
            sizes: net.spec.sizes.clone(),
            activation: net.spec.activation,
            weights: net
                .layers
                .iter()
                .map(|l| l.weights.chunks(l.inputs).map(<[f64]>::to_vec).collect())
                .collect(),
            biases: net.layers.iter().map(|l| l.biases.clone()).collect(),
            norm_stats: net.norm_stats.clone(),
            metadata: net.metadata.clone(),
        }
    }
}

impl TryFrom<ModelFile> for Network {
    type Error = MlpError;

    fn try_from(file: ModelFile) -> Result<Self, Self::Error> {
        if file.version != MODEL_VERSION {
            return Err(MlpError::Model(format!(
                "unsupported version {} (expected {MODEL_VERSION})",
                file.version
            )));
        }
        let spec = LayerSpec::new(file.sizes, file.activation)?;
        let n_layers = spec.sizes.len() - 1;
        if file.weights.len() != n_layers || file.biases.len() != n_layers {
            return Err(MlpError::Model(format!(
                "expected {n_layers} layers, found {} weight and {} bias arrays",
                file.weights.len(),
                file.biases.len()
            )));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (l, (rows, biases)) in file.weights.into_iter().zip(file.biases).enumerate() {
            let (inputs, outputs) = (spec.sizes[l], spec.sizes[l + 1]);
            if rows.len() != outputs
                || rows.iter().any(|r| r.len() != inputs)
                || biases.len() != outputs
            {
                return Err(MlpError::Model(format!(
                    "layer {l}: shape does not match {outputs}x{inputs}"
                )));
            }
            let weights: Vec<f64> = rows.into_iter().flatten().collect();
            if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
                return Err(MlpError::Model(format!("layer {l}: non-finite parameter")));
            }
            layers.push(Dense {
                inputs,
                outputs,
                weights,
                biases,
            });
        }
        if let Some(stats) = &file.norm_stats {
            stats.validate().map_err(MlpError::Model)?;
            if stats.target_dim() != spec.output_dim() {
                return Err(MlpError::Model(format!(
                    "normalization describes {} targets, network has {} outputs",
                    stats.target_dim(),
                    spec.output_dim()
                )));
            }
        }
        Ok(Network {
            spec,
            layers,
            norm_stats: file.norm_stats,
            metadata: file.metadata,
        })
    }
}

pub fn write_model<W: Write>(net: &Network, out: W) -> Result<(), MlpError> {
    serde_json::to_writer_pretty(out, &ModelFile::from(net))
        .map_err(|e| MlpError::Model(e.to_string()))
}

pub fn read_model<R: Read>(input: R) -> Result<Network, MlpError> {
    let file: ModelFile =
        serde_json::from_reader(input).map_err(|e| MlpError::Model(e.to_string()))?;
    Network::try_from(file)
}

/// Writes the model atomically (temp file + rename).
pub fn save_model(net: &Network, path: &Path) -> Result<(), MlpError> {
    let mut buf = Vec::new();
    write_model(net, &mut buf)?;
    buf.push(b'\n');
    crate::io::write_atomic(path, &buf).map_err(|source| MlpError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<Network, MlpError> {
    let file = std::fs::File::open(path).map_err(|source| MlpError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_model(std::io::BufReader::new(file))
}
