//! JSON checkpoint files with base64 little-endian `f32` tensors.

use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;
use walling_kernel::{BatchNormStats, Tensor};

use super::{NetworkParameters, NetworkShape};
use crate::Error;

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, ThisError, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("unsupported checkpoint format version {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt encoding: {0}")]
    CorruptEncoding(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    /// Base64 of the little-endian `f32` values.
    pub data: String,
}

impl EncodedTensor {
    pub fn encode(name: &str, t: &Tensor<f32>) -> Self {
        Self {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: encode_f32s(t.data()),
        }
    }

    /// Decodes, insisting on the expected name and shape.
    pub fn decode(&self, name: &str, shape: &[usize]) -> Result<Tensor<f32>, CheckpointError> {
        if self.name != name {
            return Err(CheckpointError::ShapeMismatch(format!(
                "expected tensor {name}, found {}",
                self.name
            )));
        }
        if self.shape != shape {
            return Err(CheckpointError::ShapeMismatch(format!(
                "{name}: file says {:?}, network needs {shape:?}",
                self.shape
            )));
        }
        let values = decode_f32s(&self.data)?;
        Tensor::from_vec(shape, values)
            .map_err(|_| CheckpointError::CorruptEncoding(format!("{name}: wrong number of values")))
    }
}

pub(crate) fn encode_f32s(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub(crate) fn decode_f32s(text: &str) -> Result<Vec<f32>, CheckpointError> {
    let bytes = decode_bytes(text)?;
    if bytes.len() % 4 != 0 {
        return Err(CheckpointError::CorruptEncoding(format!(
            "{} bytes is not a whole number of f32 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn encode_bytes(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub(crate) fn decode_bytes(text: &str) -> Result<Vec<u8>, CheckpointError> {
    STANDARD
        .decode(text)
        .map_err(|e| CheckpointError::CorruptEncoding(e.to_string()))
}

/// All tensors of one network, including batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsRecord {
    pub hidden: usize,
    pub heads: usize,
    pub parameter_count: usize,
    pub tensors: Vec<EncodedTensor>,
}

const RUNNING_MEAN: &str = "bn_running_mean";
const RUNNING_VAR: &str = "bn_running_var";

impl ParamsRecord {
    pub fn from_params(p: &NetworkParameters) -> Self {
        let mut tensors: Vec<EncodedTensor> = p
            .shape
            .trainable_shapes()
            .iter()
            .zip(&p.tensors)
            .map(|((name, _), t)| EncodedTensor::encode(name, t))
            .collect();
        tensors.push(EncodedTensor::encode(RUNNING_MEAN, &p.bn_stats.mean));
        tensors.push(EncodedTensor::encode(RUNNING_VAR, &p.bn_stats.var));
        Self {
            hidden: p.shape.hidden,
            heads: p.shape.heads,
            parameter_count: p.shape.trainable_count(),
            tensors,
        }
    }

    pub fn to_params(&self) -> Result<NetworkParameters, CheckpointError> {
        let shape = NetworkShape {
            hidden: self.hidden,
            heads: self.heads,
        };
        shape
            .validate()
            .map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))?;
        if self.parameter_count != shape.trainable_count() {
            return Err(CheckpointError::ShapeMismatch(format!(
                "parameter count {} does not match {} for hidden {} / heads {}",
                self.parameter_count,
                shape.trainable_count(),
                self.hidden,
                self.heads
            )));
        }
        let expected = shape.trainable_shapes();
        if self.tensors.len() != expected.len() + 2 {
            return Err(CheckpointError::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                expected.len() + 2,
                self.tensors.len()
            )));
        }
        let mut tensors = Vec::with_capacity(expected.len());
        for (rec, (name, s)) in self.tensors.iter().zip(&expected) {
            tensors.push(rec.decode(name, s)?);
        }
        let h = [self.hidden];
        let mut bn_stats = BatchNormStats::new(self.hidden);
        bn_stats.mean = self.tensors[expected.len()].decode(RUNNING_MEAN, &h)?;
        bn_stats.var = self.tensors[expected.len() + 1].decode(RUNNING_VAR, &h)?;
        Ok(NetworkParameters {
            shape,
            tensors,
            bn_stats,
        })
    }
}

/// The whole on-disk document. `training` carries the trainer's resumable
/// state when the file was written during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format_version: String,
    pub hyperparameters: serde_json::Value,
    pub network: ParamsRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<serde_json::Value>,
}

impl CheckpointFile {
    pub fn new(params: &NetworkParameters, hyperparameters: serde_json::Value) -> Self {
        Self {
            format_version: FORMAT_VERSION.to_string(),
            hyperparameters,
            network: ParamsRecord::from_params(params),
            training: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        // Check the version before the full schema so that future formats
        // report a version error rather than a parse error.
        let raw: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CheckpointError::CorruptEncoding(e.to_string()))?;
        let found = raw
            .get("format_version")
            .and_then(|v| v.as_str())
            .ok_or_else(|| CheckpointError::CorruptEncoding("missing format_version".into()))?;
        if found != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: found.to_string(),
                expected: FORMAT_VERSION.to_string(),
            });
        }
        serde_json::from_value(raw).map_err(|e| CheckpointError::CorruptEncoding(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization cannot fail")
    }

    pub fn params(&self) -> Result<NetworkParameters, CheckpointError> {
        self.network.to_params()
    }
}

/// Writes the checkpoint through a temporary file and a rename.
pub fn save_checkpoint(file: &CheckpointFile, path: &Path) -> Result<(), Error> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(file.to_json().as_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads and fully validates a checkpoint, returning the decoded network too.
pub fn load_checkpoint(path: &Path) -> Result<(NetworkParameters, CheckpointFile), Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| CheckpointError::CorruptEncoding(e.to_string()))?;
    let file = CheckpointFile::from_json(&text)?;
    let params = file.params()?;
    Ok((params, file))
}
