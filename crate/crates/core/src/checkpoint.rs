//! Binary checkpoint: `EPAG` magic, little-endian `u32` version, `u64`
//! header length, JSON header, then the tensors as little-endian `f32`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::ClassifierConfig;
use crate::encoder::EncoderConfig;
use crate::model::{Model, ModelError};
use crate::tokenizer::SubwordVocab;

pub const MAGIC: &[u8; 4] = b"EPAG";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not an EPAG checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("truncated checkpoint header")]
    TruncatedHeader,
    #[error("invalid checkpoint header: {0}")]
    Header(String),
    #[error("payload length mismatch: manifest needs {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the payload.
    pub offset: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub encoder: EncoderConfig,
    pub classifier: ClassifierConfig,
    pub tensors: Vec<TensorEntry>,
    /// SHA-256 of the serialized vocabulary the model was trained with.
    pub vocab_hash: Option<String>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab_hash: Option<String>,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Checkpoint {
            model,
            vocab_hash: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let tensors: Vec<TensorEntry> = self
            .model
            .named_tensors()
            .into_iter()
            .map(|(name, t)| {
                let entry = TensorEntry {
                    name,
                    shape: [t.rows(), t.cols()],
                    offset,
                    count: t.len(),
                };
                offset += 4 * t.len();
                entry
            })
            .collect();
        let header = CheckpointHeader {
            encoder: self.model.encoder_config.clone(),
            classifier: self.model.classifier_config.clone(),
            tensors,
            vocab_hash: self.vocab_hash.clone(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");

        let mut out = Vec::with_capacity(16 + json.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.model.named_tensors() {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(take::<4>(bytes, 4)?);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        let header_len = u64::from_le_bytes(take::<8>(bytes, 8)?) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or(CheckpointError::TruncatedHeader)?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        let payload = &bytes[header_end..];

        let expected: usize = header.tensors.iter().map(|t| 4 * t.count).sum();
        if payload.len() != expected {
            return Err(CheckpointError::PayloadLength {
                expected,
                found: payload.len(),
            });
        }

        let mut model = Model::zeroed(header.encoder, header.classifier)?;
        let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != header.tensors.len() {
            return Err(CheckpointError::Header(format!(
                "manifest lists {} tensors, model has {}",
                header.tensors.len(),
                names.len()
            )));
        }
        let mut next_offset = 0;
        for ((entry, name), tensor) in header.tensors.iter().zip(&names).zip(model.tensors_mut()) {
            let shape = [tensor.rows(), tensor.cols()];
            if &entry.name != name || entry.shape != shape || entry.count != tensor.len() {
                return Err(CheckpointError::Header(format!(
                    "manifest entry {} {:?} does not match model tensor {name} {shape:?}",
                    entry.name, entry.shape
                )));
            }
            if entry.offset != next_offset {
                return Err(CheckpointError::Header(format!(
                    "tensor {name} at offset {}, expected {next_offset}",
                    entry.offset
                )));
            }
            let raw = &payload[entry.offset..entry.offset + 4 * entry.count];
            for (dst, chunk) in tensor.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
            }
            next_offset += 4 * entry.count;
        }
        if !model.is_finite() {
            return Err(ModelError::NonFinite("checkpoint tensors").into());
        }
        Ok(Checkpoint {
            model,
            vocab_hash: header.vocab_hash,
            metadata: header.metadata,
        })
    }
}

fn take<const N: usize>(bytes: &[u8], at: usize) -> Result<[u8; N], CheckpointError> {
    bytes
        .get(at..at + N)
        .map(|s| s.try_into().expect("exact slice"))
        .ok_or(CheckpointError::TruncatedHeader)
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, checkpoint.to_bytes()).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}

/// The model as it reads back from a checkpoint: every value rounded to f32.
pub fn round_to_storage(model: &Model) -> Model {
    let mut out = model.clone();
    for t in out.tensors_mut() {
        for v in t.data_mut() {
            *v = *v as f32 as f64;
        }
    }
    out
}

/// Lowercase hex SHA-256 of the vocabulary file contents.
pub fn vocab_hash(vocab: &SubwordVocab) -> String {
    Sha256::digest(vocab.to_file_string().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
