//! Versioned binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic  b"ASCENDCK"
//! u32    format version
//! u64    header length, then the JSON header
//! u64    payload length in bytes, then every tensor as f64 in header order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::model::{Model, ModelConfig};
use crate::params::Parameters;
use crate::preprocess::Vocabulary;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"ASCENDCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    train: TrainConfig,
    label_map: LabelMap,
    vocab_hash: String,
    vocabulary: Vec<String>,
    feature_scaling: Option<Vec<(f64, f64)>>,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to rebuild a trained classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train_config: TrainConfig,
    pub label_map: LabelMap,
    pub vocabulary: Vocabulary,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.model.params.tensors();
        let header = Header {
            format_version: FORMAT_VERSION,
            model: self.model.config.clone(),
            train: self.train_config.clone(),
            label_map: self.label_map.clone(),
            vocab_hash: self.vocabulary.hash(),
            vocabulary: self.vocabulary.content_tokens().to_vec(),
            feature_scaling: self.model.feature_scaling.clone(),
            tensors: tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    len: t.len(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let payload_len: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + 8 + payload_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(payload_len as u64).to_le_bytes());
        for (_, t) in &tensors {
            for v in *t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated file"));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let header_len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let header: Header = serde_json::from_slice(take(header_len)?)?;
        let payload_len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let payload = take(payload_len)?;
        if !cur.is_empty() {
            return Err(bad("trailing bytes after payload"));
        }

        let vocabulary = Vocabulary::from_tokens(header.vocabulary.iter().cloned());
        if vocabulary.hash() != header.vocab_hash {
            return Err(bad("vocabulary hash mismatch"));
        }
        let mut model = Model::new(header.model.clone(), 0)?;
        model.feature_scaling = header.feature_scaling;
        let mut offset = 0;
        {
            let slots = model.params.tensors_mut();
            if slots.len() != header.tensors.len() {
                return Err(bad("tensor count does not match the model configuration"));
            }
            for ((name, slot), entry) in slots.into_iter().zip(&header.tensors) {
                if name != entry.name || slot.len() != entry.len {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{}` does not match `{name}`",
                        entry.name
                    )));
                }
                let end = offset + entry.len * 8;
                if end > payload.len() {
                    return Err(bad("payload shorter than the tensor directory"));
                }
                for (v, chunk) in slot.iter_mut().zip(payload[offset..end].chunks_exact(8)) {
                    *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
                }
                offset = end;
            }
        }
        if offset != payload.len() {
            return Err(bad("payload longer than the tensor directory"));
        }
        Ok(Self {
            model,
            train_config: header.train,
            label_map: header.label_map,
            vocabulary,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::TaskMode;

    fn checkpoint() -> Checkpoint {
        let vocabulary = Vocabulary::from_tokens(["a", "b"]);
        let train_config = TrainConfig {
            hidden_dim: 4,
            ffn_dim: 4,
            max_len: 6,
            ..TrainConfig::default()
        };
        let label_map = LabelMap::new(TaskMode::Multiclass, ["x", "y"]).unwrap();
        let model = Model::new(train_config.model_config(vocabulary.len(), 2), 9).unwrap();
        Checkpoint {
            model,
            train_config,
            label_map,
            vocabulary,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = checkpoint();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = checkpoint().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
