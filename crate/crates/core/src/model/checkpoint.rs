//! JSON checkpoint format:
//! `{"version": 1, "d": int, "vocab_sizes": {...}, "matrices": {name: {"shape": [r, c], "data": [...]}}}`.
//!
//! An optional `token_vocab` array records the output vocabulary so decoded
//! token ids can be rendered without the training corpus.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Matrix, ModelParams, MATRIX_NAMES};
use crate::corpus::{write_atomic, Vocab};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixDoc {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabSizes {
    source: usize,
    target: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    version: u32,
    d: usize,
    vocab_sizes: VocabSizes,
    matrices: BTreeMap<String, MatrixDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token_vocab: Option<Vec<String>>,
}

/// Parameters plus the vocabulary needed to render outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub token_vocab: Option<Vocab>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let p = &self.params;
        let matrices = p
            .matrices()
            .iter()
            .map(|(name, m)| {
                (
                    name.to_string(),
                    MatrixDoc {
                        shape: [m.rows(), m.cols()],
                        data: m.as_slice().to_vec(),
                    },
                )
            })
            .collect();
        let doc = CheckpointDoc {
            version: CHECKPOINT_VERSION,
            d: p.d,
            vocab_sizes: VocabSizes {
                source: p.source_vocab_size(),
                target: p.target_vocab_size(),
            },
            matrices,
            token_vocab: self.token_vocab.as_ref().map(|v| v.tokens().to_vec()),
        };
        serde_json::to_string(&doc).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let mut doc: CheckpointDoc = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if doc.version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {}", doc.version));
        }
        let (d, src, tgt) = (doc.d, doc.vocab_sizes.source, doc.vocab_sizes.target);
        let mut params = ModelParams::zeros(d, src, tgt);
        for (name, slot) in params.matrices_mut() {
            let m = doc
                .matrices
                .remove(name)
                .ok_or_else(|| format!("missing matrix `{name}`"))?;
            if (m.shape[0], m.shape[1]) != slot.shape() {
                return Err(format!(
                    "matrix `{name}` has shape {:?}, expected {:?}",
                    m.shape,
                    slot.shape()
                ));
            }
            *slot = Matrix::from_vec(m.shape[0], m.shape[1], m.data)
                .ok_or_else(|| format!("matrix `{name}` data length does not match its shape"))?;
        }
        if let Some(extra) = doc.matrices.keys().next() {
            return Err(format!(
                "unknown matrix `{extra}` (expected {})",
                MATRIX_NAMES.join(", ")
            ));
        }
        params.check_finite().map_err(|e| e.to_string())?;
        let token_vocab = doc
            .token_vocab
            .map(Vocab::from_list)
            .transpose()?;
        if let Some(v) = &token_vocab {
            if v.len() != tgt {
                return Err(format!(
                    "token_vocab has {} entries but target vocabulary size is {tgt}",
                    v.len()
                ));
            }
        }
        Ok(Self {
            params,
            token_vocab,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> std::io::Result<()> {
    write_atomic(path.as_ref(), checkpoint.to_json().as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, String> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Checkpoint::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
}
