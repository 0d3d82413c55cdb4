//! Embedding vectors, the note-id keyed store, pooling, and the three ways of
//! obtaining vectors: a persisted store, the deterministic hash embedder, and
//! a remote sentence-embedding service.

pub mod contract;
mod hash;
mod remote;
mod store_io;
pub mod stub;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use hash::{fnv1a64, hash_embed, hash_token, tokenize, HASH_MODEL_ID};
pub use remote::{fetch_remote, RemoteClient, RemoteEmbeddings, DEFAULT_BATCH, ENDPOINT_ENV};
pub use store_io::{load_store, load_store_csv, save_store, save_store_csv, STORE_MAGIC, STORE_VERSION};

pub const DEFAULT_DIM: usize = 384;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot pool an empty list of vectors")]
    EmptyPool,
    #[error("dimension mismatch at index {index}: expected {expected}, found {found}")]
    DimMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at position {position}")]
    NonFinite { position: usize },
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("note {0} already present in store")]
    DuplicateNote(u64),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported store version {0}")]
    BadVersion(u16),
    #[error("truncated store at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("malformed store: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("embedding service failed after {attempts} attempts: {last}")]
    Remote { attempts: u32, last: String },
    #[error("embedding service changed dimension from {expected} to {found}")]
    RemoteDim { expected: usize, found: usize },
}

/// Fixed-length vector of finite 32-bit values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::ZeroDim);
        }
        if let Some(position) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite { position });
        }
        Ok(EmbeddingVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "zero-dimensional embedding");
        EmbeddingVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = EmbedError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
}

/// Combines several note vectors into one. Mean pooling accumulates in f64.
pub fn pool(vectors: &[&EmbeddingVector], strategy: Pooling) -> Result<EmbeddingVector, EmbedError> {
    let first = vectors.first().ok_or(EmbedError::EmptyPool)?;
    let dim = first.dim();
    let mut acc = vec![0.0f64; dim];
    for (index, v) in vectors.iter().enumerate() {
        if v.dim() != dim {
            return Err(EmbedError::DimMismatch {
                index,
                expected: dim,
                found: v.dim(),
            });
        }
        for (a, &x) in acc.iter_mut().zip(v.as_slice()) {
            *a += f64::from(x);
        }
    }
    match strategy {
        Pooling::Mean => {
            let n = vectors.len() as f64;
            EmbeddingVector::new(acc.into_iter().map(|a| (a / n) as f32).collect())
        }
    }
}

/// Note-id keyed embeddings of one fixed dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    model_id: String,
    entries: BTreeMap<u64, EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, model_id: impl Into<String>) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::ZeroDim);
        }
        Ok(EmbeddingStore {
            dim,
            model_id: model_id.into(),
            entries: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, note_id: u64, vector: EmbeddingVector) -> Result<(), EmbedError> {
        if vector.dim() != self.dim {
            return Err(EmbedError::DimMismatch {
                index: self.entries.len(),
                expected: self.dim,
                found: vector.dim(),
            });
        }
        if self.entries.contains_key(&note_id) {
            return Err(EmbedError::DuplicateNote(note_id));
        }
        self.entries.insert(note_id, vector);
        Ok(())
    }

    pub fn get(&self, note_id: u64) -> Option<&EmbeddingVector> {
        self.entries.get(&note_id)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending note_id order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, &EmbeddingVector)> {
        self.entries.iter().map(|(id, v)| (*id, v))
    }
}
