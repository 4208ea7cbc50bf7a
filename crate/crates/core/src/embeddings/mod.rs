//! Contextual token embeddings.
//!
//! Two providers sit behind [`embed_document`]: an offline feature-hash
//! embedder and an HTTP client for an external embedding service. Either
//! way the result is an [`EmbeddingMatrix`] with one row per token in
//! document order; nonzero rows are L2-normalized.

mod feature_hash;
#[cfg(any(test, feature = "mock-server"))]
pub mod mock;
mod remote;

pub use feature_hash::{embed_labels, feature_hash_embed, mix64, seeded_hash};
pub use remote::{decode as decode_payload, remote_embed, EmbedResponse};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
    #[error("embedding service unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("embedding service timed out after {0} ms")]
    Timeout(u64),
    #[error("embedding shape mismatch: expected {expected_rows}x{expected_dim}, got {rows}x{dim} with {len} values")]
    DimensionMismatch {
        expected_rows: usize,
        expected_dim: usize,
        rows: usize,
        dim: usize,
        len: usize,
    },
    #[error("non-finite embedding value at row {row}, column {col}")]
    NonFiniteEmbedding { row: usize, col: usize },
}

/// `n_tokens x d` matrix of contextual embeddings, sentence-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(Array2<f64>);

impl EmbeddingMatrix {
    /// Wraps a matrix after checking every entry is finite.
    pub fn new(data: Array2<f64>) -> Result<Self, EmbeddingError> {
        if let Some(((row, col), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(EmbeddingError::NonFiniteEmbedding { row, col });
        }
        Ok(Self(data))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    /// Scales every nonzero row to unit L2 norm.
    pub fn normalized(mut self) -> Self {
        normalize_rows(&mut self.0);
        self
    }
}

pub(crate) fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    FeatureHash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub dim: usize,
    pub window: usize,
    pub seed: u64,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::FeatureHash,
            dim: 64,
            window: 2,
            seed: 0,
            endpoint: None,
            timeout_ms: 5000,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dim == 0 {
            return Err(EmbeddingError::InvalidConfig("dim must be positive".into()));
        }
        if self.timeout_ms == 0 {
            return Err(EmbeddingError::InvalidConfig(
                "timeout_ms must be positive".into(),
            ));
        }
        if self.kind == ProviderKind::Remote && self.endpoint.is_none() {
            return Err(EmbeddingError::InvalidConfig(
                "remote provider requires an endpoint".into(),
            ));
        }
        if self.kind == ProviderKind::FeatureHash && self.dim < 8 {
            return Err(EmbeddingError::InvalidConfig(format!(
                "feature-hash dim must be >= 8, got {}",
                self.dim
            )));
        }
        Ok(())
    }
}

/// Embeds every token of `doc` with the configured provider.
pub fn embed_document(
    cfg: &ProviderConfig,
    doc: &Document,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    cfg.validate()?;
    match cfg.kind {
        ProviderKind::FeatureHash => feature_hash_embed(doc, cfg.dim, cfg.window, cfg.seed),
        ProviderKind::Remote => Ok(remote_embed(cfg, doc)?.normalized()),
    }
}
