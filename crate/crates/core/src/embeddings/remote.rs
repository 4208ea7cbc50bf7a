//! Client for an external embedding service.
//!
//! Protocol: `POST <endpoint>/embed` with the canonical document JSON as the
//! body. A 200 response carries `{"dim": d, "rows": n, "data": [...]}` in
//! row-major order; `null` entries stand for values JSON cannot express
//! (NaN, infinities). Any other status is treated as the service being
//! unavailable. One request per document, no retries.

use std::io::ErrorKind;
use std::time::Duration;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingMatrix, ProviderConfig};
use crate::corpus::Document;

/// Wire payload: `rows x dim` values, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub rows: usize,
    pub data: Vec<Option<f64>>,
}

fn embed_url(endpoint: &str) -> String {
    let base = endpoint.trim_end_matches('/');
    if base.ends_with("/embed") {
        base.to_string()
    } else {
        format!("{base}/embed")
    }
}

fn map_transport(err: ureq::Error, timeout_ms: u64) -> EmbeddingError {
    match err {
        ureq::Error::Timeout(_) => EmbeddingError::Timeout(timeout_ms),
        ureq::Error::Io(e) if matches!(e.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) => {
            EmbeddingError::Timeout(timeout_ms)
        }
        ureq::Error::StatusCode(code) => {
            EmbeddingError::RemoteUnavailable(format!("HTTP status {code}"))
        }
        other => EmbeddingError::RemoteUnavailable(other.to_string()),
    }
}

/// Fetches raw (unnormalized) embeddings for `doc` from the configured
/// service and checks their shape and finiteness.
pub fn remote_embed(
    cfg: &ProviderConfig,
    doc: &Document,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    let endpoint = cfg.endpoint.as_deref().ok_or_else(|| {
        EmbeddingError::InvalidConfig("remote provider requires an endpoint".into())
    })?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
        .http_status_as_error(true)
        .build()
        .into();
    let body = doc.to_canonical_json();
    let mut resp = agent
        .post(&embed_url(endpoint))
        .header("Content-Type", "application/json")
        .send(body.as_str())
        .map_err(|e| map_transport(e, cfg.timeout_ms))?;
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| map_transport(e, cfg.timeout_ms))?;
    let parsed: EmbedResponse = serde_json::from_str(&text)
        .map_err(|e| EmbeddingError::RemoteUnavailable(format!("malformed response: {e}")))?;
    decode(parsed, doc.n_tokens(), cfg.dim)
}

/// Checks a payload against the expected shape and builds the matrix.
pub fn decode(
    resp: EmbedResponse,
    n_tokens: usize,
    dim: usize,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    if resp.rows != n_tokens || resp.dim != dim || resp.data.len() != resp.rows * resp.dim {
        return Err(EmbeddingError::DimensionMismatch {
            expected_rows: n_tokens,
            expected_dim: dim,
            rows: resp.rows,
            dim: resp.dim,
            len: resp.data.len(),
        });
    }
    let mut values = Vec::with_capacity(resp.data.len());
    for (k, v) in resp.data.into_iter().enumerate() {
        match v {
            Some(x) if x.is_finite() => values.push(x),
            _ => {
                return Err(EmbeddingError::NonFiniteEmbedding {
                    row: k / dim,
                    col: k % dim,
                })
            }
        }
    }
    let data = Array2::from_shape_vec((n_tokens, dim), values).expect("shape checked above");
    EmbeddingMatrix::new(data)
}
