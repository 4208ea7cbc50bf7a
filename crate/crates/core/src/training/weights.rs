//! Binary weights container.
//!
//! Layout: the 8-byte magic, a little-endian `u64` header length, a JSON
//! header, then every parameter as a little-endian `f64` in canonical
//! flattening order.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{MentionRepr, ModelParams, FORMAT_VERSION};
use super::Arm;
use crate::attention::{AttentionParams, HeadParams, Mechanism, SimilarityKind};
use crate::resolver::DecoderParams;
use crate::syntax::{Inventories, SyntaxProjection};

pub const MAGIC: &[u8; 8] = b"CRBWGT01";

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("weights format version {found}, expected {expected}")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("malformed weights file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    arm: Arm,
    dim: usize,
    feature_dim: usize,
    inventories: Inventories,
    mechanism: Mechanism,
    n_heads: usize,
    d_k: usize,
    seed: u64,
    mention_repr: MentionRepr,
    similarity: SimilarityKind,
    param_count: usize,
}

pub fn encode_weights(params: &ModelParams) -> Vec<u8> {
    let header = Header {
        version: params.version,
        arm: params.arm,
        dim: params.dim,
        feature_dim: params.feature_dim,
        inventories: params.inventories.clone(),
        mechanism: params.attention.mechanism,
        n_heads: params.attention.n_heads,
        d_k: params.attention.d_k,
        seed: params.seed,
        mention_repr: params.mention_repr,
        similarity: params.similarity,
        param_count: params.param_count(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let flat = params.flatten();
    let mut out = Vec::with_capacity(16 + json.len() + 8 * flat.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<ModelParams, WeightsError> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if hlen > body.len() {
        return Err(WeightsError::Malformed(format!(
            "header length {hlen} exceeds file"
        )));
    }
    let raw: serde_json::Value = serde_json::from_slice(&body[..hlen])
        .map_err(|e| WeightsError::Malformed(e.to_string()))?;
    let found = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| WeightsError::Malformed("no version".into()))?;
    if found != u64::from(FORMAT_VERSION) {
        return Err(WeightsError::VersionMismatch {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let h: Header =
        serde_json::from_value(raw).map_err(|e| WeightsError::Malformed(e.to_string()))?;
    if h.feature_dim != h.inventories.feature_dim() {
        return Err(WeightsError::Malformed(format!(
            "feature_dim {} disagrees with inventories ({})",
            h.feature_dim,
            h.inventories.feature_dim()
        )));
    }
    let attention = if h.mechanism == Mechanism::Vanilla {
        AttentionParams::identity(h.dim)
    } else {
        let z = || Array2::zeros((h.dim, h.d_k));
        AttentionParams {
            mechanism: h.mechanism,
            n_heads: h.n_heads,
            d_k: h.d_k,
            heads: (0..h.n_heads)
                .map(|_| HeadParams {
                    w_q: z(),
                    w_k: z(),
                    w_v: z(),
                })
                .collect(),
            w_o: Array2::zeros((h.n_heads * h.d_k, h.dim)),
        }
    };
    let mut params = ModelParams {
        version: h.version,
        arm: h.arm,
        dim: h.dim,
        feature_dim: h.feature_dim,
        inventories: h.inventories,
        syntax: SyntaxProjection::zeros(h.feature_dim, h.dim),
        attention,
        decoder: DecoderParams::default(),
        mention_repr: h.mention_repr,
        similarity: h.similarity,
        seed: h.seed,
    };
    let n = params.param_count();
    let payload = &body[hlen..];
    if n != h.param_count || payload.len() != 8 * n {
        return Err(WeightsError::Malformed(format!(
            "payload holds {} bytes, expected {} parameters",
            payload.len(),
            n
        )));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    params
        .set_flat(&flat)
        .map_err(|e| WeightsError::Malformed(e.to_string()))?;
    Ok(params)
}

pub fn write_weights(path: &Path, params: &ModelParams) -> Result<(), WeightsError> {
    std::fs::write(path, encode_weights(params))?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<ModelParams, WeightsError> {
    decode_weights(&std::fs::read(path)?)
}
