use ndarray::Array2;

use super::{EmbeddingError, EmbeddingMatrix};
use crate::corpus::Document;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
/// Signed buckets written per feature.
const PROBES: u64 = 3;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the bytes, then mixed with the seed.
pub fn seeded_hash(bytes: &[u8], seed: u64) -> u64 {
    let h = bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    });
    mix64(h ^ mix64(seed.wrapping_add(GOLDEN)))
}

fn accumulate(row: &mut [f64], feature: &str, seed: u64) {
    let h = seeded_hash(feature.as_bytes(), seed);
    let dim = row.len() as u64;
    for k in 0..PROBES {
        let x = mix64(h.wrapping_add(k.wrapping_mul(GOLDEN)));
        let idx = (x % dim) as usize;
        let sign = if x >> 63 == 1 { -1.0 } else { 1.0 };
        row[idx] += sign;
    }
}

fn finish_row(row: &mut [f64], fallback: &str, seed: u64) {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        row.iter_mut().for_each(|v| *v /= norm);
    } else {
        // every probe cancelled; pin a deterministic axis
        let idx = (seeded_hash(fallback.as_bytes(), seed) % row.len() as u64) as usize;
        row[idx] = 1.0;
    }
}

/// Feature-hash embedding of every token.
///
/// Features are the token's surface, UPOS and dependency relation plus the
/// surfaces of same-sentence neighbours at offsets `±1..=±window`, each
/// tagged with its offset. Positions past a sentence edge contribute
/// boundary markers.
pub fn feature_hash_embed(
    doc: &Document,
    dim: usize,
    window: usize,
    seed: u64,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    if dim < 8 {
        return Err(EmbeddingError::InvalidConfig(format!(
            "feature-hash dim must be >= 8, got {dim}"
        )));
    }
    let mut out = Array2::zeros((doc.n_tokens(), dim));
    let mut r = 0;
    for sentence in &doc.sentences {
        let n = sentence.len() as isize;
        for (i, tok) in sentence.iter().enumerate() {
            let mut row = vec![0.0; dim];
            let surface = format!("s={}", tok.surface);
            accumulate(&mut row, &surface, seed);
            accumulate(&mut row, &format!("u={}", tok.upos), seed);
            accumulate(&mut row, &format!("r={}", tok.deprel), seed);
            for off in 1..=window as isize {
                for o in [-off, off] {
                    let j = i as isize + o;
                    let word = if j < 0 {
                        "<s>"
                    } else if j >= n {
                        "</s>"
                    } else {
                        sentence[j as usize].surface.as_str()
                    };
                    accumulate(&mut row, &format!("n{o}={word}"), seed);
                }
            }
            finish_row(&mut row, &surface, seed);
            out.row_mut(r).iter_mut().zip(row).for_each(|(o, v)| *o = v);
            r += 1;
        }
    }
    EmbeddingMatrix::new(out)
}

/// Unit-norm hash embeddings of bare labels (one row per label).
pub fn embed_labels<'a>(
    labels: impl IntoIterator<Item = &'a str>,
    dim: usize,
    seed: u64,
) -> Array2<f64> {
    let labels: Vec<&str> = labels.into_iter().collect();
    let mut out = Array2::zeros((labels.len(), dim));
    for (r, label) in labels.iter().enumerate() {
        let mut row = vec![0.0; dim];
        let f = format!("role={label}");
        accumulate(&mut row, &f, seed);
        finish_row(&mut row, &f, seed);
        out.row_mut(r).iter_mut().zip(row).for_each(|(o, v)| *o = v);
    }
    out
}
