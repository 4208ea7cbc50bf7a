//! Attention over mentions and tokens.
//!
//! * [`pairwise_scores`]: candidate-normalized mention attention,
//!   `A_ij = exp(sim(c_i, c_j)) / sum_{k != i} exp(sim(c_i, c_k))`.
//! * [`scaled_dot_attention`]: `softmax(Q K^T / sqrt(d_k)) V`.
//! * [`cross_attention`]: queries from token embeddings, keys from the
//!   syntax-enhanced embeddings, values from semantic-role embeddings, in
//!   one of five [`Mechanism`] variants.
//!
//! The cached forward/backward pair used by training lives here too so the
//! gradient code sits next to the formulas it differentiates.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttentionError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input")]
    NonFiniteInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    #[default]
    ScaledDot,
    Cosine,
}

/// `scaled_dot`: `u·v / sqrt(d)`; `cosine`: `u·v / (|u||v|)`, 0 if either is zero.
pub fn similarity(
    u: ArrayView1<f64>,
    v: ArrayView1<f64>,
    kind: SimilarityKind,
) -> Result<f64, AttentionError> {
    if u.len() != v.len() {
        return Err(AttentionError::ShapeMismatch(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(match kind {
        SimilarityKind::ScaledDot => u.dot(&v) / (u.len() as f64).sqrt(),
        SimilarityKind::Cosine => cosine(u, v),
    })
}

pub(crate) fn cosine<T: Real>(u: ArrayView1<T>, v: ArrayView1<T>) -> T {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu.is_zero() || nv.is_zero() {
        T::zero()
    } else {
        u.dot(&v) / (nu * nv)
    }
}

/// Row-stochastic mention attention with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScores {
    pub n: usize,
    pub a: Array2<f64>,
}

/// Softmax of `row` over entries where `keep` holds; others get 0. The
/// normalizer sums the exponentials in ascending order so the result does
/// not depend on entry order.
fn softmax_into<T: Real>(row: ArrayView1<T>, keep: impl Fn(usize) -> bool, out: &mut [T]) {
    let Some(max) = row
        .iter()
        .enumerate()
        .filter(|(j, _)| keep(*j))
        .map(|(_, &v)| v)
        .reduce(Real::max)
    else {
        out.iter_mut().for_each(|o| *o = T::zero());
        return;
    };
    let mut exps: Vec<T> = Vec::with_capacity(row.len());
    for (j, &v) in row.iter().enumerate() {
        let e = if keep(j) { (v - max).exp() } else { T::zero() };
        out[j] = e;
        exps.push(e);
    }
    exps.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let z = exps.into_iter().fold(T::zero(), |acc, e| acc + e);
    out.iter_mut().for_each(|o| *o /= z);
}

/// Backward through a row softmax: `dT = P ⊙ (dP - rowsum(dP ⊙ P))`.
pub(crate) fn softmax_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let mut dt = Array2::zeros(p.raw_dim());
    for ((pr, dpr), mut dtr) in p.rows().into_iter().zip(dp.rows()).zip(dt.rows_mut()) {
        let inner = pr.dot(&dpr);
        for ((d, &pv), &dv) in dtr.iter_mut().zip(pr).zip(dpr) {
            *d = pv * (dv - inner);
        }
    }
    dt
}

/// Similarity matrix between rows of `reprs`.
pub fn similarity_matrix<T: Real>(reprs: ArrayView2<T>, kind: SimilarityKind) -> Array2<T> {
    let n = reprs.nrows();
    let scale = T::from_f64(reprs.ncols() as f64).sqrt();
    let mut s = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            s[[i, j]] = match kind {
                SimilarityKind::ScaledDot => reprs.row(i).dot(&reprs.row(j)) / scale,
                SimilarityKind::Cosine => cosine(reprs.row(i), reprs.row(j)),
            };
        }
    }
    s
}

/// Row softmax over off-diagonal entries.
pub(crate) fn candidate_softmax<T: Real>(sim: &Array2<T>) -> Array2<T> {
    let n = sim.nrows();
    let mut a = Array2::zeros((n, n));
    if n >= 2 {
        let mut buf = vec![T::zero(); n];
        for i in 0..n {
            softmax_into(sim.row(i), |j| j != i, &mut buf);
            a.row_mut(i).iter_mut().zip(&buf).for_each(|(o, &v)| *o = v);
        }
    }
    a
}

/// Candidate-normalized softmax of a similarity matrix, diagonal masked.
pub fn scores_from_similarities(sim: &Array2<f64>) -> AttentionScores {
    AttentionScores {
        n: sim.nrows(),
        a: candidate_softmax(sim),
    }
}

/// Mention attention from one representation row per mention. A single
/// mention gets an all-zero row.
pub fn pairwise_scores(
    reprs: ArrayView2<f64>,
    kind: SimilarityKind,
) -> Result<AttentionScores, AttentionError> {
    if reprs.iter().any(|v| !v.is_finite()) {
        return Err(AttentionError::NonFiniteInput);
    }
    Ok(scores_from_similarities(&similarity_matrix(reprs, kind)))
}

fn check_finite(m: ArrayView2<f64>) -> Result<(), AttentionError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AttentionError::NonFiniteInput)
    }
}

/// Row softmax of `Q K^T / sqrt(d_k)` restricted by `mask(query, key)`.
fn attention_weights<T: Real>(
    q: ArrayView2<T>,
    k: ArrayView2<T>,
    mask: &dyn Fn(usize, usize) -> bool,
) -> Array2<T> {
    let scale = T::from_f64(q.ncols() as f64).sqrt();
    let t = q.dot(&k.t()) / scale;
    let mut p = Array2::zeros(t.raw_dim());
    let mut buf = vec![T::zero(); t.ncols()];
    for i in 0..t.nrows() {
        softmax_into(t.row(i), |j| mask(i, j), &mut buf);
        p.row_mut(i).iter_mut().zip(&buf).for_each(|(o, &v)| *o = v);
    }
    p
}

/// `softmax(Q K^T / sqrt(d_k)) V`.
pub fn scaled_dot_attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
) -> Result<Array2<f64>, AttentionError> {
    if q.ncols() != k.ncols() {
        return Err(AttentionError::ShapeMismatch(format!(
            "query dim {} vs key dim {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() {
        return Err(AttentionError::ShapeMismatch(format!(
            "{} keys vs {} values",
            k.nrows(),
            v.nrows()
        )));
    }
    check_finite(q)?;
    check_finite(k)?;
    check_finite(v)?;
    Ok(attention_weights(q, k, &|_, _| true).dot(&v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// One head with identity projections; nothing to learn.
    Vanilla,
    /// Queries, keys and values all from the token embeddings.
    SelfAttn,
    /// Several cross-attention heads, concatenated.
    MultiHead,
    /// One learned cross-attention head.
    #[default]
    Cross,
    /// Within-sentence token attention followed by attention over sentence
    /// summaries (mean key, mean stage-one output); the two are summed.
    Hierarchical,
}

impl Mechanism {
    pub const ALL: [Mechanism; 5] = [
        Mechanism::Vanilla,
        Mechanism::SelfAttn,
        Mechanism::MultiHead,
        Mechanism::Cross,
        Mechanism::Hierarchical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Vanilla => "vanilla",
            Mechanism::SelfAttn => "self_attn",
            Mechanism::MultiHead => "multi_head",
            Mechanism::Cross => "cross",
            Mechanism::Hierarchical => "hierarchical",
        }
    }
}

impl std::str::FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown attention mechanism {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `d x d_k` each.
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub mechanism: Mechanism,
    pub n_heads: usize,
    pub d_k: usize,
    pub heads: Vec<HeadParams>,
    /// `(n_heads · d_k) x d`
    pub w_o: Array2<f64>,
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

impl AttentionParams {
    /// Fixed identity projections for the vanilla mechanism.
    pub fn identity(dim: usize) -> Self {
        let eye = Array2::eye(dim);
        Self {
            mechanism: Mechanism::Vanilla,
            n_heads: 1,
            d_k: dim,
            heads: vec![HeadParams {
                w_q: eye.clone(),
                w_k: eye.clone(),
                w_v: eye.clone(),
            }],
            w_o: eye,
        }
    }

    /// Randomly initialized parameters. `n_heads` only applies to
    /// `multi_head` (and `hierarchical`); other learned mechanisms use one head.
    pub fn init<R: Rng>(
        mechanism: Mechanism,
        dim: usize,
        n_heads: usize,
        d_k: usize,
        rng: &mut R,
    ) -> Result<Self, AttentionError> {
        if mechanism == Mechanism::Vanilla {
            return Ok(Self::identity(dim));
        }
        let n_heads = match mechanism {
            Mechanism::MultiHead | Mechanism::Hierarchical => n_heads,
            _ => 1,
        };
        if n_heads == 0 || d_k == 0 || n_heads * d_k > 4 * dim {
            return Err(AttentionError::ShapeMismatch(format!(
                "{n_heads} heads of d_k {d_k} for dim {dim} (need 1 <= heads·d_k <= 4·dim)"
            )));
        }
        let heads = (0..n_heads)
            .map(|_| HeadParams {
                w_q: glorot(rng, dim, d_k),
                w_k: glorot(rng, dim, d_k),
                w_v: glorot(rng, dim, d_k),
            })
            .collect();
        let w_o = glorot(rng, n_heads * d_k, dim);
        Ok(Self {
            mechanism,
            n_heads,
            d_k,
            heads,
            w_o,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_o.ncols()
    }

    /// Whether the parameters are learned (everything but vanilla).
    pub fn is_trainable(&self) -> bool {
        self.mechanism != Mechanism::Vanilla
    }

    /// Number of scalars in the canonical flattening (zero for vanilla).
    pub fn param_count(&self) -> usize {
        if !self.is_trainable() {
            return 0;
        }
        let d = self.dim();
        self.n_heads * 3 * d * self.d_k + self.n_heads * self.d_k * d
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        let d = self.dim();
        let ok = self.heads.len() == self.n_heads
            && self.n_heads * self.d_k <= 4 * d
            && self.w_o.nrows() == self.n_heads * self.d_k
            && self.heads.iter().all(|h| {
                [&h.w_q, &h.w_k, &h.w_v]
                    .iter()
                    .all(|w| w.dim() == (d, self.d_k))
            });
        if ok {
            Ok(())
        } else {
            Err(AttentionError::ShapeMismatch(
                "inconsistent attention parameter shapes".into(),
            ))
        }
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    mechanism: Mechanism,
    ex: Array2<f64>,
    es: Array2<f64>,
    er: Array2<f64>,
    segments: Vec<Range<usize>>,
    heads: Vec<HeadCache<f64>>,
    concat: Array2<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadCache<T> {
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    p1: Array2<T>,
    /// Hierarchical stage two: summary keys, summary values, weights.
    stage2: Option<(Array2<T>, Array2<T>, Array2<T>)>,
}

/// Gradients of a scalar loss w.r.t. the attention inputs and parameters.
#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub heads: Vec<HeadParams>,
    pub w_o: Array2<f64>,
    pub d_ex: Array2<f64>,
    pub d_es: Array2<f64>,
    pub d_er: Array2<f64>,
}

fn segment_of(segments: &[Range<usize>], n: usize) -> Vec<usize> {
    let mut seg = vec![0; n];
    for (s, r) in segments.iter().enumerate() {
        for t in r.clone() {
            seg[t] = s;
        }
    }
    seg
}

/// Averaging matrix `m x n` mapping token rows to segment means.
fn segment_means<T: Real>(segments: &[Range<usize>], rows: ArrayView2<T>) -> Array2<T> {
    let mut out = Array2::zeros((segments.len(), rows.ncols()));
    for (s, r) in segments.iter().enumerate() {
        if r.is_empty() {
            continue;
        }
        let mean = rows.slice(s![r.clone(), ..]).sum_axis(Axis(0)) / T::from_f64(r.len() as f64);
        out.row_mut(s).assign(&mean);
    }
    out
}

/// Forward intermediates of one cross-attention evaluation.
pub(crate) struct AttentionForward<T> {
    pub out: Array2<T>,
    segments: Vec<Range<usize>>,
    heads: Vec<HeadCache<T>>,
    concat: Array2<T>,
}

/// Cross-attention forward in any scalar type. `segments` partition the
/// rows into sentences (used by the hierarchical variant; `None` = one
/// segment). Inputs must already be shape-checked.
pub(crate) fn cross_attention_forward<T: Real>(
    ex: ArrayView2<T>,
    es: ArrayView2<T>,
    er: ArrayView2<T>,
    params: &AttentionParams,
    segments: Option<&[Range<usize>]>,
) -> AttentionForward<T> {
    let n = ex.nrows();
    let (es, er) = if params.mechanism == Mechanism::SelfAttn {
        (ex, ex)
    } else {
        (es, er)
    };
    let segments: Vec<Range<usize>> = match segments {
        Some(s) => s.to_vec(),
        None => std::iter::once(0..n).collect(),
    };
    let hierarchical = params.mechanism == Mechanism::Hierarchical;
    let seg = segment_of(&segments, n);
    let dk = params.d_k;
    let scale = T::from_f64(dk as f64).sqrt();
    let cast = |m: &Array2<f64>| m.mapv(T::from_f64);

    let mut concat = Array2::zeros((n, params.n_heads * dk));
    let mut heads = Vec::with_capacity(params.n_heads);
    for (h, hp) in params.heads.iter().enumerate() {
        let q = ex.dot(&cast(&hp.w_q));
        let k = es.dot(&cast(&hp.w_k));
        let v = er.dot(&cast(&hp.w_v));
        let p1 = if hierarchical {
            attention_weights(q.view(), k.view(), &|i, j| seg[i] == seg[j])
        } else {
            attention_weights(q.view(), k.view(), &|_, _| true)
        };
        let mut u = p1.dot(&v);
        let stage2 = if hierarchical {
            let kbar = segment_means(&segments, k.view());
            let vbar = segment_means(&segments, u.view());
            let t2 = q.dot(&kbar.t()) / scale;
            let mut p2 = Array2::zeros(t2.raw_dim());
            let mut buf = vec![T::zero(); t2.ncols()];
            for i in 0..n {
                softmax_into(t2.row(i), |s| !segments[s].is_empty(), &mut buf);
                p2.row_mut(i)
                    .iter_mut()
                    .zip(&buf)
                    .for_each(|(o, &x)| *o = x);
            }
            u = u + p2.dot(&vbar);
            Some((kbar, vbar, p2))
        } else {
            None
        };
        concat.slice_mut(s![.., h * dk..(h + 1) * dk]).assign(&u);
        heads.push(HeadCache {
            q,
            k,
            v,
            p1,
            stage2,
        });
    }
    let out = concat.dot(&cast(&params.w_o));
    AttentionForward {
        out,
        segments,
        heads,
        concat,
    }
}

pub(crate) fn check_attention_inputs(
    ex: ArrayView2<f64>,
    es: ArrayView2<f64>,
    er: ArrayView2<f64>,
    params: &AttentionParams,
) -> Result<(), AttentionError> {
    params.validate()?;
    let n = ex.nrows();
    let d = params.dim();
    for (name, m) in [("E_x", ex), ("E_S", es), ("E_R", er)] {
        if m.dim() != (n, d) {
            return Err(AttentionError::ShapeMismatch(format!(
                "{name} is {:?}, expected ({n}, {d})",
                m.dim()
            )));
        }
    }
    Ok(())
}

impl AttentionCache {
    pub(crate) fn from_forward(
        fwd: AttentionForward<f64>,
        params: &AttentionParams,
        ex: ArrayView2<f64>,
        es: ArrayView2<f64>,
        er: ArrayView2<f64>,
    ) -> (Array2<f64>, Self) {
        let (es, er) = if params.mechanism == Mechanism::SelfAttn {
            (ex, ex)
        } else {
            (es, er)
        };
        let cache = AttentionCache {
            mechanism: params.mechanism,
            ex: ex.to_owned(),
            es: es.to_owned(),
            er: er.to_owned(),
            segments: fwd.segments,
            heads: fwd.heads,
            concat: fwd.concat,
        };
        (fwd.out, cache)
    }
}

/// Cross-attention output `O` with its cache.
pub fn cross_attention_cached(
    ex: ArrayView2<f64>,
    es: ArrayView2<f64>,
    er: ArrayView2<f64>,
    params: &AttentionParams,
    segments: Option<&[Range<usize>]>,
) -> Result<(Array2<f64>, AttentionCache), AttentionError> {
    check_attention_inputs(ex, es, er, params)?;
    let fwd = cross_attention_forward(ex, es, er, params, segments);
    Ok(AttentionCache::from_forward(fwd, params, ex, es, er))
}

/// Cross-attention output (see [`Mechanism`] for the variants).
pub fn cross_attention(
    ex: ArrayView2<f64>,
    es: ArrayView2<f64>,
    er: ArrayView2<f64>,
    params: &AttentionParams,
    segments: Option<&[Range<usize>]>,
) -> Result<Array2<f64>, AttentionError> {
    cross_attention_cached(ex, es, er, params, segments).map(|(o, _)| o)
}

/// Backpropagates `d_out = dL/dO` through [`cross_attention_cached`].
///
/// For `self_attn` the key/value gradients are folded into `d_ex` and
/// `d_es`/`d_er` are zero.
pub fn cross_attention_backward(
    cache: &AttentionCache,
    params: &AttentionParams,
    d_out: ArrayView2<f64>,
) -> AttentionGrads {
    let dk = params.d_k;
    let scale = (dk as f64).sqrt();
    let n = cache.ex.nrows();
    let d_w_o = cache.concat.t().dot(&d_out);
    let d_concat = d_out.dot(&params.w_o.t());

    let mut d_ex = Array2::zeros(cache.ex.raw_dim());
    let mut d_es = Array2::zeros(cache.es.raw_dim());
    let mut d_er = Array2::zeros(cache.er.raw_dim());
    let mut head_grads = Vec::with_capacity(params.n_heads);
    for (h, (hp, hc)) in params.heads.iter().zip(&cache.heads).enumerate() {
        let du: Array2<f64> = d_concat.slice(s![.., h * dk..(h + 1) * dk]).to_owned();
        let mut dq = Array2::<f64>::zeros(hc.q.raw_dim());
        let mut dk_ = Array2::<f64>::zeros(hc.k.raw_dim());
        let mut du1 = du.clone();
        if let Some((kbar, vbar, p2)) = &hc.stage2 {
            let dp2 = du.dot(&vbar.t());
            let dvbar = p2.t().dot(&du);
            let dt2 = softmax_backward(p2, &dp2);
            dq = dq + dt2.dot(kbar) / scale;
            let dkbar = dt2.t().dot(&hc.q) / scale;
            for (s, r) in cache.segments.iter().enumerate() {
                if r.is_empty() {
                    continue;
                }
                let inv = 1.0 / r.len() as f64;
                for t in r.clone() {
                    dk_.row_mut(t).scaled_add(inv, &dkbar.row(s));
                    du1.row_mut(t).scaled_add(inv, &dvbar.row(s));
                }
            }
        }
        let dp1 = du1.dot(&hc.v.t());
        let dv = hc.p1.t().dot(&du1);
        let dt1 = softmax_backward(&hc.p1, &dp1);
        dq = dq + dt1.dot(&hc.k) / scale;
        dk_ = dk_ + dt1.t().dot(&hc.q) / scale;

        head_grads.push(HeadParams {
            w_q: cache.ex.t().dot(&dq),
            w_k: cache.es.t().dot(&dk_),
            w_v: cache.er.t().dot(&dv),
        });
        d_ex = d_ex + dq.dot(&hp.w_q.t());
        d_es = d_es + dk_.dot(&hp.w_k.t());
        d_er = d_er + dv.dot(&hp.w_v.t());
    }
    if cache.mechanism == Mechanism::SelfAttn {
        d_ex = d_ex + &d_es + &d_er;
        d_es = Array2::zeros((n, d_es.ncols()));
        d_er = Array2::zeros((n, d_er.ncols()));
    }
    AttentionGrads {
        heads: head_grads,
        w_o: d_w_o,
        d_ex,
        d_es,
        d_er,
    }
}

/// Per-row sums of an attention matrix.
pub fn row_sums(a: &Array2<f64>) -> Array1<f64> {
    a.sum_axis(Axis(1))
}
