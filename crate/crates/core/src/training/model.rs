use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::bce_with_logit;
use super::{Arm, TrainError};
use crate::attention::{
    candidate_softmax, check_attention_inputs, cosine, cross_attention_backward,
    cross_attention_forward, similarity_matrix, softmax_backward, AttentionCache, AttentionForward,
    AttentionParams, AttentionScores, HeadParams, Mechanism, SimilarityKind,
};
use crate::corpus::{ChainSet, Document};
use crate::embeddings::{embed_document, embed_labels, mix64, EmbeddingMatrix, ProviderConfig};
use crate::numeric::Real;
use crate::resolver::{logistic, DecoderParams, PairFeatures, PairScores, PAIR_FEATURES};
use crate::syntax::{extract_features, feature_matrix, Inventories, SyntaxProjection};

/// Current weights-file and parameter layout version.
pub const FORMAT_VERSION: u32 = 1;

/// How a mention's vector is read off the token matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MentionRepr {
    #[default]
    Head,
    SpanMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mechanism: Mechanism,
    pub n_heads: usize,
    /// Per-head width; `None` picks `dim / n_heads` (or `dim` for one head).
    pub d_k: Option<usize>,
    pub mention_repr: MentionRepr,
    pub similarity: SimilarityKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mechanism: Mechanism::Cross,
            n_heads: 4,
            d_k: None,
            mention_repr: MentionRepr::Head,
            similarity: SimilarityKind::ScaledDot,
        }
    }
}

impl ModelConfig {
    pub fn effective_heads(&self) -> usize {
        match self.mechanism {
            Mechanism::MultiHead | Mechanism::Hierarchical => self.n_heads,
            _ => 1,
        }
    }

    pub fn effective_d_k(&self, dim: usize) -> usize {
        self.d_k
            .unwrap_or_else(|| (dim / self.effective_heads().max(1)).max(1))
    }
}

/// Every learnable tensor plus what is needed to rebuild the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub version: u32,
    pub arm: Arm,
    pub dim: usize,
    pub feature_dim: usize,
    pub inventories: Inventories,
    pub syntax: SyntaxProjection,
    pub attention: AttentionParams,
    pub decoder: DecoderParams,
    pub mention_repr: MentionRepr,
    pub similarity: SimilarityKind,
    pub seed: u64,
}

/// A named block of the flattened parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub range: Range<usize>,
    pub cols: usize,
    pub trainable: bool,
    pub decay: bool,
}

impl ModelParams {
    /// Zero syntax projection and decoder; attention drawn from `seed`.
    /// The `semantics` arm always uses fixed vanilla attention.
    pub fn init(
        arm: Arm,
        inventories: Inventories,
        dim: usize,
        cfg: &ModelConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        let feature_dim = inventories.feature_dim();
        let attention = if arm == Arm::Semantics {
            AttentionParams::identity(dim)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            AttentionParams::init(
                cfg.mechanism,
                dim,
                cfg.n_heads,
                cfg.effective_d_k(dim),
                &mut rng,
            )?
        };
        Ok(Self {
            version: FORMAT_VERSION,
            arm,
            dim,
            feature_dim,
            inventories,
            syntax: SyntaxProjection::zeros(feature_dim, dim),
            attention,
            decoder: DecoderParams::default(),
            mention_repr: cfg.mention_repr,
            similarity: cfg.similarity,
            seed,
        })
    }

    pub fn layout(&self) -> Vec<ParamBlock> {
        let (f, d) = (self.feature_dim, self.dim);
        let mut blocks = Vec::new();
        let mut at = 0;
        let mut push = |name: String, len: usize, cols: usize, trainable: bool, decay: bool| {
            blocks.push(ParamBlock {
                name,
                range: at..at + len,
                cols,
                trainable,
                decay,
            });
            at += len;
        };
        let syn = self.arm.trains_syntax();
        push("syntax.weight".into(), f * d, d, syn, true);
        push("syntax.bias".into(), d, d, syn, false);
        if self.attention.is_trainable() {
            let att = self.arm.trains_attention();
            let dk = self.attention.d_k;
            for h in 0..self.attention.n_heads {
                for w in ["w_q", "w_k", "w_v"] {
                    push(format!("attention.head{h}.{w}"), d * dk, dk, att, true);
                }
            }
            push(
                "attention.w_o".into(),
                self.attention.n_heads * dk * d,
                d,
                att,
                true,
            );
        }
        push(
            "decoder.weight".into(),
            PAIR_FEATURES,
            PAIR_FEATURES,
            true,
            true,
        );
        push("decoder.bias".into(), 1, 1, true, false);
        blocks
    }

    pub fn param_count(&self) -> usize {
        self.layout().last().map_or(0, |b| b.range.end)
    }

    pub fn trainable_mask(&self) -> Vec<bool> {
        self.block_mask(|b| b.trainable)
    }

    pub fn decay_mask(&self) -> Vec<bool> {
        self.block_mask(|b| b.trainable && b.decay)
    }

    fn block_mask(&self, f: impl Fn(&ParamBlock) -> bool) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.param_count());
        for b in self.layout() {
            mask.extend(std::iter::repeat_n(f(&b), b.range.len()));
        }
        mask
    }

    /// Human-readable location of flat coordinate `idx`.
    pub fn coordinate_name(&self, idx: usize) -> String {
        for b in self.layout() {
            if b.range.contains(&idx) {
                let off = idx - b.range.start;
                return if b.range.len() == 1 {
                    b.name
                } else if b.cols == b.range.len() {
                    format!("{}[{off}]", b.name)
                } else {
                    format!("{}[{},{}]", b.name, off / b.cols, off % b.cols)
                };
            }
        }
        format!("<out of range {idx}>")
    }

    /// Parameters in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend(self.syntax.weight.iter());
        out.extend(self.syntax.bias.iter());
        if self.attention.is_trainable() {
            for h in &self.attention.heads {
                out.extend(h.w_q.iter());
                out.extend(h.w_k.iter());
                out.extend(h.w_v.iter());
            }
            out.extend(self.attention.w_o.iter());
        }
        out.extend(self.decoder.weight.iter());
        out.push(self.decoder.bias);
        out
    }

    /// Inverse of [`ModelParams::flatten`].
    pub fn set_flat(&mut self, theta: &[f64]) -> Result<(), TrainError> {
        let n = self.param_count();
        if theta.len() != n {
            return Err(TrainError::ShapeMismatch(format!(
                "{} values for {n} parameters",
                theta.len()
            )));
        }
        let mut it = theta.iter().copied();
        let mut fill =
            |a: &mut dyn Iterator<Item = &mut f64>| a.for_each(|v| *v = it.next().unwrap_or(0.0));
        fill(&mut self.syntax.weight.iter_mut());
        fill(&mut self.syntax.bias.iter_mut());
        if self.attention.is_trainable() {
            for h in &mut self.attention.heads {
                fill(&mut h.w_q.iter_mut());
                fill(&mut h.w_k.iter_mut());
                fill(&mut h.w_v.iter_mut());
            }
            fill(&mut self.attention.w_o.iter_mut());
        }
        fill(&mut self.decoder.weight.iter_mut());
        fill(&mut std::iter::once(&mut self.decoder.bias));
        Ok(())
    }
}

/// Fixed per-document inputs: embeddings, tree features, role vectors and
/// the mention-pair structure.
#[derive(Debug, Clone)]
pub struct DocInputs {
    pub doc_id: String,
    pub e: Array2<f64>,
    pub x: Array2<f64>,
    pub r: Array2<f64>,
    pub segments: Vec<Range<usize>>,
    /// Mention ids in document order.
    pub ids: Vec<usize>,
    /// Token weights forming each mention vector.
    pub repr: Vec<Vec<(usize, f64)>>,
    /// `tree[i][j]` for `j < i`; `cosine` left at 0.
    pub tree: Vec<Vec<PairFeatures>>,
    /// `gold[i][j]` for `j < i`.
    pub gold: Option<Vec<Vec<bool>>>,
    pub gold_chains: Option<ChainSet>,
}

impl DocInputs {
    pub fn n_mentions(&self) -> usize {
        self.ids.len()
    }

    pub fn n_pairs(&self) -> usize {
        let m = self.n_mentions();
        m * m.saturating_sub(1) / 2
    }
}

/// Builds [`DocInputs`] from a document and its embedding matrix. Role
/// vectors hash each token's role (its relation when unlabeled) with `role_seed`.
pub fn prepare_document(
    doc: &Document,
    embeddings: &EmbeddingMatrix,
    inventories: &Inventories,
    role_seed: u64,
    mention_repr: MentionRepr,
) -> Result<DocInputs, TrainError> {
    let n = doc.n_tokens();
    if embeddings.rows() != n {
        return Err(TrainError::ShapeMismatch(format!(
            "document {}: {} embedding rows for {n} tokens",
            doc.id,
            embeddings.rows()
        )));
    }
    let dim = embeddings.dim();
    let feats = extract_features(doc, inventories);
    let x = feature_matrix(&feats, inventories);
    let r = embed_labels(doc.tokens().map(|t| t.role_or_deprel()), dim, role_seed);
    let offsets = doc.sentence_offsets();
    let segments = doc
        .sentences
        .iter()
        .zip(&offsets)
        .map(|(s, &o)| o..o + s.len())
        .collect();

    let mentions = doc.mentions_in_order();
    let ids: Vec<usize> = mentions.iter().map(|m| m.id).collect();
    let heads: Vec<usize> = mentions
        .iter()
        .map(|m| offsets[m.sentence_index] + m.head_token)
        .collect();
    let repr = mentions
        .iter()
        .zip(&heads)
        .map(|(m, &h)| match mention_repr {
            MentionRepr::Head => vec![(h, 1.0)],
            MentionRepr::SpanMean => {
                let w = 1.0 / (m.end - m.start + 1) as f64;
                (m.start..=m.end)
                    .map(|t| (offsets[m.sentence_index] + t, w))
                    .collect()
            }
        })
        .collect();
    let tree = (0..mentions.len())
        .map(|i| {
            (0..i)
                .map(|j| {
                    let (a, b) = (&mentions[i], &mentions[j]);
                    let ta = doc.token(a.sentence_index, a.head_token);
                    let tb = doc.token(b.sentence_index, b.head_token);
                    PairFeatures {
                        same_deprel: ta.deprel == tb.deprel,
                        depth_diff: feats[heads[i]].depth.abs_diff(feats[heads[j]].depth),
                        sentence_distance: a.sentence_index - b.sentence_index,
                        mention_distance: i - j,
                        cosine: 0.0,
                    }
                })
                .collect()
        })
        .collect();
    let gold = doc.gold_chains.as_ref().map(|chains| {
        let owner = chains.chain_of();
        (0..ids.len())
            .map(|i| {
                (0..i)
                    .map(|j| {
                        owner
                            .get(&ids[i])
                            .is_some_and(|c| owner.get(&ids[j]) == Some(c))
                    })
                    .collect()
            })
            .collect()
    });
    Ok(DocInputs {
        doc_id: doc.id.clone(),
        e: embeddings.as_array().clone(),
        x,
        r,
        segments,
        ids,
        repr,
        tree,
        gold,
        gold_chains: doc.gold_chains.clone(),
    })
}

/// Embeds and prepares a whole corpus with one provider.
pub fn prepare_corpus(
    docs: &[Document],
    provider: &ProviderConfig,
    inventories: &Inventories,
    mention_repr: MentionRepr,
) -> Result<Vec<DocInputs>, TrainError> {
    docs.iter()
        .map(|doc| {
            let e = embed_document(provider, doc)?;
            prepare_document(doc, &e, inventories, provider.seed, mention_repr)
        })
        .collect()
}

/// Identifies a dropout mask: one per (seed, epoch, batch); rows are
/// numbered across the documents of the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutKey {
    pub rate: f64,
    pub seed: u64,
    pub epoch: u64,
    pub batch: u64,
}

impl DropoutKey {
    fn keep(&self, row: u64, col: u64) -> bool {
        let mut h = mix64(self.seed ^ 0x6472_6f70_6f75_7400);
        for v in [self.epoch, self.batch, row, col] {
            h = mix64(h ^ v);
        }
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        u >= self.rate
    }

    fn mask(&self, row_offset: usize, rows: usize, cols: usize) -> Array2<f64> {
        let scale = 1.0 / (1.0 - self.rate);
        Array2::from_shape_fn((rows, cols), |(r, c)| {
            if self.keep((row_offset + r) as u64, c as u64) {
                scale
            } else {
                0.0
            }
        })
    }
}

struct PairEval<T> {
    i: usize,
    j: usize,
    phi: [T; PAIR_FEATURES],
    logit: T,
}

struct Forward<T> {
    mask: Option<Array2<f64>>,
    /// Enhanced embeddings after dropout.
    h: Array2<T>,
    attention: Option<AttentionForward<T>>,
    c: Array2<T>,
    a: Array2<T>,
    pairs: Vec<PairEval<T>>,
}

fn forward<T: Real>(
    params: &ModelParams,
    inp: &DocInputs,
    mask: Option<Array2<f64>>,
) -> Result<Forward<T>, TrainError> {
    let arm = params.arm;
    let cast = |m: &Array2<f64>| m.mapv(T::from_f64);
    let e = cast(&inp.e);
    let mut h = if arm.trains_syntax() {
        let proj =
            cast(&inp.x).dot(&cast(&params.syntax.weight)) + &params.syntax.bias.mapv(T::from_f64);
        &e + &proj
    } else {
        e.clone()
    };
    if let Some(m) = &mask {
        h *= &cast(m);
    }
    let (z, attention) = if arm.uses_attention() {
        check_attention_inputs(inp.e.view(), inp.e.view(), inp.r.view(), &params.attention)?;
        let r = cast(&inp.r);
        let fwd = cross_attention_forward(
            e.view(),
            h.view(),
            r.view(),
            &params.attention,
            Some(&inp.segments),
        );
        (&h + &fwd.out, Some(fwd))
    } else {
        (h.clone(), None)
    };
    let mut c = Array2::zeros((inp.n_mentions(), params.dim));
    for (mi, ws) in inp.repr.iter().enumerate() {
        for &(t, w) in ws {
            c.row_mut(mi).scaled_add(T::from_f64(w), &z.row(t));
        }
    }
    let a = candidate_softmax(&similarity_matrix(c.view(), params.similarity));
    let w: Vec<T> = params
        .decoder
        .weight
        .iter()
        .map(|&v| T::from_f64(v))
        .collect();
    let b = T::from_f64(params.decoder.bias);
    let mut pairs = Vec::with_capacity(inp.n_pairs());
    for i in 0..inp.n_mentions() {
        for j in 0..i {
            let f = inp.tree[i][j].layout(0.0, 0.0);
            let mut phi = f.map(T::from_f64);
            phi[0] = a[[i, j]];
            phi[1] = a[[j, i]];
            phi[6] = cosine(c.row(i), c.row(j));
            if !arm.tree_pair_features() {
                phi[2] = T::zero();
                phi[3] = T::zero();
            }
            let logit = w
                .iter()
                .zip(&phi)
                .fold(T::zero(), |acc, (&wk, &x)| acc + wk * x)
                + b;
            pairs.push(PairEval { i, j, phi, logit });
        }
    }
    Ok(Forward {
        mask,
        h,
        attention,
        c,
        a,
        pairs,
    })
}

/// `(∂cos/∂u, ∂cos/∂v)`; zero when either vector is zero.
fn cosine_grad(u: ArrayView1<f64>, v: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return (Array1::zeros(u.len()), Array1::zeros(v.len()));
    }
    let cos = u.dot(&v) / (nu * nv);
    let du = &v / (nu * nv) - &u * (cos / (nu * nu));
    let dv = &u / (nu * nv) - &v * (cos / (nv * nv));
    (du, dv)
}

/// Gradient of `scale · Σ loss` for one document, accumulated into `grad`.
/// Returns the document's summed loss.
fn backward_doc(
    params: &ModelParams,
    inp: &DocInputs,
    fwd: Forward<f64>,
    scale: f64,
    grad: &mut FlatGrad,
) -> Result<f64, TrainError> {
    let gold = inp
        .gold
        .as_ref()
        .ok_or_else(|| TrainError::MissingGold(inp.doc_id.clone()))?;
    let m = inp.n_mentions();
    let w = &params.decoder.weight;
    let mut d_a = Array2::zeros((m, m));
    let mut d_c = Array2::<f64>::zeros(fwd.c.raw_dim());
    let mut loss = 0.0;
    for pe in &fwd.pairs {
        let y = gold[pe.i][pe.j];
        loss += bce_with_logit(pe.logit, y);
        let dz = scale * (logistic(pe.logit) - if y { 1.0 } else { 0.0 });
        for (g, x) in grad.decoder_w.iter_mut().zip(&pe.phi) {
            *g += dz * x;
        }
        grad.decoder_b += dz;
        d_a[[pe.i, pe.j]] += dz * w[0];
        d_a[[pe.j, pe.i]] += dz * w[1];
        let dcos = dz * w[6];
        if dcos != 0.0 {
            let (du, dv) = cosine_grad(fwd.c.row(pe.i), fwd.c.row(pe.j));
            d_c.row_mut(pe.i).scaled_add(dcos, &du);
            d_c.row_mut(pe.j).scaled_add(dcos, &dv);
        }
    }
    let d_s = softmax_backward(&fwd.a, &d_a);
    match params.similarity {
        SimilarityKind::ScaledDot => {
            let sym = &d_s + &d_s.t();
            d_c += &(sym.dot(&fwd.c) / (params.dim as f64).sqrt());
        }
        SimilarityKind::Cosine => {
            for i in 0..m {
                for j in 0..m {
                    let g = d_s[[i, j]];
                    if g != 0.0 {
                        let (du, dv) = cosine_grad(fwd.c.row(i), fwd.c.row(j));
                        d_c.row_mut(i).scaled_add(g, &du);
                        d_c.row_mut(j).scaled_add(g, &dv);
                    }
                }
            }
        }
    }

    let arm = params.arm;
    if !arm.trains_syntax() && !arm.trains_attention() {
        return Ok(loss);
    }
    let mut d_z = Array2::<f64>::zeros(inp.e.raw_dim());
    for (mi, ws) in inp.repr.iter().enumerate() {
        for &(t, wt) in ws {
            d_z.row_mut(t).scaled_add(wt, &d_c.row(mi));
        }
    }
    let mut d_h = d_z.clone();
    if let Some(att) = fwd.attention {
        let (_, cache) = AttentionCache::from_forward(
            att,
            &params.attention,
            inp.e.view(),
            fwd.h.view(),
            inp.r.view(),
        );
        let ag = cross_attention_backward(&cache, &params.attention, d_z.view());
        d_h += &ag.d_es;
        if arm.trains_attention() && params.attention.is_trainable() {
            grad.add_attention(&ag.heads, &ag.w_o);
        }
    }
    if arm.trains_syntax() {
        if let Some(mask) = &fwd.mask {
            d_h *= mask;
        }
        grad.syntax_w += &inp.x.t().dot(&d_h);
        grad.syntax_b += &d_h.sum_axis(Axis(0));
    }
    Ok(loss)
}

/// Gradient accumulator shaped like [`ModelParams`].
struct FlatGrad {
    syntax_w: Array2<f64>,
    syntax_b: Array1<f64>,
    heads: Vec<HeadParams>,
    w_o: Array2<f64>,
    decoder_w: Array1<f64>,
    decoder_b: f64,
}

impl FlatGrad {
    fn zeros(p: &ModelParams) -> Self {
        Self {
            syntax_w: Array2::zeros(p.syntax.weight.raw_dim()),
            syntax_b: Array1::zeros(p.syntax.bias.len()),
            heads: p
                .attention
                .heads
                .iter()
                .map(|h| HeadParams {
                    w_q: Array2::zeros(h.w_q.raw_dim()),
                    w_k: Array2::zeros(h.w_k.raw_dim()),
                    w_v: Array2::zeros(h.w_v.raw_dim()),
                })
                .collect(),
            w_o: Array2::zeros(p.attention.w_o.raw_dim()),
            decoder_w: Array1::zeros(PAIR_FEATURES),
            decoder_b: 0.0,
        }
    }

    fn add_attention(&mut self, heads: &[HeadParams], w_o: &Array2<f64>) {
        for (acc, g) in self.heads.iter_mut().zip(heads) {
            acc.w_q += &g.w_q;
            acc.w_k += &g.w_k;
            acc.w_v += &g.w_v;
        }
        self.w_o += w_o;
    }

    fn flatten(&self, p: &ModelParams) -> Vec<f64> {
        let mut out = Vec::with_capacity(p.param_count());
        out.extend(self.syntax_w.iter());
        out.extend(self.syntax_b.iter());
        if p.attention.is_trainable() {
            for h in &self.heads {
                out.extend(h.w_q.iter());
                out.extend(h.w_k.iter());
                out.extend(h.w_v.iter());
            }
            out.extend(self.w_o.iter());
        }
        out.extend(self.decoder_w.iter());
        out.push(self.decoder_b);
        out
    }
}

/// Loss and gradient of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    /// Mean pair loss over every candidate pair in the batch.
    pub loss: f64,
    /// Aligned with [`ModelParams::flatten`]; frozen blocks are zero.
    pub grad: Vec<f64>,
    pub n_pairs: usize,
}

fn dropout_masks(
    params: &ModelParams,
    batch: &[&DocInputs],
    key: Option<DropoutKey>,
) -> Vec<Option<Array2<f64>>> {
    let mut offset = 0;
    batch
        .iter()
        .map(|inp| {
            let rows = inp.e.nrows();
            let m = key
                .filter(|k| k.rate > 0.0)
                .map(|k| k.mask(offset, rows, params.dim));
            offset += rows;
            m
        })
        .collect()
}

/// Pooled pair loss and its analytic gradient. Dropout (when `dropout` is
/// given with a positive rate) masks the enhanced embeddings.
pub fn backward(
    params: &ModelParams,
    batch: &[&DocInputs],
    dropout: Option<DropoutKey>,
) -> Result<BatchGradient, TrainError> {
    let n_pairs: usize = batch.iter().map(|d| d.n_pairs()).sum();
    if n_pairs == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let scale = 1.0 / n_pairs as f64;
    let mut acc = FlatGrad::zeros(params);
    let mut loss = 0.0;
    for (inp, mask) in batch.iter().zip(dropout_masks(params, batch, dropout)) {
        let fwd = forward::<f64>(params, inp, mask)?;
        loss += backward_doc(params, inp, fwd, scale, &mut acc)?;
    }
    let grad = acc.flatten(params);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient { batch: None });
    }
    Ok(BatchGradient {
        loss: loss / n_pairs as f64,
        grad,
        n_pairs,
    })
}

/// Pooled pair loss only.
pub fn batch_loss(
    params: &ModelParams,
    batch: &[&DocInputs],
    dropout: Option<DropoutKey>,
) -> Result<f64, TrainError> {
    batch_loss_in(params, batch, dropout)
}

/// [`batch_loss`] evaluated in scalar type `T`.
pub fn batch_loss_in<T: Real>(
    params: &ModelParams,
    batch: &[&DocInputs],
    dropout: Option<DropoutKey>,
) -> Result<T, TrainError> {
    let n_pairs: usize = batch.iter().map(|d| d.n_pairs()).sum();
    if n_pairs == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let mut loss = T::zero();
    for (inp, mask) in batch.iter().zip(dropout_masks(params, batch, dropout)) {
        let gold = inp
            .gold
            .as_ref()
            .ok_or_else(|| TrainError::MissingGold(inp.doc_id.clone()))?;
        let fwd = forward::<T>(params, inp, mask)?;
        for pe in &fwd.pairs {
            loss += bce_with_logit(pe.logit, gold[pe.i][pe.j]);
        }
    }
    Ok(loss / T::from_f64(n_pairs as f64))
}

/// Inference-time scores: antecedent probabilities and mention attention.
pub fn score_document(
    params: &ModelParams,
    inp: &DocInputs,
) -> Result<(PairScores, AttentionScores), TrainError> {
    let fwd = forward::<f64>(params, inp, None)?;
    let m = inp.n_mentions();
    let mut p: Vec<Vec<f64>> = (0..m).map(Vec::with_capacity).collect();
    for pe in &fwd.pairs {
        p[pe.i].push(logistic(pe.logit));
    }
    Ok((PairScores(p), AttentionScores { n: m, a: fwd.a }))
}
