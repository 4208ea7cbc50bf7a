//! Learning the syntax projection, attention and decoder weights.
//!
//! The objective is binary cross-entropy over every (mention, earlier
//! mention) pair, pooled across the documents of a batch. Gradients are
//! derived by hand in [`model`]; [`grad_check`] compares them to central
//! differences.

mod gradcheck;
mod model;
mod optim;
mod weights;

pub use gradcheck::{
    grad_check, grad_check_fn, grad_check_with, randomize_params, GradCheckReport, MAX_CHECK_PARAMS,
};
pub use model::{
    backward, batch_loss, batch_loss_in, prepare_corpus, prepare_document, score_document,
    BatchGradient, DocInputs, DropoutKey, MentionRepr, ModelConfig, ModelParams, ParamBlock,
    FORMAT_VERSION,
};
pub use optim::{
    adamw_step, adamw_step_masked, clip_gradients, l2_norm, lr_schedule, pair_loss, warmup_steps,
    OptimizerState, P_CLIP,
};
pub use weights::{
    decode_weights, encode_weights, read_weights, write_weights, WeightsError, MAGIC,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::AttentionError;
use crate::corpus::{ChainSet, Document};
use crate::embeddings::{mix64, EmbeddingError, ProviderConfig};
use crate::metrics::{MetricError, Scorer};
use crate::resolver::{resolve_ids, PairScores, ResolutionConfig};
use crate::syntax::{Inventories, SyntaxError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("batch has no mention pairs")]
    EmptyBatch,
    #[error("document {0} has no gold chains")]
    MissingGold(String),
    #[error("non-finite gradient{}", .batch.map(|b| format!(" in batch {b}")).unwrap_or_default())]
    NonFiniteGradient { batch: Option<usize> },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Pipeline variants, each adding one component to the previous.
///
/// * `base`: embeddings straight into the decoder.
/// * `syntax`: plus the learned syntax projection.
/// * `semantics`: plus fixed vanilla cross-attention with role values.
/// * `attention`: the configured attention mechanism, learned.
/// * `full`: plus tree-derived pair features in the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Base,
    Syntax,
    Semantics,
    Attention,
    Full,
}

impl Arm {
    pub const ALL: [Arm; 5] = [
        Arm::Base,
        Arm::Syntax,
        Arm::Semantics,
        Arm::Attention,
        Arm::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Base => "base",
            Arm::Syntax => "syntax",
            Arm::Semantics => "semantics",
            Arm::Attention => "attention",
            Arm::Full => "full",
        }
    }

    /// Row label in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Arm::Base => "base",
            Arm::Syntax => "+syntax",
            Arm::Semantics => "+semantics",
            Arm::Attention => "+attention",
            Arm::Full => "full",
        }
    }

    pub fn trains_syntax(self) -> bool {
        self >= Arm::Syntax
    }

    pub fn uses_attention(self) -> bool {
        self >= Arm::Semantics
    }

    pub fn trains_attention(self) -> bool {
        self >= Arm::Attention
    }

    pub fn tree_pair_features(self) -> bool {
        self == Arm::Full
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.strip_prefix('+').unwrap_or(s);
        Arm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            format!("unknown arm {s:?} (expected base, syntax, semantics, attention or full)")
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub warmup: f64,
    pub clip_norm: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 5,
            lr: 2e-5,
            warmup: 0.1,
            clip_norm: 1.0,
            dropout: 0.1,
            weight_decay: 0.01,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be finite and non-negative", self.lr));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return bad(format!("warmup {} not in [0, 1)", self.warmup));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return bad(format!("clip_norm {} must be positive", self.clip_norm));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay {} must be non-negative",
                self.weight_decay
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub optimizer: OptimizerState,
}

/// Documents scored after every epoch.
#[derive(Debug, Clone, Copy)]
pub struct DevSet<'a> {
    pub inputs: &'a [DocInputs],
    pub resolution: &'a ResolutionConfig,
}

/// Embeds `corpus`, builds inventories from it, and trains one arm.
pub fn train(
    corpus: &[Document],
    provider: &ProviderConfig,
    model: &ModelConfig,
    cfg: &TrainConfig,
    arm: Arm,
) -> Result<Trained, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if let Some(d) = corpus.iter().find(|d| d.gold_chains.is_none()) {
        return Err(TrainError::MissingGold(d.id.clone()));
    }
    let inventories = Inventories::from_corpus(corpus);
    let inputs = prepare_corpus(corpus, provider, &inventories, model.mention_repr)?;
    train_prepared(&inputs, inventories, provider.dim, model, cfg, arm, None)
}

/// Training loop over already-embedded documents.
pub fn train_prepared(
    inputs: &[DocInputs],
    inventories: Inventories,
    dim: usize,
    model: &ModelConfig,
    cfg: &TrainConfig,
    arm: Arm,
    dev: Option<DevSet<'_>>,
) -> Result<Trained, TrainError> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if let Some(d) = inputs.iter().find(|d| d.gold.is_none()) {
        return Err(TrainError::MissingGold(d.doc_id.clone()));
    }
    let mut params = ModelParams::init(arm, inventories, dim, model, cfg.seed)?;
    let mut theta = params.flatten();
    let update = params.trainable_mask();
    let decay = params.decay_mask();
    let mut opt = OptimizerState::new(theta.len());

    let n_batches = inputs.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * n_batches;
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed ^ mix64(epoch as u64 + 1)));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut counted = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let lr = lr_schedule(step, total_steps, cfg);
            step += 1;
            let batch: Vec<&DocInputs> = chunk.iter().map(|&i| &inputs[i]).collect();
            let key = DropoutKey {
                rate: cfg.dropout,
                seed: cfg.seed,
                epoch: epoch as u64,
                batch: b as u64,
            };
            let bg = match backward(&params, &batch, Some(key)) {
                Ok(bg) => bg,
                Err(TrainError::EmptyBatch) => continue,
                Err(TrainError::NonFiniteGradient { .. }) => {
                    return Err(TrainError::NonFiniteGradient {
                        batch: Some(epoch * n_batches + b),
                    })
                }
                Err(e) => return Err(e),
            };
            let g = clip_gradients(&bg.grad, cfg.clip_norm).map_err(|_| {
                TrainError::NonFiniteGradient {
                    batch: Some(epoch * n_batches + b),
                }
            })?;
            adamw_step_masked(
                &mut theta,
                &g,
                &mut opt,
                lr,
                cfg.weight_decay,
                &update,
                &decay,
            )?;
            params.set_flat(&theta)?;
            loss_sum += bg.loss;
            counted += 1;
        }
        let dev_f1 = match dev {
            Some(d) => Some(evaluate_inputs(&params, d.inputs, d.resolution)?.conll_f1),
            None => None,
        };
        let loss = if counted > 0 {
            loss_sum / counted as f64
        } else {
            0.0
        };
        history.push(EpochRecord {
            epoch: epoch + 1,
            loss,
            dev_f1,
        });
    }
    Ok(Trained {
        params,
        history,
        optimizer: opt,
    })
}

/// Predicted chains and pair scores for one document.
pub fn predict_inputs(
    params: &ModelParams,
    inp: &DocInputs,
    resolution: &ResolutionConfig,
) -> Result<(ChainSet, PairScores), TrainError> {
    let (scores, _) = score_document(params, inp)?;
    Ok((resolve_ids(&inp.ids, &scores, resolution), scores))
}

/// Corpus-level scores of `params` against the gold chains of `inputs`.
pub fn evaluate_inputs(
    params: &ModelParams,
    inputs: &[DocInputs],
    resolution: &ResolutionConfig,
) -> Result<crate::metrics::Scores, TrainError> {
    let mut scorer = Scorer::default();
    for inp in inputs {
        let gold = inp
            .gold_chains
            .as_ref()
            .ok_or_else(|| TrainError::MissingGold(inp.doc_id.clone()))?;
        let (pred, scores) = predict_inputs(params, inp, resolution)?;
        scorer.add(gold, &pred)?;
        if let Some(g) = &inp.gold {
            for (i, row) in scores.0.iter().enumerate() {
                scorer.add_pairs(row, &g[i]);
            }
        }
    }
    Ok(scorer.scores())
}
