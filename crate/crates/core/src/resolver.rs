//! Antecedent decisions and chain assembly.
//!
//! Each ordered pair (mention `i`, earlier mention `j`) gets a probability
//! from a logistic decoder over a fixed pair-feature layout. Chains are then
//! built by linking every mention to at most one antecedent, either greedily
//! or with a beam over the per-mention decisions.

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::AttentionScores;
use crate::corpus::{ChainSet, Document};

/// Length of the pair-feature vector.
pub const PAIR_FEATURES: usize = 7;

/// Names of the pair features, in layout order.
pub const PAIR_FEATURE_NAMES: [&str; PAIR_FEATURES] = [
    "a_ij",
    "a_ji",
    "same_deprel",
    "depth_diff",
    "sentence_distance",
    "mention_distance",
    "cosine",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResolverError {
    #[error("mention {0} cannot be its own antecedent")]
    SameMention(usize),
    #[error("antecedent {antecedent} does not precede mention {mention}")]
    OrderViolation { mention: usize, antecedent: usize },
    #[error("invalid resolution config: {0}")]
    InvalidConfig(String),
}

/// Tree- and position-derived pair features (everything except attention).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairFeatures {
    pub same_deprel: bool,
    pub depth_diff: usize,
    pub sentence_distance: usize,
    pub mention_distance: usize,
    pub cosine: f64,
}

impl PairFeatures {
    /// `[A_ij, A_ji, same_deprel, depth_diff/8, sentence_distance/16,
    /// mention_distance/32, cosine]`
    pub fn layout(&self, a_ij: f64, a_ji: f64) -> [f64; PAIR_FEATURES] {
        [
            a_ij,
            a_ji,
            if self.same_deprel { 1.0 } else { 0.0 },
            self.depth_diff as f64 / 8.0,
            self.sentence_distance as f64 / 16.0,
            self.mention_distance as f64 / 32.0,
            self.cosine,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub weight: Array1<f64>,
    pub bias: f64,
}

impl Default for DecoderParams {
    fn default() -> Self {
        Self {
            weight: Array1::zeros(PAIR_FEATURES),
            bias: 0.0,
        }
    }
}

impl DecoderParams {
    pub fn logit(&self, x: &[f64; PAIR_FEATURES]) -> f64 {
        self.weight.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Coreference probability of mention `i` with antecedent `j`, both given
/// as positions in document order.
pub fn pair_score(
    i: usize,
    j: usize,
    scores: &AttentionScores,
    feats: &PairFeatures,
    params: &DecoderParams,
) -> Result<f64, ResolverError> {
    if i == j {
        return Err(ResolverError::SameMention(i));
    }
    if j > i {
        return Err(ResolverError::OrderViolation {
            mention: i,
            antecedent: j,
        });
    }
    let x = feats.layout(scores.a[[i, j]], scores.a[[j, i]]);
    Ok(logistic(params.logit(&x)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    #[default]
    Beam,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "beam" => Ok(Strategy::Beam),
            _ => Err(format!("unknown strategy {s:?} (expected greedy or beam)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolutionConfig {
    pub threshold: f64,
    pub strategy: Strategy,
    pub beam_width: usize,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            strategy: Strategy::Beam,
            beam_width: 5,
        }
    }
}

impl ResolutionConfig {
    pub fn validate(&self) -> Result<(), ResolverError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ResolverError::InvalidConfig(format!(
                "threshold {} not in (0, 1)",
                self.threshold
            )));
        }
        if self.beam_width == 0 {
            return Err(ResolverError::InvalidConfig(
                "beam_width must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Antecedent probabilities by document-order position: `p[i][j]` for `j < i`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairScores(pub Vec<Vec<f64>>);

impl PairScores {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    /// Best antecedent of `i`, ties going to the nearest.
    fn best(&self, i: usize) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..i).rev() {
            let p = self.0[i][j];
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((j, p));
            }
        }
        best
    }
}

/// Builds the partition implied by antecedent links (`links[i] = Some(j)`
/// with `j < i`), mapping positions to mention ids.
pub fn links_to_chains(links: &[Option<usize>], ids: &[usize]) -> ChainSet {
    let mut chain_of = vec![0usize; links.len()];
    let mut chains: Vec<Vec<usize>> = Vec::new();
    for (i, link) in links.iter().enumerate() {
        match link {
            Some(j) => {
                chain_of[i] = chain_of[*j];
                chains[chain_of[i]].push(ids[i]);
            }
            None => {
                chain_of[i] = chains.len();
                chains.push(vec![ids[i]]);
            }
        }
    }
    ChainSet::new(chains)
}

fn ordered_ids(doc: &Document) -> Vec<usize> {
    doc.mentions_in_order().iter().map(|m| m.id).collect()
}

/// Links each mention to its best antecedent when that probability reaches
/// the threshold.
pub fn greedy_links(scores: &PairScores, threshold: f64) -> Vec<Option<usize>> {
    (0..scores.len())
        .map(|i| match scores.best(i) {
            Some((j, p)) if p >= threshold => Some(j),
            _ => None,
        })
        .collect()
}

pub fn resolve_greedy(doc: &Document, scores: &PairScores, cfg: &ResolutionConfig) -> ChainSet {
    links_to_chains(&greedy_links(scores, cfg.threshold), &ordered_ids(doc))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Action {
    Link(usize),
    New,
}

/// Scored decisions available to mention `i`, in tie-break order: links
/// nearest-first, then "new chain".
fn actions(scores: &PairScores, i: usize, threshold: f64) -> Vec<(f64, Action)> {
    let Some((_, best)) = scores.best(i) else {
        return vec![(0.0, Action::New)];
    };
    let mut out: Vec<(f64, Action)> = (0..i)
        .rev()
        .map(|j| (scores.0[i][j].ln(), Action::Link(j)))
        .collect();
    // log-odds of the threshold shifts "new" so that it loses exactly when
    // the best link clears the threshold; zero at threshold 0.5
    let shift = threshold.ln() - (1.0 - threshold).ln();
    out.push(((1.0 - best).ln() + shift, Action::New));
    out
}

/// Sum of decision scores along a link sequence.
pub fn hypothesis_score(scores: &PairScores, links: &[Option<usize>], threshold: f64) -> f64 {
    links
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let acts = actions(scores, i, threshold);
            let want = match l {
                Some(j) => Action::Link(*j),
                None => Action::New,
            };
            acts.iter()
                .find(|(_, a)| *a == want)
                .map_or(f64::NEG_INFINITY, |(s, _)| *s)
        })
        .fold(0.0, |acc, s| acc + s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamResult {
    pub links: Vec<Option<usize>>,
    pub score: f64,
}

/// Beam search over per-mention antecedent decisions in document order.
pub fn beam_search(scores: &PairScores, width: usize, threshold: f64) -> BeamResult {
    let width = width.max(1);
    let mut beam = vec![BeamResult {
        links: Vec::new(),
        score: 0.0,
    }];
    for i in 0..scores.len() {
        let acts = actions(scores, i, threshold);
        let mut cand: Vec<(f64, usize, Action)> = Vec::with_capacity(beam.len() * acts.len());
        for (bi, h) in beam.iter().enumerate() {
            for &(s, a) in &acts {
                cand.push((h.score + s, bi, a));
            }
        }
        // stable: ties keep parent order, then action order
        cand.sort_by(|x, y| y.0.total_cmp(&x.0));
        cand.truncate(width);
        beam = cand
            .into_iter()
            .map(|(score, bi, a)| {
                let mut links = beam[bi].links.clone();
                links.push(match a {
                    Action::Link(j) => Some(j),
                    Action::New => None,
                });
                BeamResult { links, score }
            })
            .collect();
    }
    beam.swap_remove(0)
}

pub fn resolve_beam(doc: &Document, scores: &PairScores, cfg: &ResolutionConfig) -> ChainSet {
    let best = beam_search(scores, cfg.beam_width, cfg.threshold);
    links_to_chains(&best.links, &ordered_ids(doc))
}

pub fn resolve(doc: &Document, scores: &PairScores, cfg: &ResolutionConfig) -> ChainSet {
    resolve_ids(&ordered_ids(doc), scores, cfg)
}

/// [`resolve`] for mentions given by id in document order.
pub fn resolve_ids(ids: &[usize], scores: &PairScores, cfg: &ResolutionConfig) -> ChainSet {
    let links = match cfg.strategy {
        Strategy::Greedy => greedy_links(scores, cfg.threshold),
        Strategy::Beam => beam_search(scores, cfg.beam_width, cfg.threshold).links,
    };
    links_to_chains(&links, ids)
}
