//! Coreference scores: MUC, B³, CEAF-e, their CoNLL average, and average
//! precision over ranked pair scores.
//!
//! Every metric reduces to four additive counts (precision and recall
//! numerators and denominators), so corpus-level scores are obtained by
//! summing [`Counts`] over documents before dividing.

use std::collections::{BTreeSet, HashMap};

use num_rational::Ratio;
use num_traits::CheckedAdd;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ChainSet;

/// Chain counts up to which CEAF uses exhaustive subset search.
pub const CEAF_EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("gold and predicted chains cover different mentions")]
    UniverseMismatch,
    #[error("average precision needs at least one positive")]
    NoPositives,
    #[error("{0} scores for {1} labels")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PRF {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PRF {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Counts {
    pub p_num: f64,
    pub p_den: f64,
    pub r_num: f64,
    pub r_den: f64,
}

impl Counts {
    pub fn prf(&self) -> PRF {
        PRF::new(ratio(self.p_num, self.p_den), ratio(self.r_num, self.r_den))
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.p_num += o.p_num;
        self.p_den += o.p_den;
        self.r_num += o.r_num;
        self.r_den += o.r_den;
    }
}

fn check_universe(gold: &ChainSet, pred: &ChainSet) -> Result<(), MetricError> {
    let g: BTreeSet<usize> = gold.universe();
    let p: BTreeSet<usize> = pred.universe();
    if g == p {
        Ok(())
    } else {
        Err(MetricError::UniverseMismatch)
    }
}

/// For each key chain: (size - number of response chains it is split into),
/// and (size - 1).
fn muc_side(key: &ChainSet, response: &ChainSet) -> (f64, f64) {
    let owner = response.chain_of();
    let mut num = 0.0;
    let mut den = 0.0;
    for chain in &key.chains {
        let parts: BTreeSet<usize> = chain.iter().map(|m| owner[m]).collect();
        num += (chain.len() - parts.len()) as f64;
        den += (chain.len() - 1) as f64;
    }
    (num, den)
}

pub fn muc_counts(gold: &ChainSet, pred: &ChainSet) -> Result<Counts, MetricError> {
    check_universe(gold, pred)?;
    let (r_num, r_den) = muc_side(gold, pred);
    let (p_num, p_den) = muc_side(pred, gold);
    Ok(Counts {
        p_num,
        p_den,
        r_num,
        r_den,
    })
}

/// Link-based MUC score. Singletons contribute no links.
pub fn muc(gold: &ChainSet, pred: &ChainSet) -> Result<PRF, MetricError> {
    muc_counts(gold, pred).map(|c| c.prf())
}

fn overlap_table(gold: &ChainSet, pred: &ChainSet) -> Vec<Vec<usize>> {
    let owner = pred.chain_of();
    gold.chains
        .iter()
        .map(|g| {
            let mut row = vec![0; pred.len()];
            for m in g {
                row[owner[m]] += 1;
            }
            row
        })
        .collect()
}

/// Sum of fractions `num / den`, computed exactly when it fits in `i128`
/// so the result does not depend on term order.
fn exact_sum(terms: impl IntoIterator<Item = (u64, u64)>) -> f64 {
    let terms: Vec<(u64, u64)> = terms.into_iter().collect();
    let mut acc = Some(Ratio::<i128>::from_integer(0));
    for &(n, d) in &terms {
        acc = acc.and_then(|a| a.checked_add(&Ratio::new(n.into(), d.into())));
    }
    match acc {
        Some(r) => *r.numer() as f64 / *r.denom() as f64,
        None => {
            let mut v: Vec<f64> = terms.iter().map(|&(n, d)| n as f64 / d as f64).collect();
            v.sort_by(f64::total_cmp);
            v.into_iter().sum()
        }
    }
}

pub fn b_cubed_counts(gold: &ChainSet, pred: &ChainSet) -> Result<Counts, MetricError> {
    check_universe(gold, pred)?;
    let overlap = overlap_table(gold, pred);
    // every mention in cell (g, p) has the same overlap |g ∩ p|
    let cells: Vec<(u64, u64, u64)> = overlap
        .iter()
        .enumerate()
        .flat_map(|(gi, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &k)| k > 0)
                .map(move |(pi, &k)| (k as u64, gi, pi))
        })
        .map(|(k, gi, pi)| {
            (
                k * k,
                gold.chains[gi].len() as u64,
                pred.chains[pi].len() as u64,
            )
        })
        .collect();
    let n = gold.universe().len() as f64;
    Ok(Counts {
        p_num: exact_sum(cells.iter().map(|&(kk, _, ps)| (kk, ps))),
        p_den: n,
        r_num: exact_sum(cells.iter().map(|&(kk, gs, _)| (kk, gs))),
        r_den: n,
    })
}

/// Mention-averaged B³ score.
pub fn b_cubed(gold: &ChainSet, pred: &ChainSet) -> Result<PRF, MetricError> {
    b_cubed_counts(gold, pred).map(|c| c.prf())
}

/// φ₄ similarity matrix `2|g ∩ p| / (|g| + |p|)`.
pub fn phi4_matrix(gold: &ChainSet, pred: &ChainSet) -> Vec<Vec<f64>> {
    let overlap = overlap_table(gold, pred);
    overlap
        .iter()
        .enumerate()
        .map(|(gi, row)| {
            row.iter()
                .enumerate()
                .map(|(pi, &k)| {
                    2.0 * k as f64 / (gold.chains[gi].len() + pred.chains[pi].len()) as f64
                })
                .collect()
        })
        .collect()
}

/// Maximum-weight one-to-one alignment by dynamic programming over subsets
/// of columns; returns the aligned `(row, col)` pairs. Exponential in
/// `min(rows, cols)`.
pub fn alignment_exact(sim: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = sim.len();
    let cols = sim.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if cols > rows {
        let t: Vec<Vec<f64>> = (0..cols)
            .map(|c| (0..rows).map(|r| sim[r][c]).collect())
            .collect();
        return alignment_exact(&t)
            .into_iter()
            .map(|(r, c)| (c, r))
            .collect();
    }
    let full = 1usize << cols;
    let mut dp = vec![f64::NEG_INFINITY; full];
    dp[0] = 0.0;
    // choice[r][mask]: column taken by row r to reach mask, if any
    let mut choice = vec![vec![None; full]; rows];
    for (r, row) in sim.iter().enumerate() {
        let mut next = dp.clone();
        for (mask, &cur) in dp.iter().enumerate() {
            if cur == f64::NEG_INFINITY {
                continue;
            }
            for (c, &w) in row.iter().enumerate() {
                if mask & (1 << c) == 0 {
                    let m2 = mask | (1 << c);
                    let v = cur + w;
                    if v > next[m2] {
                        next[m2] = v;
                        choice[r][m2] = Some(c);
                    }
                }
            }
        }
        dp = next;
    }
    let mut mask = (0..full)
        .max_by(|&a, &b| dp[a].total_cmp(&dp[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let mut pairs = Vec::new();
    for r in (0..rows).rev() {
        if let Some(c) = choice[r][mask] {
            pairs.push((r, c));
            mask &= !(1 << c);
        }
    }
    pairs.reverse();
    pairs
}

/// Total weight of [`alignment_exact`].
pub fn best_alignment_exact(sim: &[Vec<f64>]) -> f64 {
    alignment_exact(sim).iter().map(|&(r, c)| sim[r][c]).sum()
}

/// Maximum-weight one-to-one alignment via the Hungarian algorithm
/// (shortest augmenting paths with potentials), O(n³).
pub fn alignment_hungarian(sim: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = sim.len();
    let cols = sim.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let n = rows.max(cols);
    // square cost matrix, 1-based as in the classic formulation
    let cost = |i: usize, j: usize| -> f64 {
        if i <= rows && j <= cols {
            -sim[i - 1][j - 1]
        } else {
            0.0
        }
    };
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| p[j] >= 1 && p[j] <= rows && j <= cols)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Total weight of [`alignment_hungarian`].
pub fn best_alignment_hungarian(sim: &[Vec<f64>]) -> f64 {
    alignment_hungarian(sim)
        .iter()
        .map(|&(r, c)| sim[r][c])
        .sum()
}

pub fn ceaf_e_counts(gold: &ChainSet, pred: &ChainSet) -> Result<Counts, MetricError> {
    check_universe(gold, pred)?;
    let sim = phi4_matrix(gold, pred);
    let pairs = if gold.len().max(pred.len()) <= CEAF_EXACT_LIMIT {
        alignment_exact(&sim)
    } else {
        alignment_hungarian(&sim)
    };
    let owner = pred.chain_of();
    let total = exact_sum(pairs.iter().map(|&(gi, pi)| {
        let g = &gold.chains[gi];
        let k = g.iter().filter(|m| owner[m] == pi).count();
        (2 * k as u64, (g.len() + pred.chains[pi].len()) as u64)
    }));
    Ok(Counts {
        p_num: total,
        p_den: pred.len() as f64,
        r_num: total,
        r_den: gold.len() as f64,
    })
}

/// Entity-based CEAF with φ₄ similarity.
pub fn ceaf_e(gold: &ChainSet, pred: &ChainSet) -> Result<PRF, MetricError> {
    ceaf_e_counts(gold, pred).map(|c| c.prf())
}

/// Unweighted mean of the MUC, B³ and CEAF-e F1 scores.
pub fn conll_f1(gold: &ChainSet, pred: &ChainSet) -> Result<f64, MetricError> {
    Ok((muc(gold, pred)?.f1 + b_cubed(gold, pred)?.f1 + ceaf_e(gold, pred)?.f1) / 3.0)
}

/// Mean precision at the rank of each positive, ranking by descending
/// score; equal scores keep their input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Scores of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub muc: PRF,
    pub b3: PRF,
    pub ceaf_e: PRF,
    pub conll_f1: f64,
    pub ap: Option<f64>,
}

/// Corpus-level accumulator: sums counts over documents, then scores.
#[derive(Debug, Clone, Default)]
pub struct Scorer {
    muc: Counts,
    b3: Counts,
    ceaf: Counts,
    pair_scores: Vec<f64>,
    pair_labels: Vec<bool>,
}

impl Scorer {
    pub fn add(&mut self, gold: &ChainSet, pred: &ChainSet) -> Result<(), MetricError> {
        self.muc += muc_counts(gold, pred)?;
        self.b3 += b_cubed_counts(gold, pred)?;
        self.ceaf += ceaf_e_counts(gold, pred)?;
        Ok(())
    }

    /// Records ranked pair predictions for average precision.
    pub fn add_pairs(&mut self, scores: &[f64], labels: &[bool]) {
        self.pair_scores.extend_from_slice(scores);
        self.pair_labels.extend_from_slice(labels);
    }

    pub fn scores(&self) -> Scores {
        let (muc, b3, ceaf_e) = (self.muc.prf(), self.b3.prf(), self.ceaf.prf());
        Scores {
            muc,
            b3,
            ceaf_e,
            conll_f1: (muc.f1 + b3.f1 + ceaf_e.f1) / 3.0,
            ap: average_precision(&self.pair_scores, &self.pair_labels).ok(),
        }
    }
}

/// Gold pair labels: whether two mention ids share a gold chain.
pub fn same_chain(gold: &ChainSet) -> impl Fn(usize, usize) -> bool {
    let owner: HashMap<usize, usize> = gold.chain_of();
    move |a, b| owner.get(&a).is_some_and(|x| owner.get(&b) == Some(x))
}
