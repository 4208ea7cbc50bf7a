//! Brute-force reference implementations written straight from the metric
//! and search definitions. Shared with the acceptance suite.

#![allow(dead_code)]

use corefbridge::corpus::ChainSet;

/// Every partition of `0..n`, from restricted growth strings.
pub fn all_partitions(n: usize) -> Vec<ChainSet> {
    fn grow(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<ChainSet>) {
        if prefix.len() == n {
            let k = prefix.iter().max().map_or(0, |m| m + 1);
            let mut chains = vec![Vec::new(); k];
            for (m, &c) in prefix.iter().enumerate() {
                chains[c].push(m);
            }
            out.push(ChainSet::new(chains));
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for c in 0..=next {
            prefix.push(c);
            grow(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::with_capacity(n), n, &mut out);
    out
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn chain_index(set: &ChainSet, m: usize) -> usize {
    set.chains.iter().position(|c| c.contains(&m)).unwrap()
}

/// One side of MUC: `Σ(|k| - parts(k)) / Σ(|k| - 1)` over chains `k` of
/// `key`, with `parts` counted against `response`.
fn muc_side(key: &ChainSet, response: &ChainSet) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in &key.chains {
        let mut parts: Vec<usize> = k.iter().map(|&m| chain_index(response, m)).collect();
        parts.sort_unstable();
        parts.dedup();
        num += (k.len() - parts.len()) as f64;
        den += (k.len() - 1) as f64;
    }
    ratio(num, den)
}

/// (precision, recall, f1)
pub fn muc(gold: &ChainSet, pred: &ChainSet) -> (f64, f64, f64) {
    let r = muc_side(gold, pred);
    let p = muc_side(pred, gold);
    (p, r, f1(p, r))
}

pub fn b_cubed(gold: &ChainSet, pred: &ChainSet) -> (f64, f64, f64) {
    let mentions: Vec<usize> = gold.chains.iter().flatten().copied().collect();
    let mut p = 0.0;
    let mut r = 0.0;
    for &m in &mentions {
        let g = &gold.chains[chain_index(gold, m)];
        let q = &pred.chains[chain_index(pred, m)];
        let both = g.iter().filter(|x| q.contains(x)).count() as f64;
        p += both / q.len() as f64;
        r += both / g.len() as f64;
    }
    let n = mentions.len() as f64;
    let (p, r) = (ratio(p, n), ratio(r, n));
    (p, r, f1(p, r))
}

fn phi4(g: &[usize], q: &[usize]) -> f64 {
    let both = g.iter().filter(|x| q.contains(x)).count() as f64;
    2.0 * both / (g.len() + q.len()) as f64
}

/// Calls `f` with every injective map from `0..k` into `0..n`.
fn for_each_injection(k: usize, n: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(
        k: usize,
        n: usize,
        cur: &mut Vec<usize>,
        used: &mut [bool],
        f: &mut dyn FnMut(&[usize]),
    ) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                rec(k, n, cur, used, f);
                cur.pop();
                used[j] = false;
            }
        }
    }
    rec(k, n, &mut Vec::new(), &mut vec![false; n], f);
}

/// Best total similarity over one-to-one alignments, by enumeration.
pub fn best_alignment(sim: &[Vec<f64>]) -> f64 {
    let rows = sim.len();
    let cols = sim.first().map_or(0, Vec::len);
    let mut best = 0.0f64;
    if rows <= cols {
        for_each_injection(rows, cols, &mut |m| {
            best = best.max((0..rows).map(|i| sim[i][m[i]]).sum());
        });
    } else {
        for_each_injection(cols, rows, &mut |m| {
            best = best.max((0..cols).map(|j| sim[m[j]][j]).sum());
        });
    }
    best
}

pub fn ceaf_e(gold: &ChainSet, pred: &ChainSet) -> (f64, f64, f64) {
    let sim: Vec<Vec<f64>> = gold
        .chains
        .iter()
        .map(|g| pred.chains.iter().map(|q| phi4(g, q)).collect())
        .collect();
    let total = best_alignment(&sim);
    let p = ratio(total, pred.len() as f64);
    let r = ratio(total, gold.len() as f64);
    (p, r, f1(p, r))
}

/// Precision at each positive's rank, averaged; ranking by descending
/// score with ties in input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let mut rank_of = vec![0usize; n];
    for i in 0..n {
        rank_of[i] = (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count();
    }
    let pos: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    let mut sum = 0.0;
    for &i in &pos {
        let hits = pos.iter().filter(|&&j| rank_of[j] <= rank_of[i]).count();
        sum += hits as f64 / (rank_of[i] + 1) as f64;
    }
    sum / pos.len() as f64
}

/// Score of linking mention `i` to `link` (`None` = new chain): log of the
/// link probability, or `log(1 - best) + logit(threshold)` for a new chain.
pub fn decision_score(p: &[Vec<f64>], i: usize, link: Option<usize>, threshold: f64) -> f64 {
    match link {
        Some(j) => p[i][j].ln(),
        None if i == 0 => 0.0,
        None => {
            let best = p[i][..i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (1.0 - best).ln() + threshold.ln() - (1.0 - threshold).ln()
        }
    }
}

/// Highest-scoring link sequence by enumerating all of them.
pub fn exhaustive_links(p: &[Vec<f64>], threshold: f64) -> (Vec<Option<usize>>, f64) {
    fn rec(
        p: &[Vec<f64>],
        t: f64,
        cur: &mut Vec<Option<usize>>,
        score: f64,
        best: &mut (Vec<Option<usize>>, f64),
    ) {
        let i = cur.len();
        if i == p.len() {
            if score > best.1 {
                *best = (cur.clone(), score);
            }
            return;
        }
        let options = std::iter::once(None).chain((0..i).map(Some));
        for l in options.collect::<Vec<_>>() {
            cur.push(l);
            rec(p, t, cur, score + decision_score(p, i, l, t), best);
            cur.pop();
        }
    }
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    rec(p, threshold, &mut Vec::new(), 0.0, &mut best);
    best
}
