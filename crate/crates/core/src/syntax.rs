//! Per-token features read off the dependency tree, and the learned affine
//! map that adds them onto contextual embeddings:
//! `enhanced_i = embedding_i + weight^T · vectorize(features_i) + bias`.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::embeddings::EmbeddingMatrix;

/// Longest root path recorded in the path bag.
pub const PATH_CAP: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SyntaxError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// A frozen, sorted label inventory. Unknown labels have no index.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Inventory(Vec<String>);

impl Inventory {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        Self(set.into_iter().collect())
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.0.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }
}

/// Dependency-relation and part-of-speech inventories.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Inventories {
    pub deprels: Inventory,
    pub upos: Inventory,
}

impl Inventories {
    pub fn from_corpus<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut deprels = BTreeSet::new();
        let mut upos = BTreeSet::new();
        for doc in docs {
            for t in doc.tokens() {
                deprels.insert(t.deprel.clone());
                upos.insert(t.upos.clone());
            }
        }
        Self {
            deprels: Inventory::new(deprels),
            upos: Inventory::new(upos),
        }
    }

    /// Length of [`SyntaxFeatures::vectorize`]'s output.
    pub fn feature_dim(&self) -> usize {
        1 + self.deprels.len() + self.upos.len() + self.deprels.len() + 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntaxFeatures {
    pub depth: usize,
    /// Index of the token's relation, `None` when out of inventory.
    pub deprel: Option<usize>,
    /// Index of the head token's POS; `None` for roots and unknown tags.
    pub head_upos: Option<usize>,
    /// Relation counts along the path to the root, nearest `PATH_CAP` edges.
    pub path_bag: Vec<u32>,
    /// (left children, right children)
    pub child_counts: (usize, usize),
}

impl SyntaxFeatures {
    pub fn deprel_onehot(&self, inv: &Inventories) -> Vec<f64> {
        onehot(self.deprel, inv.deprels.len())
    }

    pub fn head_upos_onehot(&self, inv: &Inventories) -> Vec<f64> {
        onehot(self.head_upos, inv.upos.len())
    }

    /// `[depth/8, deprel onehot, head-POS onehot, path bag/8, left/4, right/4]`
    pub fn vectorize(&self, inv: &Inventories) -> Vec<f64> {
        let mut v = Vec::with_capacity(inv.feature_dim());
        v.push(self.depth as f64 / 8.0);
        v.extend(self.deprel_onehot(inv));
        v.extend(self.head_upos_onehot(inv));
        v.extend(self.path_bag.iter().map(|&c| f64::from(c) / 8.0));
        v.push(self.child_counts.0 as f64 / 4.0);
        v.push(self.child_counts.1 as f64 / 4.0);
        v
    }
}

fn onehot(idx: Option<usize>, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    if let Some(i) = idx {
        v[i] = 1.0;
    }
    v
}

/// One feature record per token, in document order.
pub fn extract_features(doc: &Document, inv: &Inventories) -> Vec<SyntaxFeatures> {
    let mut out = Vec::with_capacity(doc.n_tokens());
    for sentence in &doc.sentences {
        let mut left = vec![0; sentence.len()];
        let mut right = vec![0; sentence.len()];
        for t in sentence {
            if let Some(h) = t.head {
                if t.index < h {
                    left[h] += 1;
                } else {
                    right[h] += 1;
                }
            }
        }
        for t in sentence {
            let mut path_bag = vec![0u32; inv.deprels.len()];
            let mut depth = 0;
            let mut cur = t;
            while let Some(h) = cur.head {
                if depth < PATH_CAP {
                    if let Some(i) = inv.deprels.index(&cur.deprel) {
                        path_bag[i] += 1;
                    }
                }
                depth += 1;
                cur = &sentence[h];
            }
            out.push(SyntaxFeatures {
                depth,
                deprel: inv.deprels.index(&t.deprel),
                head_upos: t.head.and_then(|h| inv.upos.index(&sentence[h].upos)),
                path_bag,
                child_counts: (left[t.index], right[t.index]),
            });
        }
    }
    out
}

/// Stacks vectorized features into an `n_tokens x feature_dim` matrix.
pub fn feature_matrix(feats: &[SyntaxFeatures], inv: &Inventories) -> Array2<f64> {
    let f = inv.feature_dim();
    let mut x = Array2::zeros((feats.len(), f));
    for (r, feat) in feats.iter().enumerate() {
        for (c, v) in feat.vectorize(inv).into_iter().enumerate() {
            x[[r, c]] = v;
        }
    }
    x
}

/// Learned affine map from tree features to embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntaxProjection {
    /// `feature_dim x d`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl SyntaxProjection {
    pub fn zeros(feature_dim: usize, dim: usize) -> Self {
        Self {
            weight: Array2::zeros((feature_dim, dim)),
            bias: Array1::zeros(dim),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weight.ncols()
    }

    /// `x · weight + bias` for a stacked feature matrix.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Adds the projected tree features onto the embeddings. No renormalization.
pub fn enhance(
    embeddings: &EmbeddingMatrix,
    feats: &[SyntaxFeatures],
    inv: &Inventories,
    proj: &SyntaxProjection,
) -> Result<Array2<f64>, SyntaxError> {
    if feats.len() != embeddings.rows() {
        return Err(SyntaxError::ShapeMismatch(format!(
            "{} feature rows for {} embedding rows",
            feats.len(),
            embeddings.rows()
        )));
    }
    if proj.feature_dim() != inv.feature_dim()
        || proj.dim() != embeddings.dim()
        || proj.bias.len() != proj.dim()
    {
        return Err(SyntaxError::ShapeMismatch(format!(
            "projection {}x{} (bias {}) against feature_dim {} and embedding dim {}",
            proj.feature_dim(),
            proj.dim(),
            proj.bias.len(),
            inv.feature_dim(),
            embeddings.dim()
        )));
    }
    let x = feature_matrix(feats, inv);
    Ok(embeddings.as_array() + &proj.apply(&x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_conllu;
    use ndarray::array;

    const CAT: &str = "# newdoc id = cat\n\
1\tThe\tthe\tDET\t_\t_\t2\tdet\t_\t_\n\
2\tcat\tcat\tNOUN\t_\t_\t3\tnsubj\t_\t_\n\
3\tslept\tsleep\tVERB\t_\t_\t0\troot\t_\t_\n\
4\t.\t.\tPUNCT\t_\t_\t3\tpunct\t_\t_\n\n";

    const CHAIN: &str = "1\ta\ta\tX\t_\t_\t2\tdep\t_\t_\n\
2\tb\tb\tX\t_\t_\t3\tdep\t_\t_\n\
3\tc\tc\tX\t_\t_\t0\troot\t_\t_\n";

    fn cat() -> (Document, Inventories) {
        let doc = parse_conllu(CAT).unwrap().remove(0);
        let inv = Inventories::from_corpus([&doc]);
        (doc, inv)
    }

    #[test]
    fn root_has_depth_zero_and_empty_path() {
        let (doc, inv) = cat();
        let f = extract_features(&doc, &inv);
        assert_eq!(f[2].depth, 0);
        assert!(f[2].path_bag.iter().all(|&c| c == 0));
        assert_eq!(f[2].head_upos, None);
        // "The" -> det -> nsubj -> root: path {det, nsubj}
        let det = inv.deprels.index("det").unwrap();
        let nsubj = inv.deprels.index("nsubj").unwrap();
        assert_eq!(f[0].depth, 2);
        assert_eq!((f[0].path_bag[det], f[0].path_bag[nsubj]), (1, 1));
        assert_eq!(f[0].head_upos, inv.upos.index("NOUN"));
    }

    #[test]
    fn chain_depths() {
        let doc = parse_conllu(CHAIN).unwrap().remove(0);
        let inv = Inventories::from_corpus([&doc]);
        let depths: Vec<usize> = extract_features(&doc, &inv)
            .iter()
            .map(|f| f.depth)
            .collect();
        assert_eq!(depths, vec![2, 1, 0]);
    }

    #[test]
    fn slept_has_one_child_each_side() {
        let (doc, inv) = cat();
        assert_eq!(extract_features(&doc, &inv)[2].child_counts, (1, 1));
    }

    #[test]
    fn unknown_labels_give_zero_onehots() {
        let (doc, _) = cat();
        let inv = Inventories {
            deprels: Inventory::new(["nsubj"]),
            upos: Inventory::new(["VERB"]),
        };
        let f = extract_features(&doc, &inv);
        assert_eq!(f[0].deprel_onehot(&inv), vec![0.0]);
        assert_eq!(f[1].deprel_onehot(&inv), vec![1.0]);
        assert_eq!(f[1].head_upos_onehot(&inv), vec![1.0]);
        assert_eq!(f[0].head_upos_onehot(&inv), vec![0.0]);
        assert_eq!(f[0].vectorize(&inv).len(), inv.feature_dim());
    }

    #[test]
    fn path_bag_is_capped() {
        // 12-token chain, token 0 at depth 11
        let lines: String = (1..=12)
            .map(|i| {
                let head = if i == 12 { 0 } else { i + 1 };
                let rel = if i == 12 { "root" } else { "dep" };
                format!("{i}\tw\tw\tX\t_\t_\t{head}\t{rel}\t_\t_\n")
            })
            .collect();
        let doc = parse_conllu(&lines).unwrap().remove(0);
        let inv = Inventories::from_corpus([&doc]);
        let f = &extract_features(&doc, &inv)[0];
        assert_eq!(f.depth, 11);
        assert_eq!(
            f.path_bag[inv.deprels.index("dep").unwrap()],
            PATH_CAP as u32
        );
    }

    #[test]
    fn zero_projection_is_identity() {
        let (doc, inv) = cat();
        let e = crate::embeddings::feature_hash_embed(&doc, 16, 2, 0).unwrap();
        let f = extract_features(&doc, &inv);
        let out = enhance(
            &e,
            &f,
            &inv,
            &SyntaxProjection::zeros(inv.feature_dim(), 16),
        )
        .unwrap();
        assert_eq!(&out, e.as_array());
    }

    #[test]
    fn bias_only_on_zero_embeddings() {
        let (doc, inv) = cat();
        let e = EmbeddingMatrix::new(Array2::zeros((4, 3))).unwrap();
        let f = extract_features(&doc, &inv);
        let mut p = SyntaxProjection::zeros(inv.feature_dim(), 3);
        p.bias = array![0.5, -1.0, 2.0];
        let out = enhance(&e, &f, &inv, &p).unwrap();
        for row in out.rows() {
            assert_eq!(row, p.bias);
        }
    }

    #[test]
    fn hand_multiplied_projection() {
        // Two tokens, inventories with one label each: feature_dim = 1+1+1+1+2 = 6.
        let text = "1\ta\ta\tX\t_\t_\t2\tdep\t_\t_\n2\tb\tb\tX\t_\t_\t0\troot\t_\t_\n";
        let doc = parse_conllu(text).unwrap().remove(0);
        let inv = Inventories {
            deprels: Inventory::new(["dep"]),
            upos: Inventory::new(["X"]),
        };
        let f = extract_features(&doc, &inv);
        // token0: [1/8, 1, 1, 1/8, 0, 0]; token1: [0, 0, 0, 0, 1/4, 0]
        assert_eq!(f[0].vectorize(&inv), vec![0.125, 1.0, 1.0, 0.125, 0.0, 0.0]);
        assert_eq!(f[1].vectorize(&inv), vec![0.0, 0.0, 0.0, 0.0, 0.25, 0.0]);
        let mut p = SyntaxProjection::zeros(6, 2);
        p.weight = array![
            [8.0, 0.0],
            [1.0, 2.0],
            [0.0, 3.0],
            [8.0, 8.0],
            [4.0, -4.0],
            [9.0, 9.0]
        ];
        p.bias = array![0.5, 0.25];
        let e = EmbeddingMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let out = enhance(&e, &f, &inv, &p).unwrap();
        // row0 = [1,0] + [1+1+0+1, 0+2+3+1] + bias = [4.5, 6.25]
        // row1 = [0,1] + [1, -1] + bias = [1.5, 0.25]
        assert_eq!(out, array![[4.5, 6.25], [1.5, 0.25]]);
    }

    #[test]
    fn shape_mismatch() {
        let (doc, inv) = cat();
        let e = EmbeddingMatrix::new(Array2::zeros((3, 4))).unwrap();
        let f = extract_features(&doc, &inv);
        let p = SyntaxProjection::zeros(inv.feature_dim(), 4);
        assert!(enhance(&e, &f, &inv, &p).is_err());
    }
}
