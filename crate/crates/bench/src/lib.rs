//! Seeded fixtures shared by the benchmarks.

use corefbridge::corpus::{gen_synthetic, Document, SyntheticConfig};
use corefbridge::embeddings::ProviderConfig;
use corefbridge::resolver::PairScores;
use corefbridge::syntax::Inventories;
use corefbridge::training::{prepare_corpus, DocInputs, MentionRepr};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn corpus(n_docs: usize, seed: u64) -> Vec<Document> {
    gen_synthetic(&SyntheticConfig {
        seed,
        n_docs,
        ..SyntheticConfig::default()
    })
    .expect("valid synthetic config")
}

pub fn prepared(n_docs: usize, dim: usize) -> (Inventories, Vec<DocInputs>) {
    let docs = corpus(n_docs, 42);
    let inv = Inventories::from_corpus(&docs);
    let provider = ProviderConfig {
        dim,
        ..ProviderConfig::default()
    };
    let inputs =
        prepare_corpus(&docs, &provider, &inv, MentionRepr::Head).expect("synthetic docs embed");
    (inv, inputs)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Lower-triangular antecedent probabilities for `n` mentions.
pub fn random_scores(n: usize, seed: u64) -> PairScores {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PairScores(
        (0..n)
            .map(|i| (0..i).map(|_| rng.random_range(0.01..0.99)).collect())
            .collect(),
    )
}

pub fn random_similarities(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect()
}
