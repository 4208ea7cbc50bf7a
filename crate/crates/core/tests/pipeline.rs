use corefbridge::corpus::{gen_synthetic, parse_conllu, write_conllu, SyntheticConfig};
use corefbridge::embeddings::{feature_hash_embed, EmbeddingMatrix};
use corefbridge::resolver::{resolve_ids, ResolutionConfig};
use corefbridge::syntax::{enhance, extract_features, Inventories, SyntaxProjection};
use corefbridge::training::{
    prepare_document, randomize_params, score_document, Arm, MentionRepr, ModelConfig, ModelParams,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> impl Strategy<Value = SyntheticConfig> {
    (
        any::<u64>(),
        1usize..=3,
        1usize..=5,
        10usize..=40,
        0.0f64..=1.0,
    )
        .prop_map(
            |(seed, n_docs, sentences_per_doc, vocab_size, syntax_signal)| SyntheticConfig {
                seed,
                n_docs,
                sentences_per_doc,
                vocab_size,
                syntax_signal,
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conllu_round_trip(cfg in config()) {
        let docs = gen_synthetic(&cfg).unwrap();
        let text = write_conllu(&docs);
        let back = parse_conllu(&text).unwrap();
        prop_assert_eq!(&back, &docs);
        prop_assert_eq!(write_conllu(&back), text);
    }

    #[test]
    fn head_links_reach_the_root(cfg in config()) {
        for doc in gen_synthetic(&cfg).unwrap() {
            for sentence in &doc.sentences {
                for start in 0..sentence.len() {
                    let mut at = start;
                    let mut steps = 0;
                    while let Some(h) = sentence[at].head {
                        at = h;
                        steps += 1;
                        prop_assert!(steps <= sentence.len());
                    }
                }
            }
        }
    }

    #[test]
    fn generator_is_pure(cfg in config()) {
        prop_assert_eq!(gen_synthetic(&cfg).unwrap(), gen_synthetic(&cfg).unwrap());
    }

    #[test]
    fn far_edits_leave_embedding_rows_alone(
        seed in any::<u64>(),
        window in 0usize..=3,
        pick in any::<(usize, usize)>(),
    ) {
        let cfg = SyntheticConfig { seed, n_docs: 1, sentences_per_doc: 2, ..SyntheticConfig::default() };
        let doc = gen_synthetic(&cfg).unwrap().remove(0);
        let s = pick.0 % doc.sentences.len();
        let len = doc.sentences[s].len();
        let i = pick.1 % len;
        let far: Vec<usize> = (0..len).filter(|&j| j.abs_diff(i) > window).collect();
        prop_assume!(!far.is_empty());
        let j = far[pick.0 % far.len()];
        let mut edited = doc.clone();
        edited.sentences[s][j].surface.push_str("_edited");
        let row = doc.sentence_offsets()[s] + i;
        let a = feature_hash_embed(&doc, 32, window, 7).unwrap();
        let b = feature_hash_embed(&edited, 32, window, 7).unwrap();
        prop_assert_eq!(a.row(row), b.row(row));
    }

    #[test]
    fn enhance_is_linear_in_the_projection(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let cfg = SyntheticConfig { seed, n_docs: 1, sentences_per_doc: 2, ..SyntheticConfig::default() };
        let doc = gen_synthetic(&cfg).unwrap().remove(0);
        let inv = Inventories::from_corpus([&doc]);
        let feats = extract_features(&doc, &inv);
        let e = feature_hash_embed(&doc, 16, 2, 0).unwrap();
        let zero = EmbeddingMatrix::new(Array2::zeros((doc.n_tokens(), 16))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut random_proj = || {
            let mut p = SyntaxProjection::zeros(inv.feature_dim(), 16);
            p.weight.mapv_inplace(|_| rng.random_range(-1.0f64..1.0));
            p.bias.mapv_inplace(|_| rng.random_range(-1.0f64..1.0));
            p
        };
        let (p1, p2) = (random_proj(), random_proj());
        let mix = SyntaxProjection {
            weight: &p1.weight * alpha + &p2.weight * beta,
            bias: &p1.bias * alpha + &p2.bias * beta,
        };
        let lhs = enhance(&e, &feats, &inv, &mix).unwrap();
        let rhs = enhance(&zero, &feats, &inv, &p1).unwrap() * alpha
            + enhance(&zero, &feats, &inv, &p2).unwrap() * beta
            + e.as_array();
        for (a, b) in lhs.iter().zip(&rhs) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let same = enhance(&e, &feats, &inv, &SyntaxProjection::zeros(inv.feature_dim(), 16)).unwrap();
        prop_assert_eq!(&same, e.as_array());
    }

    #[test]
    fn any_unit_row_provider_gives_valid_output(seed in any::<u64>(), arm_ix in 0usize..5) {
        let cfg = SyntheticConfig { seed, n_docs: 1, sentences_per_doc: 3, ..SyntheticConfig::default() };
        let doc = gen_synthetic(&cfg).unwrap().remove(0);
        let inv = Inventories::from_corpus([&doc]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut raw = Array2::from_shape_simple_fn((doc.n_tokens(), 8), || rng.random_range(-1.0f64..1.0));
        for mut r in raw.rows_mut() {
            let norm = r.dot(&r).sqrt();
            r.mapv_inplace(|v| v / norm);
        }
        let e = EmbeddingMatrix::new(raw).unwrap();
        let model = ModelConfig::default();
        let inp = prepare_document(&doc, &e, &inv, 0, MentionRepr::Head).unwrap();
        let mut params = ModelParams::init(Arm::ALL[arm_ix], inv, 8, &model, seed).unwrap();
        randomize_params(&mut params, seed);
        let (scores, attn) = score_document(&params, &inp).unwrap();
        for (i, row) in scores.0.iter().enumerate() {
            prop_assert_eq!(row.len(), i);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        for i in 0..attn.n {
            prop_assert_eq!(attn.a[[i, i]], 0.0);
        }
        let chains = resolve_ids(&inp.ids, &scores, &ResolutionConfig::default());
        let mut ids: Vec<usize> = chains.chains.concat();
        ids.sort_unstable();
        let mut want = inp.ids.clone();
        want.sort_unstable();
        prop_assert_eq!(ids, want);
    }
}
