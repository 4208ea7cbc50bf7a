//! Deterministic synthetic corpora for desk-scale experiments.
//!
//! Each document introduces a handful of entities. An entity owns a head
//! noun, a syntactic signature (the relation its mentions bear and the part
//! of speech of their governor) and a semantic role. Later mentions reuse
//! the head noun with probability `0.4 * syntax_signal` and are pronouns
//! otherwise; they keep the entity's signature and role with probability
//! `syntax_signal`. Pronouns are drawn independently of the entity, so
//! resolving them has to rely on the tree.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ChainSet, CorpusError, Document, Mention, ParseTree, Token};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_docs: usize,
    pub sentences_per_doc: usize,
    pub vocab_size: usize,
    pub syntax_signal: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_docs: 200,
            sentences_per_doc: 6,
            vocab_size: 64,
            syntax_signal: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Governor {
    Verb,
    Noun,
    Adj,
}

/// (relation to governor, governor kind)
const SIGNATURES: [(&str, Governor); 9] = [
    ("nsubj", Governor::Verb),
    ("obj", Governor::Verb),
    ("obl", Governor::Verb),
    ("nsubj", Governor::Adj),
    ("obl", Governor::Adj),
    ("nmod", Governor::Noun),
    ("obl", Governor::Noun),
    ("obj", Governor::Adj),
    ("nmod", Governor::Verb),
];

const ROLES: [&str; 6] = ["ARG0", "ARG1", "ARG2", "ARGM-LOC", "ARGM-TMP", "ARGM-MNR"];
const PRONOUNS: [&str; 4] = ["it", "they", "she", "he"];
const VERBS: [&str; 12] = [
    "saw", "met", "called", "found", "helped", "followed", "noticed", "joined", "left", "chose",
    "sent", "kept",
];
const ADJS: [&str; 8] = [
    "proud", "aware", "fond", "tired", "sure", "wary", "glad", "free",
];
const FILLER_NOUNS: [&str; 8] = [
    "report", "plan", "house", "letter", "meeting", "story", "garden", "road",
];
const PREPS: [&str; 5] = ["in", "with", "near", "about", "for"];
const DETS: [&str; 3] = ["the", "a", "this"];
const ADVERBS: [&str; 6] = ["quickly", "often", "again", "later", "rarely", "soon"];
const SYLLABLES: [&str; 8] = ["ka", "lo", "mi", "ru", "te", "sa", "no", "vi"];

fn noun(k: usize) -> String {
    // base-8 spelling with a fixed three-syllable minimum
    let mut s = String::new();
    let mut k = k;
    for _ in 0..3 {
        s.push_str(SYLLABLES[k % 8]);
        k /= 8;
    }
    while k > 0 {
        s.push_str(SYLLABLES[k % 8]);
        k /= 8;
    }
    s
}

struct Entity {
    noun: String,
    signature: usize,
    role: &'static str,
}

struct Node {
    key: f64,
    surface: String,
    upos: &'static str,
    head: Option<usize>,
    deprel: String,
    role: Option<String>,
}

/// A tree under construction; nodes get linear positions from their keys.
#[derive(Default)]
struct SentenceBuilder {
    nodes: Vec<Node>,
}

impl SentenceBuilder {
    fn add(
        &mut self,
        key: f64,
        surface: &str,
        upos: &'static str,
        head: Option<usize>,
        deprel: &str,
    ) -> usize {
        self.nodes.push(Node {
            key,
            surface: surface.to_string(),
            upos,
            head,
            deprel: deprel.to_string(),
            role: None,
        });
        self.nodes.len() - 1
    }

    /// Returns tokens plus a map from node id to token position.
    fn finish(self) -> (Vec<Token>, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by(|&a, &b| self.nodes[a].key.total_cmp(&self.nodes[b].key));
        let mut pos = vec![0; self.nodes.len()];
        for (p, &n) in order.iter().enumerate() {
            pos[n] = p;
        }
        let tokens = order
            .iter()
            .enumerate()
            .map(|(p, &n)| {
                let node = &self.nodes[n];
                Token {
                    index: p,
                    surface: node.surface.clone(),
                    upos: node.upos.to_string(),
                    head: node.head.map(|h| pos[h]),
                    deprel: node.deprel.clone(),
                    role: node.role.clone(),
                }
            })
            .collect();
        (tokens, pos)
    }
}

struct MentionSlot {
    entity: usize,
    signature: usize,
    pronoun: Option<&'static str>,
    role: &'static str,
}

/// (first, last, head, entity) of a mention, as token positions.
type Span = (usize, usize, usize, usize);

fn build_sentence(
    rng: &mut ChaCha8Rng,
    entities: &[Entity],
    slots: &[MentionSlot],
) -> (Vec<Token>, Vec<Span>) {
    let mut b = SentenceBuilder::default();
    let verb = b.add(50.0, VERBS.choose(rng).unwrap(), "VERB", None, "root");
    b.add(1000.0, ".", "PUNCT", Some(verb), "punct");
    if rng.random_bool(0.5) {
        let key = if rng.random_bool(0.5) { 5.0 } else { 900.0 };
        b.add(
            key,
            ADVERBS.choose(rng).unwrap(),
            "ADV",
            Some(verb),
            "advmod",
        );
    }
    let mut adj: Option<(usize, f64)> = None;
    let mut filler: Option<(usize, f64)> = None;
    // (start node, end node, head node, entity) per mention
    let mut spans = Vec::new();
    for (si, slot) in slots.iter().enumerate() {
        let (rel, gov) = SIGNATURES[slot.signature];
        let (gov_node, base) = match gov {
            Governor::Verb => {
                let base = match rel {
                    "nsubj" => 10.0,
                    "obj" => 60.0,
                    _ => 300.0,
                };
                (verb, base + si as f64 * 20.0)
            }
            Governor::Adj => {
                let (a, k) = *adj.get_or_insert_with(|| {
                    let a = b.add(400.0, ADJS.choose(rng).unwrap(), "ADJ", Some(verb), "xcomp");
                    (a, 400.0)
                });
                let base = if rel == "nsubj" { k - 30.0 } else { k + 10.0 };
                (a, base + si as f64 * 5.0)
            }
            Governor::Noun => {
                let (f, k) = *filler.get_or_insert_with(|| {
                    let f = b.add(
                        600.0,
                        FILLER_NOUNS.choose(rng).unwrap(),
                        "NOUN",
                        Some(verb),
                        "obl",
                    );
                    b.add(599.0, PREPS.choose(rng).unwrap(), "ADP", Some(f), "case");
                    b.add(599.5, DETS.choose(rng).unwrap(), "DET", Some(f), "det");
                    (f, 600.0)
                });
                (f, k + 10.0 + si as f64 * 5.0)
            }
        };
        let (surface, upos) = match slot.pronoun {
            Some(p) => (p.to_string(), "PRON"),
            None => (entities[slot.entity].noun.clone(), "NOUN"),
        };
        let head = b.add(base + 2.0, &surface, upos, Some(gov_node), rel);
        b.nodes[head].role = Some(slot.role.to_string());
        let mut first = head;
        if slot.pronoun.is_none() {
            first = b.add(
                base + 1.0,
                DETS.choose(rng).unwrap(),
                "DET",
                Some(head),
                "det",
            );
        }
        if matches!(rel, "obl" | "nmod") {
            first = b.add(
                base + 0.5,
                PREPS.choose(rng).unwrap(),
                "ADP",
                Some(head),
                "case",
            );
        }
        spans.push((first, head, head, slot.entity));
    }
    let (tokens, pos) = b.finish();
    let spans = spans
        .into_iter()
        .map(|(first, last, head, e)| (pos[first], pos[last], pos[head], e))
        .collect();
    (tokens, spans)
}

/// Generates `cfg.n_docs` documents with gold chains. A pure function of
/// its arguments.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Vec<Document>, CorpusError> {
    if cfg.n_docs == 0 {
        return Ok(Vec::new());
    }
    if cfg.vocab_size < 10 {
        return Err(CorpusError::InvalidConfig(format!(
            "vocab_size must be >= 10, got {}",
            cfg.vocab_size
        )));
    }
    if cfg.sentences_per_doc == 0 {
        return Err(CorpusError::InvalidConfig(
            "sentences_per_doc must be >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.syntax_signal) {
        return Err(CorpusError::InvalidConfig(format!(
            "syntax_signal must lie in [0, 1], got {}",
            cfg.syntax_signal
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut docs = Vec::with_capacity(cfg.n_docs);
    for di in 0..cfg.n_docs {
        let n_entities = rng.random_range(2..=4);
        let mut nouns: Vec<usize> = Vec::new();
        while nouns.len() < n_entities {
            let k = rng.random_range(0..cfg.vocab_size);
            if !nouns.contains(&k) {
                nouns.push(k);
            }
        }
        let mut sigs: Vec<usize> = Vec::new();
        while sigs.len() < n_entities {
            let s = rng.random_range(0..SIGNATURES.len());
            if !sigs.contains(&s) {
                sigs.push(s);
            }
        }
        let entities: Vec<Entity> = (0..n_entities)
            .map(|e| Entity {
                noun: noun(nouns[e]),
                signature: sigs[e],
                role: ROLES.choose(&mut rng).unwrap(),
            })
            .collect();

        let mut introduced = vec![false; n_entities];
        let mut sentences = Vec::new();
        let mut mention_specs = Vec::new();
        let mut mention_entities = Vec::new();
        for s in 0..cfg.sentences_per_doc {
            let n_slots = if rng.random_bool(0.5) { 2 } else { 1 };
            let mut slots: Vec<MentionSlot> = Vec::new();
            for _ in 0..n_slots {
                let entity = rng.random_range(0..n_entities);
                if slots.iter().any(|sl| sl.entity == entity) {
                    continue;
                }
                let keeps_syntax = rng.random_bool(cfg.syntax_signal);
                let signature = if keeps_syntax {
                    entities[entity].signature
                } else {
                    rng.random_range(0..SIGNATURES.len())
                };
                let role = if rng.random_bool(cfg.syntax_signal) {
                    entities[entity].role
                } else {
                    ROLES.choose(&mut rng).unwrap()
                };
                let pronoun = if !introduced[entity] || rng.random_bool(0.4 * cfg.syntax_signal) {
                    None
                } else {
                    Some(*PRONOUNS.choose(&mut rng).unwrap())
                };
                introduced[entity] = true;
                slots.push(MentionSlot {
                    entity,
                    signature,
                    pronoun,
                    role,
                });
            }
            // two slots with the same signature would share a position
            if slots.len() == 2 && slots[0].signature == slots[1].signature {
                slots.pop();
            }
            let (tokens, spans) = build_sentence(&mut rng, &entities, &slots);
            for (start, end, head, e) in spans {
                mention_specs.push((s, start, end, head));
                mention_entities.push(e);
            }
            sentences.push(tokens);
        }
        // mention ids follow document order
        let mut order: Vec<usize> = (0..mention_specs.len()).collect();
        order.sort_by_key(|&i| (mention_specs[i].0, mention_specs[i].1));
        let mut mentions = Vec::new();
        let mut chains: Vec<Vec<usize>> = vec![Vec::new(); n_entities];
        for (id, &i) in order.iter().enumerate() {
            let (sentence_index, start, end, head_token) = mention_specs[i];
            mentions.push(Mention {
                id,
                sentence_index,
                start,
                end,
                head_token,
            });
            chains[mention_entities[i]].push(id);
        }
        let id = format!("syn{:05}", di);
        let trees = sentences
            .iter()
            .enumerate()
            .map(|(si, toks)| ParseTree::from_tokens(&id, si, toks))
            .collect::<Result<Vec<_>, _>>()?;
        docs.push(Document {
            id,
            sentences,
            trees,
            mentions,
            gold_chains: Some(ChainSet::new(chains)),
        });
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_conllu, validate_document, write_conllu};

    fn cfg(seed: u64, n_docs: usize) -> SyntheticConfig {
        SyntheticConfig {
            seed,
            n_docs,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn zero_docs_is_empty() {
        assert!(gen_synthetic(&cfg(1, 0)).unwrap().is_empty());
    }

    #[test]
    fn rejects_small_vocab() {
        let c = SyntheticConfig {
            vocab_size: 9,
            ..cfg(1, 3)
        };
        assert!(matches!(
            gen_synthetic(&c),
            Err(CorpusError::InvalidConfig(_))
        ));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = write_conllu(&gen_synthetic(&cfg(42, 5)).unwrap());
        let b = write_conllu(&gen_synthetic(&cfg(42, 5)).unwrap());
        let c = write_conllu(&gen_synthetic(&cfg(43, 5)).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn generated_documents_validate_and_round_trip() {
        let docs = gen_synthetic(&cfg(7, 20)).unwrap();
        for d in &docs {
            validate_document(d).unwrap();
            assert!(!d.mentions.is_empty());
        }
        assert_eq!(parse_conllu(&write_conllu(&docs)).unwrap(), docs);
    }

    #[test]
    fn nouns_are_distinct() {
        let all: std::collections::HashSet<String> = (0..512).map(noun).collect();
        assert_eq!(all.len(), 512);
    }
}
