//! Annotated documents: tokens with dependency trees, gold mention spans and
//! coreference chains.
//!
//! Documents are immutable once built. [`validate_document`] checks every
//! structural invariant; the CoNLL-U reader runs it on everything it returns.

mod conllu;
mod synthetic;

pub use conllu::{parse_conllu, write_conllu};
pub use synthetic::{gen_synthetic, SyntheticConfig};

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Where in the input a corpus error was detected.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Location {
    pub doc_id: String,
    pub sentence: Option<usize>,
    pub line: Option<usize>,
}

impl Location {
    pub fn doc(doc_id: &str) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            ..Self::default()
        }
    }

    pub fn sentence(doc_id: &str, sentence: usize) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            sentence: Some(sentence),
            line: None,
        }
    }

    fn at_line(mut self, line: Option<usize>) -> Self {
        if self.line.is_none() {
            self.line = line;
        }
        self
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "document {:?}", self.doc_id)?;
        if let Some(s) = self.sentence {
            write!(f, ", sentence {s}")?;
        }
        if let Some(l) = self.line {
            write!(f, ", line {l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("{loc}: malformed line: {detail}")]
    MalformedLine { loc: Location, detail: String },
    #[error("{loc}: token index {found} at position {expected}")]
    TokenIndexMismatch {
        loc: Location,
        expected: usize,
        found: usize,
    },
    #[error("{loc}: token {token} has an empty dependency relation")]
    EmptyDeprel { loc: Location, token: usize },
    #[error("{loc}: token {token} is its own head")]
    SelfHead { loc: Location, token: usize },
    #[error("{loc}: token {token} points at head {head} outside the sentence")]
    DanglingHead {
        loc: Location,
        token: usize,
        head: usize,
    },
    #[error("{loc}: sentence has more than one root")]
    MultipleRoots { loc: Location },
    #[error("{loc}: sentence has no root")]
    MissingRoot { loc: Location },
    #[error("{loc}: dependency cycle through token {token}")]
    CycleInTree { loc: Location, token: usize },
    #[error("{loc}: stored tree disagrees with token heads")]
    TreeMismatch { loc: Location },
    #[error("{loc}: mention {mention} has an invalid span")]
    BadMentionSpan { loc: Location, mention: usize },
    #[error("{loc}: duplicate mention id {mention}")]
    DuplicateMentionId { loc: Location, mention: usize },
    #[error("{loc}: mention {mention} appears in more than one chain")]
    OverlappingChains { loc: Location, mention: usize },
    #[error("{loc}: chain references unknown mention {mention}")]
    UnknownChainMention { loc: Location, mention: usize },
    #[error("{loc}: mention {mention} is not covered by any chain")]
    UncoveredMention { loc: Location, mention: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub index: usize,
    pub surface: String,
    pub upos: String,
    /// `None` marks the sentence root.
    pub head: Option<usize>,
    pub deprel: String,
    pub role: Option<String>,
}

impl Token {
    /// Semantic role label, falling back to the dependency relation.
    pub fn role_or_deprel(&self) -> &str {
        self.role.as_deref().unwrap_or(&self.deprel)
    }
}

/// Dependency tree of one sentence as explicit edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseTree {
    pub sentence_index: usize,
    /// `(dependent, head, deprel)` for every non-root token, in token order.
    pub edges: Vec<(usize, usize, String)>,
    pub root: usize,
}

impl ParseTree {
    /// Builds and checks the tree implied by the tokens' head links.
    pub fn from_tokens(
        doc_id: &str,
        sentence_index: usize,
        tokens: &[Token],
    ) -> Result<Self, CorpusError> {
        let loc = Location::sentence(doc_id, sentence_index);
        let n = tokens.len();
        let mut root = None;
        let mut edges = Vec::with_capacity(n.saturating_sub(1));
        for (i, tok) in tokens.iter().enumerate() {
            if tok.index != i {
                return Err(CorpusError::TokenIndexMismatch {
                    loc,
                    expected: i,
                    found: tok.index,
                });
            }
            if tok.deprel.is_empty() {
                return Err(CorpusError::EmptyDeprel { loc, token: i });
            }
            match tok.head {
                None => {
                    if root.is_some() {
                        return Err(CorpusError::MultipleRoots { loc });
                    }
                    root = Some(i);
                }
                Some(h) if h == i => return Err(CorpusError::SelfHead { loc, token: i }),
                Some(h) if h >= n => {
                    return Err(CorpusError::DanglingHead {
                        loc,
                        token: i,
                        head: h,
                    })
                }
                Some(h) => edges.push((i, h, tok.deprel.clone())),
            }
        }
        let Some(root) = root else {
            if n == 0 {
                return Err(CorpusError::MalformedLine {
                    loc,
                    detail: "empty sentence".into(),
                });
            }
            return Err(CorpusError::MissingRoot { loc });
        };
        // Every token must reach the root within n steps.
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(h) = tokens[cur].head {
                cur = h;
                steps += 1;
                if steps > n {
                    return Err(CorpusError::CycleInTree { loc, token: start });
                }
            }
        }
        Ok(Self {
            sentence_index,
            edges,
            root,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub id: usize,
    pub sentence_index: usize,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub head_token: usize,
}

/// A partition of mention ids into coreference chains. Singletons are
/// stored as one-element chains.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChainSet {
    pub chains: Vec<Vec<usize>>,
}

impl ChainSet {
    pub fn new(chains: Vec<Vec<usize>>) -> Self {
        Self { chains }.normalized()
    }

    pub fn singletons(ids: impl IntoIterator<Item = usize>) -> Self {
        Self::new(ids.into_iter().map(|id| vec![id]).collect())
    }

    /// Sorts each chain and orders chains by their smallest member.
    pub fn normalized(mut self) -> Self {
        self.chains.retain(|c| !c.is_empty());
        for c in &mut self.chains {
            c.sort_unstable();
        }
        self.chains.sort();
        self
    }

    /// Adds a singleton chain for every id in `ids` not already covered.
    pub fn with_singletons(mut self, ids: impl IntoIterator<Item = usize>) -> Self {
        let covered: HashSet<usize> = self.chains.iter().flatten().copied().collect();
        for id in ids {
            if !covered.contains(&id) {
                self.chains.push(vec![id]);
            }
        }
        self.normalized()
    }

    pub fn universe(&self) -> BTreeSet<usize> {
        self.chains.iter().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    /// Chains with at least two members.
    pub fn non_singletons(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.chains.iter().filter(|c| c.len() > 1)
    }

    /// Maps each mention id to the index of its chain.
    pub fn chain_of(&self) -> std::collections::HashMap<usize, usize> {
        self.chains
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| c.iter().map(move |&m| (m, ci)))
            .collect()
    }

    fn check(&self, doc_id: &str, known: &HashSet<usize>) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for &m in self.chains.iter().flatten() {
            if !known.contains(&m) {
                return Err(CorpusError::UnknownChainMention {
                    loc: Location::doc(doc_id),
                    mention: m,
                });
            }
            if !seen.insert(m) {
                return Err(CorpusError::OverlappingChains {
                    loc: Location::doc(doc_id),
                    mention: m,
                });
            }
        }
        let mut missing: Vec<usize> = known.difference(&seen).copied().collect();
        missing.sort_unstable();
        if let Some(&m) = missing.first() {
            return Err(CorpusError::UncoveredMention {
                loc: Location::doc(doc_id),
                mention: m,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Vec<Token>>,
    pub trees: Vec<ParseTree>,
    pub mentions: Vec<Mention>,
    pub gold_chains: Option<ChainSet>,
}

impl Document {
    pub fn n_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// Offset of each sentence's first token in document order.
    pub fn sentence_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.sentences
            .iter()
            .map(|s| {
                let o = acc;
                acc += s.len();
                o
            })
            .collect()
    }

    /// All tokens in document order (sentence-major).
    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flatten()
    }

    pub fn token(&self, sentence: usize, index: usize) -> &Token {
        &self.sentences[sentence][index]
    }

    /// Mentions sorted by document order (sentence, start, end, id).
    pub fn mentions_in_order(&self) -> Vec<Mention> {
        let mut ms = self.mentions.clone();
        ms.sort_by_key(|m| (m.sentence_index, m.start, m.end, m.id));
        ms
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("document serialization is infallible")
    }

    pub fn from_canonical_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Checks every structural invariant of a document, returning the first
/// violation.
pub fn validate_document(doc: &Document) -> Result<(), CorpusError> {
    let id = doc.id.as_str();
    if doc.trees.len() != doc.sentences.len() {
        return Err(CorpusError::TreeMismatch {
            loc: Location::doc(id),
        });
    }
    for (si, (tokens, tree)) in doc.sentences.iter().zip(&doc.trees).enumerate() {
        let rebuilt = ParseTree::from_tokens(id, si, tokens)?;
        if &rebuilt != tree {
            return Err(CorpusError::TreeMismatch {
                loc: Location::sentence(id, si),
            });
        }
    }
    let mut ids = HashSet::new();
    for m in &doc.mentions {
        let loc = Location::sentence(id, m.sentence_index);
        if !ids.insert(m.id) {
            return Err(CorpusError::DuplicateMentionId { loc, mention: m.id });
        }
        let len = doc.sentences.get(m.sentence_index).map(Vec::len);
        let ok = match len {
            Some(len) => {
                m.start <= m.end && m.end < len && (m.start..=m.end).contains(&m.head_token)
            }
            None => false,
        };
        if !ok {
            return Err(CorpusError::BadMentionSpan { loc, mention: m.id });
        }
    }
    if let Some(chains) = &doc.gold_chains {
        chains.check(id, &ids)?;
    }
    Ok(())
}
