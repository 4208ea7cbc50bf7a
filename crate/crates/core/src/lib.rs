//! Coreference resolution over dependency-parsed documents.
//!
//! A document's tokens are embedded, enhanced with projected syntax
//! features, mixed with semantic-role values by cross-attention, and pooled
//! into mention vectors. A linear decoder scores every (mention, earlier
//! mention) pair and a greedy or beam resolver turns the scores into chains.

pub mod attention;
pub mod corpus;
pub mod embeddings;
pub mod metrics;
pub mod numeric;
pub mod resolver;
pub mod syntax;
pub mod training;

pub use attention::{AttentionError, AttentionParams, AttentionScores, Mechanism, SimilarityKind};
pub use corpus::{ChainSet, CorpusError, Document, Mention, ParseTree, Token};
pub use embeddings::{EmbeddingError, EmbeddingMatrix, ProviderConfig, ProviderKind};
pub use metrics::{MetricError, Scorer, Scores, PRF};
pub use resolver::{DecoderParams, PairScores, ResolutionConfig, ResolverError, Strategy};
pub use syntax::{Inventories, SyntaxError, SyntaxFeatures, SyntaxProjection};
pub use training::{Arm, ModelConfig, ModelParams, TrainConfig, TrainError, WeightsError};
