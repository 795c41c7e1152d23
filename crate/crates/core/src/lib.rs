//! Prompt-prefixed sequence-to-sequence NER without a neural backend:
//! the entity registry, corpora, the source/target codec, prompt
//! strategies, multi-dataset sampling, adaptation examples and scoring.

pub mod adapt;
pub mod codec;
pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod prompting;
pub mod sampler;
pub mod schema;
pub mod trace;

pub use codec::{ground_pairs, Codec, ParseMode, Parsed, Payload, PromptedExample, TypedPair};
pub use corpus::{AnnotatedSentence, CorpusSplit, Mention};
pub use error::{Error, Result};
pub use evalkit::{aggregate, score_sentence, EvalReport, Evaluation, MatchCounts, MatchMode};
pub use prompting::{PromptStrategy, StrategyKind};
pub use sampler::{ExampleRef, SamplingKind, SamplingPolicy};
pub use schema::{load_registry, DatasetSpec, EntityType, NameStyle, Registry};
pub use trace::{select_adapt_checkpoint, select_joint_checkpoint, AdaptTrace, JointTrace};
