//! Deterministic instruction-tuning data pipeline and evaluation engine.
//!
//! The crate covers the data side of multi-task instruction tuning and the
//! evaluation side of model selection:
//!
//! * [`corpus`]: task registry, ingestion, example caps, generalization splits
//! * [`prompting`]: template rendering, delimiters, demonstrations, MetaICL
//! * [`dedup`]: 13-gram train/eval overlap detection
//! * [`mixture`]: EPS weights, benchmark proportions, auxiliary data, streams
//! * [`packing`]: tokenization, packing, document masks, label loss
//! * [`eval`]: scorers, metrics, validation sampling, aggregation
//!
//! Every sampling operation is a pure function of its inputs and a `u64`
//! seed.

pub mod corpus;
pub mod dedup;
pub mod error;
pub mod eval;
pub mod mixture;
pub mod packing;
pub mod prompting;
pub mod seed;
pub mod tokenizer;

pub use corpus::{
    assign_splits, cap_examples, registry_stats, Benchmark, GeneralizationLevel, InstructionStyle, Manifest,
    ManifestTask, RawRecord, Registry, Split, SplitPlan, Task, TaskKey, TaskSpec,
};
pub use dedup::{dedup_report, overlap_fraction, shingle, OverlapEntry, ShingleSet};
pub use error::{Error, Result};
pub use eval::{aggregate, EvalReport, LeafScore, Metric, Scorer};
pub use mixture::{MixtureConfig, MixtureStream, SamplingWeights};
pub use packing::{PackedSequence, TokenizedExample};
pub use prompting::{DelimiterSet, LossVariant, MetaIclConfig, PromptTemplate, RenderedExample, Span};
pub use tokenizer::{ByteTokenizer, TokenId, Tokenizer};
