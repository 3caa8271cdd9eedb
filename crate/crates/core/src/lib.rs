//! Label-only dataset inference.
//!
//! Given a suspicious dataset and a validation dataset known to be unseen by
//! a target model, the audit fine-tunes the model on part of each, measures
//! how much its top-1 completions on the held-out prompts shift, and tests
//! whether the suspicious shifts differ from the validation shifts. Models
//! that once saw the suspicious data recover it under fine-tuning and shift
//! more. Only generated text is consumed; no probabilities or logits.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod scenario;
pub mod similarity;
pub mod stats;
mod text;

pub use corpus::{
    CorpusBundle, CorpusFormat, PairMode, PairOptions, PairRecord, SplitPlan, TextRecord,
};
pub use error::{Error, Result};
pub use evaluation::{LabeledOutcome, MetricsSummary};
pub use inference::{
    AuditConfig, AuditInput, AuditReport, Auditor, DecidedBy, Decision, FinetuneMode,
    MembershipLabel,
};
pub use model::{ClientOptions, Hyperparams, ModelClient, ModelRef};
pub use similarity::{DatasetTag, Metric, ScoreSet, Scorer};
pub use stats::{KsMode, KsResult, Tail};
pub use text::{normalize, tokens};
