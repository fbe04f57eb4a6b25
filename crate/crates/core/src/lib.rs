//! Selection toolkit for long chain-of-thought instruction pools.
//!
//! The pipeline: ingest a pool of (question, reasoning trace, answer)
//! records, measure trace lengths and rethinking-keyword usage, score
//! question difficulty through a judge endpoint or base-model solve rates,
//! combine difficulty and length ranks with a weighted joint ranker, and
//! emit the top-K subset as a training-ready file — plus the evaluation
//! metrics (Pass@1, Maj@k) and descriptive statistics to sanity-check the
//! result.

pub mod corpus;
pub mod hash;
pub mod metrics_io;
pub mod ranking;
pub mod report;
pub mod scoring;
pub mod trace;
pub mod verifier;

pub use corpus::{CorpusError, CorpusStats, FieldMapping, InstructionRecord, RecordId};
pub use ranking::{KSpec, RankEntry, Selection, SelectionSpec, Strategy};
pub use scoring::{DifficultyScore, JudgeConfig, ScoreCache, SolveRateConfig};
pub use trace::{LengthUnit, RethinkLexicon, TraceMetrics};
pub use verifier::{EvalSample, ExtractedAnswer, Verdict};
