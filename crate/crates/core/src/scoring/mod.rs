//! Question-difficulty scoring.
//!
//! Two score sources share one output type:
//!
//! * **judge** — a judge model is prompted to answer with a positive or
//!   negative token ("1" / "0" by default); the two next-token
//!   log-probabilities are combined with a two-way softmax into a difficulty
//!   in [0, 1].
//! * **solve-rate** — a base model samples solutions which are verified
//!   against the gold answer; difficulty is 1 − solved_fraction and the
//!   record is labeled easy/hard for judge training.
//!
//! Scores are cached in an append-only line-delimited file keyed by a
//! content hash of (question, model, prompt template), so re-runs are free
//! and selection stays reproducible.

mod cache;
mod client;

pub use cache::{cache_key, ScoreCache};
pub use client::{
    score_batch_judge, score_batch_solve_rate, BatchSummary, JudgeClient, SolveRateBatch,
    SolveRateClient,
};

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RecordId;

/// Default judge prompt. `{question}` is replaced with the question text.
pub const DEFAULT_JUDGE_PROMPT: &str =
    "Please judge the difficulty of this instruction and return 1 if difficult or 0 if not.\n{question}";

/// Default solve-rate prompt, mirroring the evaluation system prompt.
pub const DEFAULT_SOLVE_PROMPT: &str =
    "Please reason step by step, and put your final answer within \\boxed{}.\n{question}";

/// Environment variable holding the optional endpoint bearer token.
pub const AUTH_TOKEN_ENV: &str = "COTSEL_API_TOKEN";

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("difficulty undefined: both token log-probabilities are -inf")]
    UndefinedScore,
    #[error("log-probabilities must be finite or -inf, got ({0}, {1})")]
    NonFiniteInput(f64, f64),
    #[error("endpoint request failed after {attempts} attempts for {record_id}: {reason}")]
    Exhausted {
        record_id: String,
        attempts: usize,
        reason: String,
    },
    #[error("malformed endpoint payload: {0}")]
    Protocol(String),
    #[error("record {0} has no gold answer; skipped")]
    MissingGold(String),
    #[error("cache I/O: {0}")]
    CacheIo(#[from] std::io::Error),
    #[error("judge dataset is empty")]
    EmptyDataset,
}

/// Two-way softmax over log-probabilities: exp(a) / (exp(a) + exp(b)),
/// computed shift-invariantly so large-magnitude inputs stay stable.
pub fn softmax_two(logp_pos: f64, logp_neg: f64) -> Result<f64, ScoreError> {
    let bad = |v: f64| v.is_nan() || v == f64::INFINITY;
    if bad(logp_pos) || bad(logp_neg) {
        return Err(ScoreError::NonFiniteInput(logp_pos, logp_neg));
    }
    if logp_pos == f64::NEG_INFINITY && logp_neg == f64::NEG_INFINITY {
        return Err(ScoreError::UndefinedScore);
    }
    let m = logp_pos.max(logp_neg);
    let ep = (logp_pos - m).exp();
    let en = (logp_neg - m).exp();
    Ok(ep / (ep + en))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreSource {
    Judge,
    SolveRate,
}

/// A difficulty score in [0, 1] with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyScore {
    pub record_id: RecordId,
    pub value: f64,
    pub logp_pos: Option<f64>,
    pub logp_neg: Option<f64>,
    pub source: ScoreSource,
    pub model_name: String,
    pub created_at: u64,
    /// True when a judge token was absent from the endpoint's top-logprob
    /// list and its log-probability was floored.
    #[serde(default)]
    pub floored: bool,
}

/// Judge endpoint configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub prompt_template: String,
    pub positive_token: String,
    pub negative_token: String,
    pub max_inflight: usize,
    #[serde(with = "duration_ms")]
    pub timeout: Duration,
    pub retries: usize,
    #[serde(with = "duration_ms")]
    pub backoff_base: Duration,
    /// How many top log-probabilities to request per token position.
    pub top_logprobs: usize,
    /// Log-prob penalty below the smallest returned entry for absent tokens.
    pub floor_margin: f64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            endpoint_url: String::new(),
            model_name: String::new(),
            prompt_template: DEFAULT_JUDGE_PROMPT.into(),
            positive_token: "1".into(),
            negative_token: "0".into(),
            max_inflight: 8,
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff_base: Duration::from_millis(250),
            top_logprobs: 20,
            floor_margin: std::f64::consts::LN_10,
        }
    }
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.positive_token == self.negative_token {
            return Err("positive_token and negative_token must differ".into());
        }
        if self.max_inflight == 0 {
            return Err("max_inflight must be at least 1".into());
        }
        if !self.prompt_template.contains("{question}") {
            return Err("prompt_template must contain a {question} slot".into());
        }
        Ok(())
    }

    pub fn render_prompt(&self, question: &str) -> String {
        self.prompt_template.replace("{question}", question)
    }
}

/// Base-model solve-rate configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveRateConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub prompt_template: String,
    pub n_samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: usize,
    /// Solved fraction at or below which a record is labeled hard.
    pub hard_threshold: f64,
    pub max_inflight: usize,
    #[serde(with = "duration_ms")]
    pub timeout: Duration,
    pub retries: usize,
    #[serde(with = "duration_ms")]
    pub backoff_base: Duration,
}

impl Default for SolveRateConfig {
    fn default() -> Self {
        SolveRateConfig {
            endpoint_url: String::new(),
            model_name: String::new(),
            prompt_template: DEFAULT_SOLVE_PROMPT.into(),
            n_samples: 1,
            temperature: 0.6,
            top_p: 0.95,
            max_output_tokens: 1024,
            hard_threshold: 0.0,
            max_inflight: 8,
            timeout: Duration::from_secs(120),
            retries: 3,
            backoff_base: Duration::from_millis(250),
        }
    }
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        (d.as_millis() as u64).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifficultyLabel {
    Easy,
    Hard,
}

/// One judge-training example: hard questions are labeled 1, easy 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeExample {
    pub question: String,
    pub label: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JudgeDatasetReport {
    pub hard: usize,
    pub easy: usize,
    pub deduplicated: usize,
    pub warnings: Vec<String>,
}

/// Maps (question, easy|hard) labels to 0/1 judge examples.
///
/// Duplicate questions collapse with last-label-wins; a single-class input
/// produces a warning since it cannot teach a discriminator much.
pub fn build_judge_dataset(
    labels: &[(String, DifficultyLabel)],
) -> Result<(Vec<JudgeExample>, JudgeDatasetReport), ScoreError> {
    if labels.is_empty() {
        return Err(ScoreError::EmptyDataset);
    }
    let mut order: Vec<String> = Vec::new();
    let mut final_label: std::collections::HashMap<String, DifficultyLabel> =
        std::collections::HashMap::new();
    let mut deduplicated = 0;
    for (question, label) in labels {
        if final_label.insert(question.clone(), *label).is_some() {
            deduplicated += 1;
        } else {
            order.push(question.clone());
        }
    }
    let examples: Vec<JudgeExample> = order
        .iter()
        .map(|q| JudgeExample {
            question: q.clone(),
            label: match final_label[q] {
                DifficultyLabel::Hard => 1,
                DifficultyLabel::Easy => 0,
            },
        })
        .collect();
    let hard = examples.iter().filter(|e| e.label == 1).count();
    let easy = examples.len() - hard;
    let mut warnings = Vec::new();
    if deduplicated > 0 {
        warnings.push(format!(
            "{deduplicated} duplicate question(s) collapsed, last label wins"
        ));
    }
    if hard == 0 || easy == 0 {
        warnings.push("judge dataset has a single class; the judge cannot learn a boundary".into());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((
        examples,
        JudgeDatasetReport {
            hard,
            easy,
            deduplicated,
            warnings,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry_point() {
        assert_eq!(softmax_two(-3.7, -3.7).unwrap(), 0.5);
        assert_eq!(softmax_two(0.0, 0.0).unwrap(), 0.5);
    }

    #[test]
    fn softmax_limit_cases() {
        assert_eq!(softmax_two(0.0, f64::NEG_INFINITY).unwrap(), 1.0);
        assert_eq!(softmax_two(f64::NEG_INFINITY, 0.0).unwrap(), 0.0);
        assert!(matches!(
            softmax_two(f64::NEG_INFINITY, f64::NEG_INFINITY),
            Err(ScoreError::UndefinedScore)
        ));
        assert!(softmax_two(f64::NAN, 0.0).is_err());
        assert!(softmax_two(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn softmax_hand_case() {
        let v = softmax_two(-0.2231, -1.6094).unwrap();
        assert!((v - 0.8000).abs() < 1e-4, "got {v}");
    }

    #[test]
    fn softmax_complement_identity() {
        for (a, b) in [(-0.1, -5.0), (-700.0, -701.0), (-1e-9, -2.0), (3.0, -3.0)] {
            let s = softmax_two(a, b).unwrap() + softmax_two(b, a).unwrap();
            assert!((s - 1.0).abs() < 1e-12, "complement failed for ({a}, {b})");
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        for shift in [-1000.0, -3.5, 0.0, 2.25, 500.0] {
            let base = softmax_two(-0.4, -1.9).unwrap();
            let shifted = softmax_two(-0.4 + shift, -1.9 + shift).unwrap();
            assert!((base - shifted).abs() < 1e-12);
        }
    }

    #[test]
    fn judge_dataset_mapping() {
        let labels = vec![
            ("q1".to_string(), DifficultyLabel::Hard),
            ("q2".to_string(), DifficultyLabel::Easy),
        ];
        let (examples, report) = build_judge_dataset(&labels).unwrap();
        assert_eq!(examples[0].label, 1);
        assert_eq!(examples[1].label, 0);
        assert_eq!((report.hard, report.easy), (1, 1));
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn judge_dataset_single_class_warns() {
        let labels: Vec<_> = (0..100)
            .map(|i| (format!("q{i}"), DifficultyLabel::Hard))
            .collect();
        let (examples, report) = build_judge_dataset(&labels).unwrap();
        assert_eq!(examples.len(), 100);
        assert!(report.warnings.iter().any(|w| w.contains("single class")));
    }

    #[test]
    fn judge_dataset_dedupes_last_label_wins() {
        let labels = vec![
            ("q".to_string(), DifficultyLabel::Easy),
            ("q".to_string(), DifficultyLabel::Hard),
        ];
        let (examples, report) = build_judge_dataset(&labels).unwrap();
        assert_eq!(examples.len(), 1);
        assert_eq!(examples[0].label, 1);
        assert_eq!(report.deduplicated, 1);
    }

    #[test]
    fn judge_dataset_empty_is_fatal() {
        assert!(matches!(
            build_judge_dataset(&[]),
            Err(ScoreError::EmptyDataset)
        ));
    }

    #[test]
    fn prompt_render() {
        let cfg = JudgeConfig {
            prompt_template: "Rate this: {question} now".into(),
            ..JudgeConfig::default()
        };
        assert_eq!(cfg.render_prompt("2+2?"), "Rate this: 2+2? now");
    }

    #[test]
    fn config_validation() {
        let mut cfg = JudgeConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.negative_token = "1".into();
        assert!(cfg.validate().is_err());
    }
}
