//! HTTP clients for the judge and solve-rate endpoints.
//!
//! Wire format follows the completions-API convention: the request carries
//! the model name, a rendered prompt, `max_tokens`, and (for the judge) a
//! `logprobs` parameter; the response carries choices with per-token
//! log-probability entries. A bearer token is read from `COTSEL_API_TOKEN`
//! when present.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    cache_key, softmax_two, DifficultyLabel, DifficultyScore, JudgeConfig, ScoreCache,
    ScoreError, ScoreSource, SolveRateConfig, AUTH_TOKEN_ENV,
};
use crate::corpus::{InstructionRecord, RecordId};
use crate::verifier::{answers_equal, extract_boxed, ExtractedAnswer, DEFAULT_REL_TOL};

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<usize>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<LogprobBlock>,
}

#[derive(Deserialize)]
struct LogprobBlock {
    #[serde(default)]
    top_logprobs: Vec<HashMap<String, f64>>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn auth_token() -> Option<String> {
    std::env::var(AUTH_TOKEN_ENV).ok().filter(|t| !t.is_empty())
}

/// Sends one POST with retries. Transport failures and retryable statuses
/// (408, 429, 5xx) back off exponentially with jitter; anything else fails
/// fast as a protocol error.
fn post_with_retries(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &Value,
    retries: usize,
    backoff_base: Duration,
    record_id: &RecordId,
) -> Result<Value, ScoreError> {
    let attempts = retries + 1;
    let mut last_reason = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            let factor = 1u32 << (attempt - 1).min(16);
            let base = backoff_base.saturating_mul(factor);
            let jitter_ms = if backoff_base.as_millis() > 0 {
                rand::thread_rng().gen_range(0..=backoff_base.as_millis() as u64)
            } else {
                0
            };
            std::thread::sleep(base + Duration::from_millis(jitter_ms));
        }
        let mut request = client.post(url).json(body);
        if let Some(token) = auth_token() {
            request = request.bearer_auth(token);
        }
        match request.send() {
            Ok(response) => {
                let status = response.status();
                if status.is_success() {
                    return response
                        .json::<Value>()
                        .map_err(|e| ScoreError::Protocol(format!("response is not JSON: {e}")));
                }
                let retryable = status.as_u16() == 408
                    || status.as_u16() == 429
                    || status.is_server_error();
                if !retryable {
                    return Err(ScoreError::Protocol(format!("endpoint returned {status}")));
                }
                last_reason = format!("HTTP {status}");
            }
            Err(e) => {
                last_reason = e.to_string();
            }
        }
    }
    Err(ScoreError::Exhausted {
        record_id: record_id.to_string(),
        attempts,
        reason: last_reason,
    })
}

/// Blocking judge-endpoint client.
pub struct JudgeClient {
    cfg: JudgeConfig,
    http: reqwest::blocking::Client,
}

impl JudgeClient {
    pub fn new(cfg: JudgeConfig) -> Result<Self, ScoreError> {
        cfg.validate().map_err(ScoreError::Protocol)?;
        let http = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| ScoreError::Protocol(e.to_string()))?;
        Ok(JudgeClient { cfg, http })
    }

    pub fn config(&self) -> &JudgeConfig {
        &self.cfg
    }

    /// Scores one question: requests next-token log-probabilities for the
    /// rendered prompt, reads the positive/negative token entries from the
    /// top-logprob list, and applies the two-way softmax. Tokens absent from
    /// the list are floored at (smallest returned logprob − floor_margin)
    /// and the score is flagged.
    pub fn judge_difficulty(
        &self,
        record_id: &RecordId,
        question: &str,
    ) -> Result<DifficultyScore, ScoreError> {
        let prompt = self.cfg.render_prompt(question);
        let body = serde_json::to_value(CompletionRequest {
            model: &self.cfg.model_name,
            prompt: &prompt,
            max_tokens: 1,
            temperature: 0.0,
            n: 1,
            top_p: None,
            logprobs: Some(self.cfg.top_logprobs),
        })
        .expect("request serializes");
        let raw = post_with_retries(
            &self.http,
            &self.cfg.endpoint_url,
            &body,
            self.cfg.retries,
            self.cfg.backoff_base,
            record_id,
        )?;
        let response: CompletionResponse = serde_json::from_value(raw)
            .map_err(|e| ScoreError::Protocol(format!("unexpected completion shape: {e}")))?;
        let top = response
            .choices
            .first()
            .and_then(|c| c.logprobs.as_ref())
            .and_then(|lp| lp.top_logprobs.first())
            .ok_or_else(|| ScoreError::Protocol("no top_logprobs in response".into()))?;
        if top.is_empty() {
            return Err(ScoreError::Protocol("empty top_logprobs entry".into()));
        }
        let smallest = top.values().fold(f64::INFINITY, |a, &b| a.min(b));
        let floor = smallest - self.cfg.floor_margin;
        let mut floored = false;
        let mut lookup = |token: &str| match top.get(token) {
            Some(&lp) => lp,
            None => {
                floored = true;
                floor
            }
        };
        let logp_pos = lookup(&self.cfg.positive_token);
        let logp_neg = lookup(&self.cfg.negative_token);
        let value = softmax_two(logp_pos, logp_neg)?;
        Ok(DifficultyScore {
            record_id: record_id.clone(),
            value,
            logp_pos: Some(logp_pos),
            logp_neg: Some(logp_neg),
            source: ScoreSource::Judge,
            model_name: self.cfg.model_name.clone(),
            created_at: now_unix(),
            floored,
        })
    }
}

/// Outcome of a batch scoring run.
#[derive(Debug, Default)]
pub struct BatchSummary {
    pub scored: usize,
    pub cached: usize,
    pub failed: usize,
    /// (record id, reason) for each failure, in id order.
    pub failures: Vec<(RecordId, String)>,
}

impl BatchSummary {
    pub fn attempted(&self) -> usize {
        self.scored + self.failed
    }
}

/// Scores a batch of questions against the judge endpoint with at most
/// `max_inflight` outstanding requests.
///
/// Cached entries are returned without touching the network unless
/// `rescore` is set. Per-record failures are collected, not fatal: the
/// caller decides what a fully-failed batch means. Results are keyed by
/// record id, so the outcome is independent of worker interleaving; cache
/// writes happen on the calling thread only.
pub fn score_batch_judge(
    items: &[(RecordId, String)],
    cfg: &JudgeConfig,
    cache: &mut ScoreCache,
    rescore: bool,
) -> Result<BatchSummary, ScoreError> {
    let client = JudgeClient::new(cfg.clone())?;
    let mut summary = BatchSummary::default();

    let mut pending: Vec<(usize, &RecordId, &str, String)> = Vec::new();
    for (i, (record_id, question)) in items.iter().enumerate() {
        let key = cache_key(question, &cfg.model_name, &cfg.prompt_template);
        if !rescore && cache.get(&key).is_some() {
            summary.cached += 1;
            continue;
        }
        pending.push((i, record_id, question.as_str(), key));
    }

    let next = AtomicUsize::new(0);
    type JudgeResult = Result<DifficultyScore, ScoreError>;
    let (tx, rx) = mpsc::channel::<(usize, JudgeResult)>();
    let workers = cfg.max_inflight.min(pending.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let pending = &pending;
            let client = &client;
            scope.spawn(move || loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= pending.len() {
                    break;
                }
                let (_, record_id, question, _) = &pending[idx];
                let result = client.judge_difficulty(record_id, question);
                if tx.send((idx, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
    });

    let mut results: Vec<Option<JudgeResult>> = (0..pending.len()).map(|_| None).collect();
    for (idx, result) in rx {
        results[idx] = Some(result);
    }

    // Single-writer cache update in deterministic (input) order.
    for ((_, record_id, _, key), slot) in pending.iter().zip(results) {
        match slot.expect("every pending item reports") {
            Ok(score) => {
                cache.put(key.clone(), score)?;
                summary.scored += 1;
            }
            Err(e) => {
                summary.failed += 1;
                summary.failures.push(((*record_id).clone(), e.to_string()));
            }
        }
    }
    summary.failures.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(summary)
}

/// Outcome of a solve-rate batch: the scoring summary, per-record easy/hard
/// labels in id order, and how many records were skipped for missing gold.
#[derive(Debug, Default)]
pub struct SolveRateBatch {
    pub summary: BatchSummary,
    pub labels: Vec<(RecordId, DifficultyLabel, f64)>,
    pub skipped_missing_gold: usize,
}

/// Scores records by base-model solve rate with bounded parallelism.
///
/// Same batching contract as [`score_batch_judge`]; additionally returns the
/// easy/hard labels for judge-dataset construction. Records without a gold
/// answer are counted as skipped, not failed.
pub fn score_batch_solve_rate(
    records: &[InstructionRecord],
    cfg: &SolveRateConfig,
    cache: &mut ScoreCache,
    rescore: bool,
) -> Result<SolveRateBatch, ScoreError> {
    let client = SolveRateClient::new(cfg.clone())?;
    let mut summary = BatchSummary::default();
    let mut labels: Vec<(RecordId, DifficultyLabel, f64)> = Vec::new();
    let mut skipped_missing_gold = 0usize;

    let mut pending: Vec<(&InstructionRecord, String)> = Vec::new();
    for record in records {
        if record.gold_answer.is_none() {
            skipped_missing_gold += 1;
            log::warn!("record {} has no gold answer; skipped", record.id);
            continue;
        }
        let key = cache_key(&record.question, &cfg.model_name, &cfg.prompt_template);
        if !rescore {
            if let Some(score) = cache.get(&key) {
                summary.cached += 1;
                let fraction = 1.0 - score.value;
                let label = if fraction <= cfg.hard_threshold {
                    DifficultyLabel::Hard
                } else {
                    DifficultyLabel::Easy
                };
                labels.push((record.id.clone(), label, fraction));
                continue;
            }
        }
        pending.push((record, key));
    }

    let next = AtomicUsize::new(0);
    type SolveResult = Result<(DifficultyLabel, f64, DifficultyScore), ScoreError>;
    let (tx, rx) = mpsc::channel::<(usize, SolveResult)>();
    let workers = cfg.max_inflight.min(pending.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let pending = &pending;
            let client = &client;
            scope.spawn(move || loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= pending.len() {
                    break;
                }
                let result = client.solve_rate_label(pending[idx].0);
                if tx.send((idx, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
    });

    let mut results: Vec<Option<SolveResult>> = (0..pending.len()).map(|_| None).collect();
    for (idx, result) in rx {
        results[idx] = Some(result);
    }
    for ((record, key), slot) in pending.iter().zip(results) {
        match slot.expect("every pending item reports") {
            Ok((label, fraction, score)) => {
                cache.put(key.clone(), score)?;
                labels.push((record.id.clone(), label, fraction));
                summary.scored += 1;
            }
            Err(e) => {
                summary.failed += 1;
                summary.failures.push((record.id.clone(), e.to_string()));
            }
        }
    }
    summary.failures.sort_by(|a, b| a.0.cmp(&b.0));
    labels.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(SolveRateBatch {
        summary,
        labels,
        skipped_missing_gold,
    })
}

/// Blocking solve-rate client: sample solutions, verify them, label the
/// record easy or hard.
pub struct SolveRateClient {
    cfg: SolveRateConfig,
    http: reqwest::blocking::Client,
}

impl SolveRateClient {
    pub fn new(cfg: SolveRateConfig) -> Result<Self, ScoreError> {
        if cfg.n_samples == 0 {
            return Err(ScoreError::Protocol("n_samples must be at least 1".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| ScoreError::Protocol(e.to_string()))?;
        Ok(SolveRateClient { cfg, http })
    }

    pub fn config(&self) -> &SolveRateConfig {
        &self.cfg
    }

    /// Samples `n_samples` solutions, verifies each against the record's
    /// gold answer, and labels the record hard when the solved fraction is
    /// at or below `hard_threshold`. Also returns the 1 − solved_fraction
    /// difficulty score.
    pub fn solve_rate_label(
        &self,
        record: &InstructionRecord,
    ) -> Result<(DifficultyLabel, f64, DifficultyScore), ScoreError> {
        let gold_raw = record
            .gold_answer
            .as_deref()
            .ok_or_else(|| ScoreError::MissingGold(record.id.to_string()))?;
        let gold = ExtractedAnswer::from_raw(gold_raw);
        let prompt = self.cfg.prompt_template.replace("{question}", &record.question);
        let body = serde_json::to_value(CompletionRequest {
            model: &self.cfg.model_name,
            prompt: &prompt,
            max_tokens: self.cfg.max_output_tokens,
            temperature: self.cfg.temperature,
            n: self.cfg.n_samples,
            top_p: Some(self.cfg.top_p),
            logprobs: None,
        })
        .expect("request serializes");
        let raw = post_with_retries(
            &self.http,
            &self.cfg.endpoint_url,
            &body,
            self.cfg.retries,
            self.cfg.backoff_base,
            &record.id,
        )?;
        let response: CompletionResponse = serde_json::from_value(raw)
            .map_err(|e| ScoreError::Protocol(format!("unexpected completion shape: {e}")))?;
        if response.choices.is_empty() {
            return Err(ScoreError::Protocol("no choices in response".into()));
        }
        let solved = response
            .choices
            .iter()
            .filter(|c| answers_equal(&extract_boxed(&c.text), &gold, DEFAULT_REL_TOL))
            .count();
        let solved_fraction = solved as f64 / response.choices.len() as f64;
        let label = if solved_fraction <= self.cfg.hard_threshold {
            DifficultyLabel::Hard
        } else {
            DifficultyLabel::Easy
        };
        let score = DifficultyScore {
            record_id: record.id.clone(),
            value: 1.0 - solved_fraction,
            logp_pos: None,
            logp_neg: None,
            source: ScoreSource::SolveRate,
            model_name: self.cfg.model_name.clone(),
            created_at: now_unix(),
            floored: false,
        };
        Ok((label, solved_fraction, score))
    }
}
