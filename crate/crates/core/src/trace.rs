//! Reasoning-trace parsing and metrics.
//!
//! Responses in long chain-of-thought pools wrap the reasoning trace in think
//! delimiters, followed by the visible answer. This module splits responses
//! into trace and answer, segments traces into steps at blank-line
//! boundaries, and counts rethinking keywords ("Wait", "Alternatively", ...)
//! that mark self-correction and backtracking behaviour.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::InstructionRecord;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("length unit `tokens` requires a configured segmenter")]
    NoSegmenter,
    #[error("think delimiters must be non-empty and distinct")]
    BadDelimiters,
}

/// Result of splitting a raw response at think delimiters.
///
/// A response is well-formed when it starts with the open delimiter and
/// contains exactly one open and one close, in that order. Anything else
/// (missing tags, repeated tags, text before the open tag) is `malformed`:
/// the trace is absent and the whole response is kept as the answer section,
/// so no bytes are ever dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub trace: Option<String>,
    pub answer_section: String,
    pub malformed: bool,
}

/// Lexicon of rethinking keywords. Matching is case-sensitive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RethinkLexicon {
    pub keywords: Vec<String>,
    pub match_mode: MatchMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// Count whole-word occurrences anywhere in the trace.
    WordBoundary,
    /// Count steps whose first word is the keyword.
    PrefixOfStep,
}

impl Default for RethinkLexicon {
    fn default() -> Self {
        RethinkLexicon {
            keywords: ["Wait", "Alternatively", "Maybe", "However"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            match_mode: MatchMode::WordBoundary,
        }
    }
}

impl RethinkLexicon {
    /// Validates the lexicon invariants: non-empty, no duplicate keywords.
    pub fn validate(&self) -> Result<(), String> {
        if self.keywords.is_empty() {
            return Err("lexicon has no keywords".into());
        }
        let mut seen = std::collections::HashSet::new();
        for kw in &self.keywords {
            if kw.is_empty() {
                return Err("lexicon contains an empty keyword".into());
            }
            if !seen.insert(kw.as_str()) {
                return Err(format!("duplicate keyword `{kw}`"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    Chars,
    Words,
    Tokens,
}

/// Pluggable token segmenter for `LengthUnit::Tokens`.
pub trait Segmenter: Send + Sync {
    fn count_tokens(&self, text: &str) -> usize;
    fn name(&self) -> &'static str;
}

/// Whitespace segmenter: tokens are maximal non-whitespace runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceSegmenter;

impl Segmenter for WhitespaceSegmenter {
    fn count_tokens(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
    fn name(&self) -> &'static str {
        "whitespace"
    }
}

/// Word-punct segmenter: alphanumeric runs count as one token each, every
/// other non-whitespace char counts on its own. A rough but deterministic
/// proxy for subword token counts.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunctSegmenter;

impl Segmenter for WordPunctSegmenter {
    fn count_tokens(&self, text: &str) -> usize {
        let mut count = 0;
        let mut in_word = false;
        for c in text.chars() {
            if c.is_whitespace() {
                in_word = false;
            } else if c.is_alphanumeric() {
                if !in_word {
                    count += 1;
                    in_word = true;
                }
            } else {
                count += 1;
                in_word = false;
            }
        }
        count
    }
    fn name(&self) -> &'static str {
        "wordpunct"
    }
}

/// Per-record trace metrics: lengths, step count and rethinking counts.
///
/// `keyword_counts` holds word-boundary occurrences anywhere in the trace;
/// `prefix_counts` holds the steps-that-begin-with-keyword reading. Both are
/// always computed so downstream consumers can pick either.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub has_trace: bool,
    pub malformed: bool,
    pub char_len: usize,
    pub word_len: usize,
    pub token_len: usize,
    pub step_count: usize,
    pub keyword_counts: BTreeMap<String, usize>,
    pub prefix_counts: BTreeMap<String, usize>,
    pub rethink_total: usize,
    pub rethink_density: f64,
}

impl TraceMetrics {
    /// All-zero metrics for records without a usable trace.
    pub fn zero(lexicon: &RethinkLexicon, malformed: bool) -> Self {
        let zeros: BTreeMap<String, usize> =
            lexicon.keywords.iter().map(|k| (k.clone(), 0)).collect();
        TraceMetrics {
            has_trace: false,
            malformed,
            char_len: 0,
            word_len: 0,
            token_len: 0,
            step_count: 0,
            keyword_counts: zeros.clone(),
            prefix_counts: zeros,
            rethink_total: 0,
            rethink_density: 0.0,
        }
    }
}

/// Splits `raw_response` at the think delimiters.
///
/// Well-formed responses start with `open` and contain exactly one `open`
/// and one `close`, with `open` before `close`. The trace is the text
/// strictly between them, so `open + trace + close + answer_section`
/// reconstructs the input byte for byte.
pub fn parse_think_tags(raw_response: &str, open: &str, close: &str) -> ParsedResponse {
    debug_assert!(!open.is_empty() && !close.is_empty() && open != close);
    let malformed = ParsedResponse {
        trace: None,
        answer_section: raw_response.to_string(),
        malformed: true,
    };
    if !raw_response.starts_with(open) {
        return malformed;
    }
    if count_occurrences(raw_response, open) != 1 || count_occurrences(raw_response, close) != 1 {
        return malformed;
    }
    let after_open = &raw_response[open.len()..];
    match after_open.find(close) {
        Some(pos) => ParsedResponse {
            trace: Some(after_open[..pos].to_string()),
            answer_section: after_open[pos + close.len()..].to_string(),
            malformed: false,
        },
        None => malformed,
    }
}

fn count_occurrences(haystack: &str, needle: &str) -> usize {
    let mut count = 0;
    let mut rest = haystack;
    while let Some(pos) = rest.find(needle) {
        count += 1;
        rest = &rest[pos + needle.len()..];
    }
    count
}

/// Splits a trace into steps at blank-line boundaries (runs of two or more
/// newlines). Steps are trimmed; empty fragments are dropped.
pub fn segment_steps(trace: &str) -> Vec<String> {
    let mut steps = Vec::new();
    let mut current = String::new();
    let mut newline_run = 0;
    for c in trace.chars() {
        if c == '\n' {
            newline_run += 1;
            if newline_run < 2 {
                current.push(c);
            } else if newline_run == 2 {
                // boundary: retract the single newline already pushed
                current.pop();
                flush_step(&mut steps, &mut current);
            }
        } else {
            newline_run = 0;
            current.push(c);
        }
    }
    flush_step(&mut steps, &mut current);
    steps
}

fn flush_step(steps: &mut Vec<String>, current: &mut String) {
    let trimmed = current.trim();
    if !trimmed.is_empty() {
        steps.push(trimmed.to_string());
    }
    current.clear();
}

/// Counts keyword occurrences in a trace, one entry per lexicon keyword.
pub fn count_rethinking(trace: &str, lexicon: &RethinkLexicon) -> BTreeMap<String, usize> {
    match lexicon.match_mode {
        MatchMode::WordBoundary => lexicon
            .keywords
            .iter()
            .map(|kw| (kw.clone(), count_word_boundary(trace, kw)))
            .collect(),
        MatchMode::PrefixOfStep => {
            let steps = segment_steps(trace);
            count_step_prefixes(&steps, lexicon)
        }
    }
}

/// Whole-word occurrences: the chars adjacent to the match, if any, must not
/// be alphanumeric. Case-sensitive, non-overlapping.
fn count_word_boundary(text: &str, keyword: &str) -> usize {
    if keyword.is_empty() {
        return 0;
    }
    let mut count = 0;
    let mut offset = 0;
    while let Some(pos) = text[offset..].find(keyword) {
        let start = offset + pos;
        let end = start + keyword.len();
        let before_ok = text[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = text[end..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            count += 1;
            offset = end;
        } else {
            // advance one char so an adjacent valid match is not skipped
            let step = text[start..].chars().next().map_or(1, |c| c.len_utf8());
            offset = start + step;
        }
    }
    count
}

/// Steps whose first word is the keyword: the step starts with it and the
/// next char, if any, is not alphanumeric. "Wait, …" matches keyword "Wait";
/// "Waiting …" does not. The rule needs no whitespace after the keyword, so
/// it also works for scripts without word separators.
fn count_step_prefixes(steps: &[String], lexicon: &RethinkLexicon) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> =
        lexicon.keywords.iter().map(|k| (k.clone(), 0)).collect();
    for step in steps {
        for kw in &lexicon.keywords {
            if let Some(rest) = step.strip_prefix(kw.as_str()) {
                if rest.chars().next().is_none_or(|c| !c.is_alphanumeric()) {
                    *counts.get_mut(kw).expect("keyword present") += 1;
                }
            }
        }
    }
    counts
}

/// Measures trace length in the requested unit. Absent traces measure 0.
pub fn measure_length(
    trace: Option<&str>,
    unit: LengthUnit,
    segmenter: Option<&dyn Segmenter>,
) -> Result<usize, TraceError> {
    let text = match trace {
        Some(t) => t,
        None => return Ok(0),
    };
    match unit {
        LengthUnit::Chars => Ok(text.chars().count()),
        LengthUnit::Words => Ok(text.split_whitespace().count()),
        LengthUnit::Tokens => segmenter
            .map(|s| s.count_tokens(text))
            .ok_or(TraceError::NoSegmenter),
    }
}

/// Computes the full metrics bundle for one record.
///
/// `token_len` uses the segmenter when one is configured and falls back to
/// the word count otherwise. Records without a trace get all-zero metrics.
pub fn compute_metrics(
    record: &InstructionRecord,
    lexicon: &RethinkLexicon,
    segmenter: Option<&dyn Segmenter>,
) -> TraceMetrics {
    let trace = match &record.trace {
        Some(t) => t.as_str(),
        None => return TraceMetrics::zero(lexicon, true),
    };
    let steps = segment_steps(trace);
    let wb_lexicon = RethinkLexicon {
        keywords: lexicon.keywords.clone(),
        match_mode: MatchMode::WordBoundary,
    };
    let keyword_counts = count_rethinking(trace, &wb_lexicon);
    let prefix_counts = count_step_prefixes(&steps, lexicon);
    let rethink_total: usize = keyword_counts.values().sum();
    let step_count = steps.len();
    let word_len = trace.split_whitespace().count();
    let token_len = match segmenter {
        Some(s) => s.count_tokens(trace),
        None => word_len,
    };
    TraceMetrics {
        has_trace: true,
        malformed: false,
        char_len: trace.chars().count(),
        word_len,
        token_len,
        step_count,
        keyword_counts,
        prefix_counts,
        rethink_total,
        rethink_density: rethink_total as f64 / step_count.max(1) as f64,
    }
}
