//! Instruction-pool ingestion, validation, deduplication and re-emission.
//!
//! Pools are line-delimited JSON, one record per line, with source field
//! names configurable through [`FieldMapping`]. The reader streams: memory
//! use is bounded by the largest single line, not the pool size. Malformed
//! lines are counted and skipped, never fatal mid-stream.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::hash::content_hash;
use crate::trace::parse_think_tags;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open pool file {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no parseable records in pool{}", first_failure.as_ref().map(|f| format!(" (first failure: {f})")).unwrap_or_default())]
    NoRecords { first_failure: Option<String> },
    #[error("invalid field mapping: {0}")]
    BadMapping(String),
    #[error("record {id} has an empty {field}; cannot emit training file")]
    EmptyField { id: RecordId, field: &'static str },
}

/// Stable record identifier: either taken from the source pool or derived as
/// a 128-bit content hash of (question, raw_response).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(String);

impl RecordId {
    pub fn new(id: impl Into<String>) -> Self {
        RecordId(id.into())
    }

    pub fn from_content(question: &str, raw_response: &str) -> Self {
        RecordId(content_hash(&[question, raw_response]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One pool item in canonical form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionRecord {
    pub id: RecordId,
    pub question: String,
    pub raw_response: String,
    /// Content between the think delimiters; absent when tags are missing or
    /// unbalanced (the record is retained and flagged, not dropped).
    pub trace: Option<String>,
    /// Content after the closing delimiter; the whole response when no trace
    /// was recognized.
    pub answer_section: String,
    pub gold_answer: Option<String>,
    pub category: Option<String>,
    pub source: String,
}

/// Maps source-pool field names onto the canonical record shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldMapping {
    pub question_key: String,
    pub response_key: String,
    pub gold_key: String,
    pub category_key: String,
    pub id_key: String,
    pub think_open: String,
    pub think_close: String,
}

impl Default for FieldMapping {
    fn default() -> Self {
        FieldMapping {
            question_key: "question".into(),
            response_key: "response".into(),
            gold_key: "gold_answer".into(),
            category_key: "category".into(),
            id_key: "id".into(),
            think_open: "<think>".into(),
            think_close: "</think>".into(),
        }
    }
}

impl FieldMapping {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.question_key.is_empty() || self.response_key.is_empty() {
            return Err(CorpusError::BadMapping(
                "question_key and response_key must be non-empty".into(),
            ));
        }
        if self.think_open.is_empty() || self.think_close.is_empty() {
            return Err(CorpusError::BadMapping("think delimiters must be non-empty".into()));
        }
        if self.think_open == self.think_close {
            return Err(CorpusError::BadMapping("think delimiters must be distinct".into()));
        }
        Ok(())
    }
}

/// Pool-level counters from a validation pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub with_trace: usize,
    pub empty_trace: usize,
    pub missing_gold: usize,
    pub duplicate_ids: usize,
}

/// Streaming reader over a line-delimited pool file.
///
/// Yields records in file order. Malformed lines (bad JSON, missing required
/// keys) are skipped and counted; call [`PoolReader::skipped`] after the
/// stream is drained, or [`PoolReader::check_nonempty`] to turn a fully
/// unparseable pool into the fatal schema error it deserves.
pub struct PoolReader<R: BufRead> {
    lines: std::io::Lines<R>,
    mapping: FieldMapping,
    source_label: String,
    emitted: usize,
    skipped: usize,
    first_failure: Option<String>,
}

pub fn load_corpus(
    path: &Path,
    mapping: &FieldMapping,
) -> Result<PoolReader<BufReader<File>>, CorpusError> {
    mapping.validate()?;
    let file = File::open(path).map_err(|source| CorpusError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(PoolReader::new(
        BufReader::new(file),
        mapping.clone(),
        path.display().to_string(),
    ))
}

impl<R: BufRead> PoolReader<R> {
    pub fn new(reader: R, mapping: FieldMapping, source_label: String) -> Self {
        PoolReader {
            lines: reader.lines(),
            mapping,
            source_label,
            emitted: 0,
            skipped: 0,
            first_failure: None,
        }
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Fatal schema error when the drained stream produced zero records.
    pub fn check_nonempty(&self) -> Result<(), CorpusError> {
        if self.emitted == 0 {
            Err(CorpusError::NoRecords {
                first_failure: self.first_failure.clone(),
            })
        } else {
            Ok(())
        }
    }

    fn parse_line(&mut self, line: &str) -> Option<InstructionRecord> {
        let value: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                self.note_failure(format!("invalid JSON: {e}"));
                return None;
            }
        };
        let question = match string_field(&value, &self.mapping.question_key) {
            Some(q) => q,
            None => {
                self.note_failure(format!("missing key `{}`", self.mapping.question_key));
                return None;
            }
        };
        let raw_response = match string_field(&value, &self.mapping.response_key) {
            Some(r) => r,
            None => {
                self.note_failure(format!("missing key `{}`", self.mapping.response_key));
                return None;
            }
        };
        let id = match string_field(&value, &self.mapping.id_key) {
            Some(id) => RecordId::new(id),
            None => RecordId::from_content(&question, &raw_response),
        };
        let parsed = parse_think_tags(&raw_response, &self.mapping.think_open, &self.mapping.think_close);
        let source = string_field(&value, "source").unwrap_or_else(|| self.source_label.clone());
        Some(InstructionRecord {
            id,
            question,
            raw_response,
            trace: parsed.trace,
            answer_section: parsed.answer_section,
            gold_answer: string_field(&value, &self.mapping.gold_key),
            category: string_field(&value, &self.mapping.category_key),
            source,
        })
    }

    fn note_failure(&mut self, reason: String) {
        self.skipped += 1;
        if self.first_failure.is_none() {
            self.first_failure = Some(reason);
        }
    }
}

fn string_field(value: &Value, key: &str) -> Option<String> {
    match value.get(key) {
        Some(Value::String(s)) => Some(s.clone()),
        // Numeric ids and answers are common in the wild; render them.
        Some(Value::Number(n)) => Some(n.to_string()),
        _ => None,
    }
}

impl<R: BufRead> Iterator for PoolReader<R> {
    type Item = InstructionRecord;

    fn next(&mut self) -> Option<InstructionRecord> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.note_failure(format!("I/O error mid-stream: {e}"));
                    return None;
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            if let Some(record) = self.parse_line(&line) {
                self.emitted += 1;
                return Some(record);
            }
        }
    }
}

/// Exact pool counters. Never mutates records.
pub fn validate_pool<'a, I: IntoIterator<Item = &'a InstructionRecord>>(records: I) -> CorpusStats {
    let mut stats = CorpusStats::default();
    let mut seen_ids: HashSet<RecordId> = HashSet::new();
    for record in records {
        stats.total += 1;
        if let Some(trace) = &record.trace {
            stats.with_trace += 1;
            if trace.trim().is_empty() {
                stats.empty_trace += 1;
            }
        }
        if record.gold_answer.is_none() {
            stats.missing_gold += 1;
        }
        if !seen_ids.insert(record.id.clone()) {
            stats.duplicate_ids += 1;
        }
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DedupeKey {
    Id,
    QuestionHash,
}

/// Streaming first-occurrence-wins deduplication adaptor.
///
/// Drive it with `by_ref()` and read [`Dedupe::removed`] afterwards:
///
/// ```ignore
/// let mut dd = dedupe(records.into_iter(), DedupeKey::Id);
/// let kept: Vec<_> = dd.by_ref().collect();
/// let removed = dd.removed();
/// ```
pub struct Dedupe<I> {
    inner: I,
    key: DedupeKey,
    seen: HashSet<String>,
    removed: usize,
}

pub fn dedupe<I: Iterator<Item = InstructionRecord>>(records: I, key: DedupeKey) -> Dedupe<I> {
    Dedupe {
        inner: records,
        key,
        seen: HashSet::new(),
        removed: 0,
    }
}

impl<I> Dedupe<I> {
    pub fn removed(&self) -> usize {
        self.removed
    }
}

impl<I: Iterator<Item = InstructionRecord>> Iterator for Dedupe<I> {
    type Item = InstructionRecord;

    fn next(&mut self) -> Option<InstructionRecord> {
        loop {
            let record = self.inner.next()?;
            let key = match self.key {
                DedupeKey::Id => record.id.as_str().to_string(),
                DedupeKey::QuestionHash => content_hash(&[&record.question]),
            };
            if self.seen.insert(key) {
                return Some(record);
            }
            self.removed += 1;
        }
    }
}

#[derive(Serialize)]
struct CanonicalRow<'a> {
    id: &'a str,
    question: &'a str,
    response: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    gold_answer: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    category: Option<&'a str>,
    source: &'a str,
}

/// Re-emits records in the canonical pool format, full fidelity.
///
/// `load_corpus` with the default mapping reads these files back into
/// field-equal records, so ingest → emit → ingest round-trips.
pub fn write_pool<'a, I, W>(records: I, writer: &mut W) -> std::io::Result<usize>
where
    I: IntoIterator<Item = &'a InstructionRecord>,
    W: Write,
{
    let mut written = 0;
    for record in records {
        let row = CanonicalRow {
            id: record.id.as_str(),
            question: &record.question,
            response: &record.raw_response,
            gold_answer: record.gold_answer.as_deref(),
            category: record.category.as_deref(),
            source: &record.source,
        };
        serde_json::to_writer(&mut *writer, &row)?;
        writer.write_all(b"\n")?;
        written += 1;
    }
    Ok(written)
}

pub fn write_pool_file<'a, I>(records: I, path: &Path) -> Result<usize, CorpusError>
where
    I: IntoIterator<Item = &'a InstructionRecord>,
{
    let file = File::create(path).map_err(|source| CorpusError::Write {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    let n = write_pool(records, &mut writer).map_err(|source| CorpusError::Write {
        path: path.to_path_buf(),
        source,
    })?;
    writer.flush().map_err(|source| CorpusError::Write {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SftFormat {
    Plain,
    Conversational,
}

#[derive(Serialize)]
struct PlainRow<'a> {
    question: &'a str,
    response: &'a str,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ConversationalRow<'a> {
    messages: [Message<'a>; 2],
}

/// Emits the training-ready file consumed by external SFT trainers.
///
/// The response is rebuilt as open + trace + close + answer for records with
/// a trace, and is the raw response otherwise. Output is byte-stable across
/// runs for identical input.
pub fn write_sft_subset<'a, I, W>(
    records: I,
    format: SftFormat,
    think_open: &str,
    think_close: &str,
    writer: &mut W,
) -> Result<usize, CorpusError>
where
    I: IntoIterator<Item = &'a InstructionRecord>,
    W: Write,
{
    let mut written = 0;
    for record in records {
        if record.question.is_empty() {
            return Err(CorpusError::EmptyField {
                id: record.id.clone(),
                field: "question",
            });
        }
        if record.raw_response.is_empty() {
            return Err(CorpusError::EmptyField {
                id: record.id.clone(),
                field: "response",
            });
        }
        let response = match &record.trace {
            Some(trace) => format!("{think_open}{trace}{think_close}{}", record.answer_section),
            None => record.raw_response.clone(),
        };
        let io_err = |source| CorpusError::Write {
            path: PathBuf::from("<writer>"),
            source,
        };
        match format {
            SftFormat::Plain => {
                let row = PlainRow {
                    question: &record.question,
                    response: &response,
                };
                serde_json::to_writer(&mut *writer, &row)
                    .map_err(|e| io_err(std::io::Error::from(e)))?;
            }
            SftFormat::Conversational => {
                let row = ConversationalRow {
                    messages: [
                        Message {
                            role: "user",
                            content: &record.question,
                        },
                        Message {
                            role: "assistant",
                            content: &response,
                        },
                    ],
                };
                serde_json::to_writer(&mut *writer, &row)
                    .map_err(|e| io_err(std::io::Error::from(e)))?;
            }
        }
        writer.write_all(b"\n").map_err(io_err)?;
        written += 1;
    }
    Ok(written)
}

pub fn write_sft_subset_file<'a, I>(
    records: I,
    format: SftFormat,
    think_open: &str,
    think_close: &str,
    path: &Path,
) -> Result<usize, CorpusError>
where
    I: IntoIterator<Item = &'a InstructionRecord>,
{
    let file = File::create(path).map_err(|source| CorpusError::Write {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    let n = write_sft_subset(records, format, think_open, think_close, &mut writer)?;
    writer.flush().map_err(|source| CorpusError::Write {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn reader_for(lines: &str) -> PoolReader<BufReader<Cursor<Vec<u8>>>> {
        PoolReader::new(
            BufReader::new(Cursor::new(lines.as_bytes().to_vec())),
            FieldMapping::default(),
            "test".into(),
        )
    }

    #[test]
    fn three_valid_one_malformed() {
        let input = concat!(
            r#"{"question":"q1","response":"<think>t1</think>a1"}"#, "\n",
            "this is not json\n",
            r#"{"question":"q2","response":"<think>t2</think>a2"}"#, "\n",
            r#"{"question":"q3","response":"plain"}"#, "\n",
        );
        let mut reader = reader_for(input);
        let records: Vec<_> = reader.by_ref().collect();
        assert_eq!(records.len(), 3);
        assert_eq!(reader.skipped(), 1);
        assert!(reader.check_nonempty().is_ok());
        assert_eq!(records[0].trace.as_deref(), Some("t1"));
        assert!(records[2].trace.is_none());
        assert_eq!(records[2].answer_section, "plain");
    }

    #[test]
    fn empty_file_is_fatal_schema_error() {
        let mut reader = reader_for("");
        assert_eq!(reader.by_ref().count(), 0);
        assert!(matches!(
            reader.check_nonempty(),
            Err(CorpusError::NoRecords { .. })
        ));
    }

    #[test]
    fn schema_error_names_first_failing_key() {
        let input = r#"{"prompt":"q1","response":"a"}"#;
        let mut reader = reader_for(input);
        assert_eq!(reader.by_ref().count(), 0);
        let err = reader.check_nonempty().unwrap_err();
        assert!(err.to_string().contains("question"), "got: {err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_corpus(Path::new("/nonexistent/pool.jsonl"), &FieldMapping::default());
        assert!(matches!(err, Err(CorpusError::Open { .. })));
    }

    #[test]
    fn skipping_malformed_does_not_disturb_following_lines() {
        let input = concat!(
            r#"{"question":"q1","response":"r1"}"#, "\n",
            r#"{"question": 12.5e"#, "\n",
            r#"{"question":"q2","response":"r2"}"#, "\n",
        );
        let mut reader = reader_for(input);
        let records: Vec<_> = reader.by_ref().collect();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].question, "q2");
    }

    #[test]
    fn content_hash_ids_are_stable() {
        let input = r#"{"question":"q","response":"r"}"#;
        let a: Vec<_> = reader_for(input).collect();
        let b: Vec<_> = reader_for(input).collect();
        assert_eq!(a[0].id, b[0].id);
        assert_eq!(a[0].id.as_str().len(), 32);
    }

    #[test]
    fn source_id_key_wins_over_content_hash() {
        let input = r#"{"id":"row-7","question":"q","response":"r"}"#;
        let records: Vec<_> = reader_for(input).collect();
        assert_eq!(records[0].id.as_str(), "row-7");
    }

    fn rec(id: &str, question: &str, trace: Option<&str>, gold: Option<&str>) -> InstructionRecord {
        let raw = match trace {
            Some(t) => format!("<think>{t}</think>ans"),
            None => "ans".to_string(),
        };
        InstructionRecord {
            id: RecordId::new(id),
            question: question.into(),
            raw_response: raw,
            trace: trace.map(|t| t.to_string()),
            answer_section: "ans".into(),
            gold_answer: gold.map(|g| g.to_string()),
            category: None,
            source: "test".into(),
        }
    }

    #[test]
    fn validate_zero_records() {
        let stats = validate_pool(std::iter::empty());
        assert_eq!(stats, CorpusStats::default());
    }

    #[test]
    fn validate_counts_empty_traces() {
        let mut records = Vec::new();
        for i in 0..8 {
            records.push(rec(&format!("r{i}"), "q", Some("content"), Some("1")));
        }
        records.push(rec("r8", "q", Some(" \n "), Some("1")));
        records.push(rec("r9", "q", Some(""), Some("1")));
        let stats = validate_pool(&records);
        assert_eq!(stats.total, 10);
        assert_eq!(stats.with_trace, 10);
        assert_eq!(stats.empty_trace, 2);
    }

    #[test]
    fn validate_counts_duplicate_ids() {
        let records: Vec<_> = (0..5).map(|_| rec("same", "q", None, None)).collect();
        let stats = validate_pool(&records);
        assert_eq!(stats.duplicate_ids, 4);
        assert_eq!(stats.missing_gold, 5);
        assert_eq!(stats.with_trace, 0);
    }

    #[test]
    fn dedupe_no_duplicates_is_identity() {
        let records = vec![rec("a", "qa", None, None), rec("b", "qb", None, None)];
        let mut dd = dedupe(records.clone().into_iter(), DedupeKey::Id);
        let kept: Vec<_> = dd.by_ref().collect();
        assert_eq!(kept, records);
        assert_eq!(dd.removed(), 0);
    }

    #[test]
    fn dedupe_first_wins() {
        let records = vec![
            rec("a", "q1", None, None),
            rec("b", "q2", None, None),
            rec("a", "q3", None, None),
        ];
        let mut dd = dedupe(records.into_iter(), DedupeKey::Id);
        let kept: Vec<_> = dd.by_ref().collect();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].question, "q1");
        assert_eq!(kept[1].question, "q2");
        assert_eq!(dd.removed(), 1);
    }

    #[test]
    fn dedupe_by_question_hash() {
        let records = vec![
            rec("a", "same question", None, None),
            rec("b", "same question", None, None),
        ];
        let mut dd = dedupe(records.into_iter(), DedupeKey::QuestionHash);
        let kept: Vec<_> = dd.by_ref().collect();
        assert_eq!(kept.len(), 1);
        assert_eq!(dd.removed(), 1);
    }

    #[test]
    fn sft_reconstructs_response() {
        let record = rec("a", "q", Some("T"), None);
        let mut buf = Vec::new();
        write_sft_subset([&record], SftFormat::Plain, "<think>", "</think>", &mut buf).unwrap();
        let line: Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(line["response"], "<think>T</think>ans");
        assert_eq!(line["question"], "q");
    }

    #[test]
    fn sft_conversational_nests_roles() {
        let record = rec("a", "q", Some("T"), None);
        let mut buf = Vec::new();
        write_sft_subset(
            [&record],
            SftFormat::Conversational,
            "<think>",
            "</think>",
            &mut buf,
        )
        .unwrap();
        let line: Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(line["messages"][0]["role"], "user");
        assert_eq!(line["messages"][1]["content"], "<think>T</think>ans");
    }

    #[test]
    fn sft_is_byte_stable() {
        let records = vec![rec("a", "q1", Some("T"), None), rec("b", "q2", None, None)];
        let mut first = Vec::new();
        let mut second = Vec::new();
        write_sft_subset(&records, SftFormat::Plain, "<think>", "</think>", &mut first).unwrap();
        write_sft_subset(&records, SftFormat::Plain, "<think>", "</think>", &mut second).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn sft_rejects_empty_question() {
        let record = rec("a", "", None, None);
        let mut buf = Vec::new();
        let err = write_sft_subset([&record], SftFormat::Plain, "<think>", "</think>", &mut buf);
        assert!(matches!(err, Err(CorpusError::EmptyField { field: "question", .. })));
    }

    #[test]
    fn pool_roundtrip_is_field_equal() {
        let records = vec![
            rec("a", "q1", Some("line1\n\nline2"), Some("42")),
            rec("b", "q2", None, None),
        ];
        let mut buf = Vec::new();
        write_pool(&records, &mut buf).unwrap();
        let reloaded: Vec<_> = PoolReader::new(
            BufReader::new(Cursor::new(buf)),
            FieldMapping::default(),
            "test".into(),
        )
        .collect();
        assert_eq!(reloaded, records);
    }
}
