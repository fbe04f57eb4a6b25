//! Columnar (TSV) export and import of per-record trace metrics.
//!
//! One row per record id. Keyword columns are prefixed `wb_` (word-boundary
//! counts) and `pf_` (prefix-of-step counts), ordered by the lexicon.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::RecordId;
use crate::trace::{RethinkLexicon, TraceMetrics};

#[derive(Debug, Error)]
pub enum MetricsIoError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad metrics header: {0}")]
    BadHeader(String),
    #[error("line {line}: {reason}")]
    BadRow { line: usize, reason: String },
}

const FIXED_COLUMNS: &[&str] = &[
    "id",
    "has_trace",
    "malformed",
    "char_len",
    "word_len",
    "token_len",
    "step_count",
    "rethink_total",
    "rethink_density",
];

pub fn write_metrics_tsv<W: Write>(
    rows: &[(RecordId, TraceMetrics)],
    lexicon: &RethinkLexicon,
    writer: &mut W,
) -> std::io::Result<()> {
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|c| c.to_string()).collect();
    for kw in &lexicon.keywords {
        header.push(format!("wb_{kw}"));
    }
    for kw in &lexicon.keywords {
        header.push(format!("pf_{kw}"));
    }
    writeln!(writer, "{}", header.join("\t"))?;
    for (id, m) in rows {
        let mut fields = vec![
            id.as_str().to_string(),
            (m.has_trace as u8).to_string(),
            (m.malformed as u8).to_string(),
            m.char_len.to_string(),
            m.word_len.to_string(),
            m.token_len.to_string(),
            m.step_count.to_string(),
            m.rethink_total.to_string(),
            format!("{:.6}", m.rethink_density),
        ];
        for kw in &lexicon.keywords {
            fields.push(m.keyword_counts.get(kw).copied().unwrap_or(0).to_string());
        }
        for kw in &lexicon.keywords {
            fields.push(m.prefix_counts.get(kw).copied().unwrap_or(0).to_string());
        }
        writeln!(writer, "{}", fields.join("\t"))?;
    }
    Ok(())
}

pub fn write_metrics_tsv_file(
    rows: &[(RecordId, TraceMetrics)],
    lexicon: &RethinkLexicon,
    path: &Path,
) -> Result<(), MetricsIoError> {
    let io_err = |source| MetricsIoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    write_metrics_tsv(rows, lexicon, &mut writer).map_err(io_err)?;
    writer.flush().map_err(io_err)
}

pub fn read_metrics_tsv_file(path: &Path) -> Result<Vec<(RecordId, TraceMetrics)>, MetricsIoError> {
    let file = File::open(path).map_err(|source| MetricsIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| MetricsIoError::BadHeader("empty file".into()))?
        .map_err(|source| MetricsIoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let columns: Vec<&str> = header.split('\t').collect();
    for required in FIXED_COLUMNS {
        if !columns.contains(required) {
            return Err(MetricsIoError::BadHeader(format!("missing column {required}")));
        }
    }
    let index: BTreeMap<&str, usize> = columns.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let wb_columns: Vec<(String, usize)> = columns
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.strip_prefix("wb_").map(|kw| (kw.to_string(), i)))
        .collect();
    let pf_columns: Vec<(String, usize)> = columns
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.strip_prefix("pf_").map(|kw| (kw.to_string(), i)))
        .collect();

    let mut rows = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let line = line.map_err(|source| MetricsIoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let get = |name: &str| -> Result<&str, MetricsIoError> {
            fields
                .get(index[name])
                .copied()
                .ok_or_else(|| MetricsIoError::BadRow {
                    line: line_no + 2,
                    reason: format!("missing field {name}"),
                })
        };
        let parse_usize = |name: &str| -> Result<usize, MetricsIoError> {
            get(name)?.parse().map_err(|_| MetricsIoError::BadRow {
                line: line_no + 2,
                reason: format!("{name} is not a count"),
            })
        };
        let keyword_counts: BTreeMap<String, usize> = wb_columns
            .iter()
            .map(|(kw, i)| {
                let v = fields.get(*i).and_then(|f| f.parse().ok()).unwrap_or(0);
                (kw.clone(), v)
            })
            .collect();
        let prefix_counts: BTreeMap<String, usize> = pf_columns
            .iter()
            .map(|(kw, i)| {
                let v = fields.get(*i).and_then(|f| f.parse().ok()).unwrap_or(0);
                (kw.clone(), v)
            })
            .collect();
        let metrics = TraceMetrics {
            has_trace: get("has_trace")? == "1",
            malformed: get("malformed")? == "1",
            char_len: parse_usize("char_len")?,
            word_len: parse_usize("word_len")?,
            token_len: parse_usize("token_len")?,
            step_count: parse_usize("step_count")?,
            rethink_total: parse_usize("rethink_total")?,
            rethink_density: get("rethink_density")?
                .parse()
                .map_err(|_| MetricsIoError::BadRow {
                    line: line_no + 2,
                    reason: "rethink_density is not a number".into(),
                })?,
            keyword_counts,
            prefix_counts,
        };
        rows.push((RecordId::new(get("id")?), metrics));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::InstructionRecord;
    use crate::trace::compute_metrics;

    fn sample_rows() -> (Vec<(RecordId, TraceMetrics)>, RethinkLexicon) {
        let lexicon = RethinkLexicon::default();
        let records = [
            ("a", "Wait one.\n\nTwo."),
            ("b", "However three. Maybe four."),
        ];
        let rows: Vec<(RecordId, TraceMetrics)> = records
            .iter()
            .map(|(id, trace)| {
                let record = InstructionRecord {
                    id: RecordId::new(*id),
                    question: "q".into(),
                    raw_response: format!("<think>{trace}</think>A"),
                    trace: Some(trace.to_string()),
                    answer_section: "A".into(),
                    gold_answer: None,
                    category: None,
                    source: "test".into(),
                };
                (record.id.clone(), compute_metrics(&record, &lexicon, None))
            })
            .collect();
        (rows, lexicon)
    }

    #[test]
    fn tsv_roundtrip() {
        let (rows, lexicon) = sample_rows();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.tsv");
        write_metrics_tsv_file(&rows, &lexicon, &path).unwrap();
        let reloaded = read_metrics_tsv_file(&path).unwrap();
        assert_eq!(reloaded.len(), rows.len());
        for ((id_a, m_a), (id_b, m_b)) in rows.iter().zip(&reloaded) {
            assert_eq!(id_a, id_b);
            assert_eq!(m_a.token_len, m_b.token_len);
            assert_eq!(m_a.keyword_counts, m_b.keyword_counts);
            assert_eq!(m_a.prefix_counts, m_b.prefix_counts);
        }
    }

    #[test]
    fn tsv_is_byte_stable() {
        let (rows, lexicon) = sample_rows();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_metrics_tsv(&rows, &lexicon, &mut a).unwrap();
        write_metrics_tsv(&rows, &lexicon, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_header_column_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.tsv");
        std::fs::write(&path, "id\thas_trace\n").unwrap();
        assert!(matches!(
            read_metrics_tsv_file(&path),
            Err(MetricsIoError::BadHeader(_))
        ));
    }
}
