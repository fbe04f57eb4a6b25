//! Durable score cache: append-only line-delimited JSON.
//!
//! Each line is an independent `{key, score}` pair, so a torn write or a
//! corrupted line costs exactly that line — the loader skips it, logs, and
//! keeps the rest.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DifficultyScore, ScoreError};
use crate::corpus::RecordId;
use crate::hash::content_hash;

/// Cache key: 128-bit content hash of (question, model, prompt template).
/// Changing any of the three produces a different key, so prompt or model
/// swaps never reuse stale scores.
pub fn cache_key(question: &str, model_name: &str, prompt_template: &str) -> String {
    content_hash(&[question, model_name, prompt_template])
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    score: DifficultyScore,
}

#[derive(Debug)]
pub struct ScoreCache {
    path: PathBuf,
    entries: BTreeMap<String, DifficultyScore>,
    corrupt_lines: usize,
    appender: Option<File>,
}

impl ScoreCache {
    /// Opens (or lazily creates) the cache at `path` and loads every intact
    /// line. Corrupt lines are counted and skipped.
    pub fn open(path: &Path) -> Result<Self, ScoreError> {
        let mut entries = BTreeMap::new();
        let mut corrupt_lines = 0;
        match File::open(path) {
            Ok(file) => {
                for line in BufReader::new(file).lines() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    match serde_json::from_str::<CacheLine>(&line) {
                        Ok(cl) => {
                            entries.insert(cl.key, cl.score);
                        }
                        Err(e) => {
                            corrupt_lines += 1;
                            log::warn!("skipping corrupt cache line in {}: {e}", path.display());
                        }
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(ScoreError::CacheIo(e)),
        }
        Ok(ScoreCache {
            path: path.to_path_buf(),
            entries,
            corrupt_lines,
            appender: None,
        })
    }

    pub fn get(&self, key: &str) -> Option<&DifficultyScore> {
        self.entries.get(key)
    }

    /// Appends the entry to the backing file and the in-memory map.
    pub fn put(&mut self, key: String, score: DifficultyScore) -> Result<(), ScoreError> {
        if self.appender.is_none() {
            self.appender = Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&self.path)?,
            );
        }
        let file = self.appender.as_mut().expect("appender just opened");
        let line = serde_json::to_string(&CacheLine {
            key: key.clone(),
            score: score.clone(),
        })
        .expect("score serializes");
        file.write_all(line.as_bytes())?;
        file.write_all(b"\n")?;
        self.entries.insert(key, score);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn corrupt_lines(&self) -> usize {
        self.corrupt_lines
    }

    /// Latest score per record id (ids can appear under several keys when
    /// prompts or models changed between runs; the map layout keeps one
    /// arbitrary-but-stable winner per key, last put wins per record here).
    pub fn scores_by_record(&self) -> BTreeMap<RecordId, DifficultyScore> {
        let mut out = BTreeMap::new();
        for score in self.entries.values() {
            out.entry(score.record_id.clone())
                .and_modify(|existing: &mut DifficultyScore| {
                    if score.created_at >= existing.created_at {
                        *existing = score.clone();
                    }
                })
                .or_insert_with(|| score.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ScoreSource;

    fn score(id: &str, value: f64) -> DifficultyScore {
        DifficultyScore {
            record_id: RecordId::new(id),
            value,
            logp_pos: Some(-0.1),
            logp_neg: Some(-2.0),
            source: ScoreSource::Judge,
            model_name: "m".into(),
            created_at: 1_700_000_000,
            floored: false,
        }
    }

    #[test]
    fn put_then_get_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let mut cache = ScoreCache::open(&path).unwrap();
        cache.put("k1".into(), score("r1", 0.75)).unwrap();
        assert_eq!(cache.get("k1").unwrap().value, 0.75);

        let reloaded = ScoreCache::open(&path).unwrap();
        assert_eq!(reloaded.get("k1").unwrap(), cache.get("k1").unwrap());
    }

    #[test]
    fn changed_template_is_a_miss() {
        let k1 = cache_key("q", "m", "template A {question}");
        let k2 = cache_key("q", "m", "template B {question}");
        assert_ne!(k1, k2);
    }

    #[test]
    fn corrupt_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let mut cache = ScoreCache::open(&path).unwrap();
        for i in 0..1000 {
            cache.put(format!("k{i:04}"), score(&format!("r{i:04}"), 0.5)).unwrap();
        }
        drop(cache);

        // corrupt two lines in the middle
        let content = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = content.lines().map(|l| l.to_string()).collect();
        lines[100] = "{broken json".into();
        lines[500] = "also not json}".into();
        std::fs::write(&path, lines.join("\n")).unwrap();

        let reloaded = ScoreCache::open(&path).unwrap();
        assert_eq!(reloaded.len(), 998);
        assert_eq!(reloaded.corrupt_lines(), 2);
        assert!(reloaded.get("k0100").is_none());
        assert!(reloaded.get("k0101").is_some());
    }

    #[test]
    fn scores_by_record_prefers_latest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let mut cache = ScoreCache::open(&path).unwrap();
        let mut old = score("r1", 0.2);
        old.created_at = 100;
        let mut new = score("r1", 0.9);
        new.created_at = 200;
        cache.put("k-old".into(), old).unwrap();
        cache.put("k-new".into(), new).unwrap();
        let by_record = cache.scores_by_record();
        assert_eq!(by_record[&RecordId::new("r1")].value, 0.9);
    }
}
