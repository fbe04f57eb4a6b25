pub mod analyze;
pub mod eval;
pub mod ingest;
pub mod judge_data;
pub mod score;
pub mod select;
pub mod stats;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use cotsel_core::corpus::{load_corpus, FieldMapping, InstructionRecord};

use crate::config::RunConfig;
use crate::CliError;

/// Loads a pool fully into memory, failing with exit code 2 when the file is
/// missing or contains zero parseable records.
pub fn load_pool(
    path: &Path,
    mapping: &FieldMapping,
) -> Result<(Vec<InstructionRecord>, usize), CliError> {
    let mut reader = load_corpus(path, mapping)
        .with_context(|| format!("cannot open pool {}", path.display()))
        .map_err(CliError::input)?;
    let records: Vec<InstructionRecord> = reader.by_ref().collect();
    reader
        .check_nonempty()
        .with_context(|| format!("pool {} has no parseable records", path.display()))
        .map_err(CliError::input)?;
    Ok((records, reader.skipped()))
}

pub fn pool_path(config: &RunConfig, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| config.pool.path.clone())
        .ok_or_else(|| CliError::input(anyhow::anyhow!("no pool path given (flag --pool or config [pool].path)")))
}

pub fn ensure_output_dir(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = config.output_dir();
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output dir {}", dir.display()))
        .map_err(CliError::input)?;
    Ok(dir)
}

pub fn cache_path(config: &RunConfig, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| config.cache.path.clone())
        .unwrap_or_else(|| config.output_dir().join("scores.cache.jsonl"))
}
