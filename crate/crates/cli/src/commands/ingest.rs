use std::path::PathBuf;

use anyhow::Context;
use clap::Args;

use cotsel_core::corpus::{dedupe, validate_pool, write_pool_file, DedupeKey};

use crate::config::RunConfig;
use crate::manifest::write_run_manifest;
use crate::{CliError, CliResult};

use super::{ensure_output_dir, load_pool, pool_path};

#[derive(Args)]
pub struct IngestArgs {
    /// Pool file (line-delimited records)
    #[arg(long)]
    pub pool: Option<PathBuf>,

    /// Deduplication key
    #[arg(long, value_parser = parse_dedupe_key, default_value = "id")]
    pub dedupe_key: DedupeKey,
}

fn parse_dedupe_key(s: &str) -> Result<DedupeKey, String> {
    match s {
        "id" => Ok(DedupeKey::Id),
        "question-hash" => Ok(DedupeKey::QuestionHash),
        other => Err(format!("unknown dedupe key `{other}` (expected id|question-hash)")),
    }
}

pub fn run(config: &RunConfig, args: IngestArgs) -> CliResult {
    let pool = pool_path(config, &args.pool)?;
    let mapping = config.pool.field_mapping();
    let out_dir = ensure_output_dir(config)?;

    let (records, skipped) = load_pool(&pool, &mapping)?;
    let mut dd = dedupe(records.into_iter(), args.dedupe_key);
    let kept: Vec<_> = dd.by_ref().collect();
    let removed = dd.removed();
    let stats = validate_pool(&kept);

    let normalized = out_dir.join("pool.normalized.jsonl");
    write_pool_file(&kept, &normalized)
        .context("cannot write normalized pool")
        .map_err(CliError::input)?;

    write_run_manifest(&out_dir, "ingest", config, &[&pool])?;

    println!("pool: {}", pool.display());
    println!("records: {}", stats.total);
    println!("skipped_malformed_lines: {skipped}");
    println!("removed_duplicates: {removed}");
    println!("with_trace: {}", stats.with_trace);
    println!("empty_trace: {}", stats.empty_trace);
    println!("missing_gold: {}", stats.missing_gold);
    println!("duplicate_ids_remaining: {}", stats.duplicate_ids);
    println!("normalized_pool: {}", normalized.display());
    Ok(())
}
