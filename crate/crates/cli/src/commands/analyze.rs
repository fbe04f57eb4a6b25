use std::path::PathBuf;

use anyhow::Context;
use clap::Args;

use cotsel_core::metrics_io::write_metrics_tsv_file;
use cotsel_core::trace::{compute_metrics, LengthUnit};

use cotsel_core::corpus::load_corpus;

use crate::config::RunConfig;
use crate::manifest::write_run_manifest;
use crate::{CliError, CliResult};

use super::{ensure_output_dir, pool_path};

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Pool file (line-delimited records)
    #[arg(long)]
    pub pool: Option<PathBuf>,

    /// Lexicon file override
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

pub fn run(config: &RunConfig, args: AnalyzeArgs) -> CliResult {
    let pool = pool_path(config, &args.pool)?;
    let mapping = config.pool.field_mapping();
    let out_dir = ensure_output_dir(config)?;

    let mut lexicon_section = config.lexicon.clone();
    if args.lexicon.is_some() {
        lexicon_section.path = args.lexicon.clone();
    }
    let lexicon = lexicon_section.load().map_err(CliError::input)?;
    let segmenter = match config.length.unit() {
        LengthUnit::Tokens => Some(config.length.segmenter().map_err(CliError::input)?),
        _ => None,
    };

    // unlike ingest, an empty pool is not fatal here: it simply yields an
    // empty metrics table
    let mut reader = load_corpus(&pool, &mapping)
        .with_context(|| format!("cannot open pool {}", pool.display()))
        .map_err(CliError::input)?;
    let records: Vec<_> = reader.by_ref().collect();
    let skipped = reader.skipped();
    let rows: Vec<_> = records
        .iter()
        .map(|r| (r.id.clone(), compute_metrics(r, &lexicon, segmenter.as_deref())))
        .collect();

    let metrics_path = out_dir.join("metrics.tsv");
    write_metrics_tsv_file(&rows, &lexicon, &metrics_path)
        .context("cannot write metrics table")
        .map_err(CliError::input)?;

    write_run_manifest(&out_dir, "analyze", config, &[&pool])?;

    println!("records: {}", rows.len());
    println!("skipped_malformed_lines: {skipped}");
    println!("metrics: {}", metrics_path.display());
    Ok(())
}
