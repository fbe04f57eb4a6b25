use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;

use cotsel_core::corpus::RecordId;
use cotsel_core::scoring::{score_batch_judge, score_batch_solve_rate, DifficultyLabel, ScoreCache};

use crate::config::RunConfig;
use crate::manifest::write_run_manifest;
use crate::{CliError, CliResult};

use super::{cache_path, ensure_output_dir, load_pool, pool_path};

#[derive(Args)]
pub struct ScoreArgs {
    /// Pool file (line-delimited records)
    #[arg(long)]
    pub pool: Option<PathBuf>,

    /// judge | solve-rate
    #[arg(long)]
    pub mode: String,

    /// Endpoint URL override
    #[arg(long)]
    pub endpoint_url: Option<String>,

    /// Model name override
    #[arg(long)]
    pub model: Option<String>,

    /// Score cache file override
    #[arg(long)]
    pub cache: Option<PathBuf>,

    /// Re-score records even when cached
    #[arg(long)]
    pub rescore: bool,
}

pub fn run(config: &RunConfig, args: ScoreArgs) -> CliResult {
    let pool = pool_path(config, &args.pool)?;
    let mapping = config.pool.field_mapping();
    let out_dir = ensure_output_dir(config)?;
    let cache_file = cache_path(config, &args.cache);

    let (records, _) = load_pool(&pool, &mapping)?;
    let mut cache = ScoreCache::open(&cache_file)
        .context("cannot open score cache")
        .map_err(CliError::input)?;

    let (scored, cached, failed, skipped) = match args.mode.as_str() {
        "judge" => {
            let mut section = config.judge.clone();
            if args.endpoint_url.is_some() {
                section.endpoint_url = args.endpoint_url.clone();
            }
            if args.model.is_some() {
                section.model_name = args.model.clone();
            }
            let cfg = section.judge_config().map_err(CliError::input)?;
            let items: Vec<(RecordId, String)> = records
                .iter()
                .map(|r| (r.id.clone(), r.question.clone()))
                .collect();
            let summary = score_batch_judge(&items, &cfg, &mut cache, args.rescore)
                .context("judge scoring failed")
                .map_err(CliError::input)?;
            for (id, reason) in &summary.failures {
                log::warn!("scoring failed for {id}: {reason}");
            }
            (summary.scored, summary.cached, summary.failed, 0)
        }
        "solve-rate" => {
            let mut section = config.solve_rate.clone();
            if args.endpoint_url.is_some() {
                section.endpoint_url = args.endpoint_url.clone();
            }
            if args.model.is_some() {
                section.model_name = args.model.clone();
            }
            let cfg = section.solve_rate_config().map_err(CliError::input)?;
            let batch = score_batch_solve_rate(&records, &cfg, &mut cache, args.rescore)
                .context("solve-rate scoring failed")
                .map_err(CliError::input)?;
            for (id, reason) in &batch.summary.failures {
                log::warn!("scoring failed for {id}: {reason}");
            }
            let labels_path = out_dir.join("solve_labels.jsonl");
            write_labels(&records, &batch.labels, &labels_path).map_err(CliError::input)?;
            println!("labels: {}", labels_path.display());
            (
                batch.summary.scored,
                batch.summary.cached,
                batch.summary.failed,
                batch.skipped_missing_gold,
            )
        }
        other => {
            return Err(CliError::input(anyhow::anyhow!(
                "unknown mode `{other}` (expected judge|solve-rate)"
            )))
        }
    };

    write_run_manifest(&out_dir, "score", config, &[&pool])?;

    println!("scored: {scored}");
    println!("cached: {cached}");
    println!("failed: {failed}");
    println!("skipped_missing_gold: {skipped}");
    println!("cache: {}", cache_file.display());

    let attempted = scored + failed;
    if attempted > 0 && scored == 0 {
        return Err(CliError::scoring(anyhow::anyhow!(
            "all {attempted} scoring requests failed"
        )));
    }
    Ok(())
}

fn write_labels(
    records: &[cotsel_core::corpus::InstructionRecord],
    labels: &[(RecordId, DifficultyLabel, f64)],
    path: &std::path::Path,
) -> anyhow::Result<()> {
    let question_of: std::collections::BTreeMap<&RecordId, &str> = records
        .iter()
        .map(|r| (&r.id, r.question.as_str()))
        .collect();
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    );
    for (id, label, fraction) in labels {
        let row = serde_json::json!({
            "record_id": id.as_str(),
            "question": question_of.get(id).copied().unwrap_or(""),
            "label": match label {
                DifficultyLabel::Easy => "easy",
                DifficultyLabel::Hard => "hard",
            },
            "solved_fraction": fraction,
        });
        writeln!(file, "{row}")?;
    }
    Ok(())
}
