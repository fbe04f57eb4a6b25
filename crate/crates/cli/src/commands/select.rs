use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;

use cotsel_core::corpus::{write_sft_subset_file, RecordId, SftFormat};
use cotsel_core::metrics_io::read_metrics_tsv_file;
use cotsel_core::ranking::{
    joint_entries, joint_rank, rank_by, select_difficulty_band, select_diverse, select_length_band,
    select_random, select_top_k, DifficultyBand, KSpec, LengthBand, SelectionSpec, Strategy,
};
use cotsel_core::scoring::ScoreCache;
use cotsel_core::trace::LengthUnit;

use crate::config::RunConfig;
use crate::manifest::write_run_manifest;
use crate::{CliError, CliResult};

use super::{cache_path, ensure_output_dir, load_pool, pool_path};

#[derive(Args)]
pub struct SelectArgs {
    /// Pool file (line-delimited records)
    #[arg(long)]
    pub pool: Option<PathBuf>,

    /// joint | longest | middle | shortest | difficult | easy | random | diverse
    #[arg(long)]
    pub strategy: Option<String>,

    /// Subset size as a fraction of the pool, e.g. 0.10
    #[arg(long)]
    pub fraction: Option<f64>,

    /// Subset size as an absolute count
    #[arg(long)]
    pub count: Option<usize>,

    /// Joint-rank weight on the difficulty rank
    #[arg(long)]
    pub w: Option<f64>,

    /// Seed for the random and diverse strategies
    #[arg(long)]
    pub seed: Option<u64>,

    /// Metrics TSV from `analyze` (defaults to metrics.tsv in the output dir)
    #[arg(long)]
    pub metrics: Option<PathBuf>,

    /// Score cache from `score`
    #[arg(long)]
    pub cache: Option<PathBuf>,

    /// Training-file layout: plain | conversational
    #[arg(long)]
    pub sft_format: Option<String>,
}

pub fn run(config: &RunConfig, args: SelectArgs) -> CliResult {
    let pool = pool_path(config, &args.pool)?;
    let mapping = config.pool.field_mapping();
    let out_dir = ensure_output_dir(config)?;

    let strategy = parse_strategy(
        args.strategy
            .as_deref()
            .or(config.selection.strategy.as_deref())
            .unwrap_or("joint"),
    )?;
    let k = resolve_k_spec(config, &args)?;
    let w = args.w.or(config.selection.w).unwrap_or(0.25);
    let seed = args.seed.or(config.selection.seed).unwrap_or(0);
    let unit = config.length.unit();
    let spec = SelectionSpec {
        strategy,
        k,
        w,
        seed,
        length_unit: unit,
        tie_break: "ascending-id".into(),
    };

    let (records, _) = load_pool(&pool, &mapping)?;
    let by_id: BTreeMap<RecordId, &cotsel_core::corpus::InstructionRecord> =
        records.iter().map(|r| (r.id.clone(), r)).collect();

    let mut excluded: Vec<RecordId> = Vec::new();
    let selection = match strategy {
        Strategy::Longest | Strategy::Middle | Strategy::Shortest => {
            let lengths = load_lengths(config, &args, unit, &by_id)?;
            let band = match strategy {
                Strategy::Longest => LengthBand::Longest,
                Strategy::Middle => LengthBand::Middle,
                _ => LengthBand::Shortest,
            };
            select_length_band(&lengths, band, spec.clone())
                .map_err(|e| CliError::input(e.into()))?
        }
        Strategy::Difficult | Strategy::Easy => {
            let scores = load_scores(config, &args, &by_id)?;
            let band = if strategy == Strategy::Difficult {
                DifficultyBand::Difficult
            } else {
                DifficultyBand::Easy
            };
            select_difficulty_band(&scores, band, spec.clone())
                .map_err(|e| CliError::input(e.into()))?
        }
        Strategy::Random => {
            let ids: BTreeSet<RecordId> = by_id.keys().cloned().collect();
            select_random(&ids, spec.clone()).map_err(|e| CliError::input(e.into()))?
        }
        Strategy::Diverse => {
            let categories: BTreeMap<RecordId, Option<String>> = records
                .iter()
                .map(|r| (r.id.clone(), r.category.clone()))
                .collect();
            let uncategorized = categories.values().filter(|c| c.is_none()).count();
            if uncategorized * 10 > categories.len() {
                log::warn!(
                    "{uncategorized} of {} records lack a category; grouped as `uncategorized`",
                    categories.len()
                );
            }
            select_diverse(&categories, spec.clone()).map_err(|e| CliError::input(e.into()))?
        }
        Strategy::Joint => {
            let lengths = load_lengths(config, &args, unit, &by_id)?;
            let scores = load_scores(config, &args, &by_id)?;
            // records without a difficulty score leave the ranking scope
            let scoped_lengths: BTreeMap<RecordId, f64> = lengths
                .iter()
                .filter(|(id, _)| scores.contains_key(*id))
                .map(|(id, &v)| (id.clone(), v))
                .collect();
            excluded = lengths
                .keys()
                .filter(|id| !scores.contains_key(*id))
                .cloned()
                .collect();
            if scoped_lengths.is_empty() {
                return Err(CliError::input(anyhow::anyhow!(
                    "strategy joint has no scored records; run `cotsel score` first"
                )));
            }
            let scoped_scores: BTreeMap<RecordId, f64> = scores
                .into_iter()
                .filter(|(id, _)| scoped_lengths.contains_key(id))
                .collect();
            let rank_d = rank_by(&scoped_scores).map_err(|e| CliError::input(e.into()))?;
            let rank_l = rank_by(&scoped_lengths).map_err(|e| CliError::input(e.into()))?;
            let joint = joint_rank(&rank_d, &rank_l, w).map_err(|e| CliError::input(e.into()))?;

            let entries = joint_entries(&rank_d, &rank_l, w).map_err(|e| CliError::input(e.into()))?;
            let ranks_path = out_dir.join("ranks.tsv");
            write_ranks_tsv(&entries, &ranks_path).map_err(CliError::input)?;

            select_top_k(&joint, spec.clone(), true).map_err(|e| CliError::input(e.into()))?
        }
    };

    let manifest_path = out_dir.join("selection.manifest.json");
    let body = serde_json::to_string_pretty(&selection).expect("selection serializes");
    std::fs::write(&manifest_path, body)
        .with_context(|| format!("cannot write {}", manifest_path.display()))
        .map_err(CliError::input)?;

    if !excluded.is_empty() {
        let excluded_path = out_dir.join("excluded_ids.txt");
        let mut file = std::io::BufWriter::new(
            std::fs::File::create(&excluded_path)
                .context("cannot write excluded ids")
                .map_err(CliError::input)?,
        );
        for id in &excluded {
            writeln!(file, "{id}").map_err(|e| CliError::input(e.into()))?;
        }
        println!("excluded_unscored: {}", excluded.len());
        println!("excluded_ids: {}", excluded_path.display());
    }

    let sft_format = match args
        .sft_format
        .as_deref()
        .or(config.selection.sft_format.as_deref())
        .unwrap_or("plain")
    {
        "plain" => SftFormat::Plain,
        "conversational" => SftFormat::Conversational,
        other => {
            return Err(CliError::input(anyhow::anyhow!(
                "unknown sft format `{other}` (expected plain|conversational)"
            )))
        }
    };
    let subset_path = out_dir.join("subset.jsonl");
    let subset_records: Vec<&cotsel_core::corpus::InstructionRecord> = selection
        .ids
        .iter()
        .filter_map(|id| by_id.get(id).copied())
        .collect();
    write_sft_subset_file(
        subset_records,
        sft_format,
        &mapping.think_open,
        &mapping.think_close,
        &subset_path,
    )
    .context("cannot write subset")
    .map_err(CliError::input)?;

    write_run_manifest(&out_dir, "select", config, &[&pool])?;

    println!("strategy: {}", strategy.name());
    println!("k: {}", selection.ids.len());
    println!("manifest_hash: {}", selection.manifest_hash);
    println!("selection_manifest: {}", manifest_path.display());
    println!("subset: {}", subset_path.display());
    Ok(())
}

fn parse_strategy(s: &str) -> Result<Strategy, CliError> {
    Ok(match s {
        "joint" => Strategy::Joint,
        "longest" => Strategy::Longest,
        "middle" => Strategy::Middle,
        "shortest" => Strategy::Shortest,
        "difficult" => Strategy::Difficult,
        "easy" => Strategy::Easy,
        "random" => Strategy::Random,
        "diverse" => Strategy::Diverse,
        other => {
            return Err(CliError::input(anyhow::anyhow!(
                "unknown strategy `{other}`"
            )))
        }
    })
}

fn resolve_k_spec(config: &RunConfig, args: &SelectArgs) -> Result<KSpec, CliError> {
    let fraction = args.fraction.or(config.selection.fraction);
    let count = args.count.or(config.selection.count);
    match (fraction, count) {
        (Some(_), Some(_)) => Err(CliError::input(anyhow::anyhow!(
            "set either a fraction or a count, not both"
        ))),
        (Some(f), None) => Ok(KSpec::Fraction(f)),
        (None, Some(c)) => Ok(KSpec::Count(c)),
        (None, None) => Ok(KSpec::Fraction(0.10)),
    }
}

fn load_lengths(
    config: &RunConfig,
    args: &SelectArgs,
    unit: LengthUnit,
    by_id: &BTreeMap<RecordId, &cotsel_core::corpus::InstructionRecord>,
) -> Result<BTreeMap<RecordId, f64>, CliError> {
    let metrics_path = args
        .metrics
        .clone()
        .or_else(|| config.stats.metrics_path.clone())
        .unwrap_or_else(|| config.output_dir().join("metrics.tsv"));
    let rows = read_metrics_tsv_file(&metrics_path)
        .with_context(|| {
            format!(
                "cannot read metrics {} (run `cotsel analyze` first)",
                metrics_path.display()
            )
        })
        .map_err(CliError::input)?;
    let lengths: BTreeMap<RecordId, f64> = rows
        .into_iter()
        .filter(|(id, _)| by_id.contains_key(id))
        .map(|(id, m)| {
            let len = match unit {
                LengthUnit::Chars => m.char_len,
                LengthUnit::Words => m.word_len,
                LengthUnit::Tokens => m.token_len,
            };
            (id, len as f64)
        })
        .collect();
    if lengths.is_empty() {
        return Err(CliError::input(anyhow::anyhow!(
            "metrics table {} covers none of the pool records",
            metrics_path.display()
        )));
    }
    Ok(lengths)
}

fn load_scores(
    config: &RunConfig,
    args: &SelectArgs,
    by_id: &BTreeMap<RecordId, &cotsel_core::corpus::InstructionRecord>,
) -> Result<BTreeMap<RecordId, f64>, CliError> {
    let cache_file = cache_path(config, &args.cache);
    if !cache_file.exists() {
        return Err(CliError::input(anyhow::anyhow!(
            "no score cache at {}; run `cotsel score` first",
            cache_file.display()
        )));
    }
    let cache = ScoreCache::open(&cache_file)
        .context("cannot open score cache")
        .map_err(CliError::input)?;
    let scores: BTreeMap<RecordId, f64> = cache
        .scores_by_record()
        .into_iter()
        .filter(|(id, _)| by_id.contains_key(id))
        .map(|(id, s)| (id, s.value))
        .collect();
    if scores.is_empty() {
        return Err(CliError::input(anyhow::anyhow!(
            "score cache {} has no scores for this pool; run `cotsel score` first",
            cache_file.display()
        )));
    }
    Ok(scores)
}

fn write_ranks_tsv(
    entries: &[cotsel_core::ranking::RankEntry],
    path: &std::path::Path,
) -> anyhow::Result<()> {
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    );
    writeln!(file, "id\trank_d\trank_l\tjoint")?;
    for e in entries {
        writeln!(file, "{}\t{}\t{}\t{:.6}", e.record_id, e.rank_d, e.rank_l, e.joint)?;
    }
    Ok(())
}
