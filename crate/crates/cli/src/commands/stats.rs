use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;

use cotsel_core::metrics_io::read_metrics_tsv_file;
use cotsel_core::ranking::Selection;
use cotsel_core::report::{
    generation_rethink_stats, length_binned_rethink, length_rethink_correlation,
    selection_overlap,
};
use cotsel_core::trace::TraceMetrics;

use crate::config::RunConfig;
use crate::manifest::write_run_manifest;
use crate::{CliError, CliResult};

use super::ensure_output_dir;

#[derive(Args)]
pub struct StatsArgs {
    /// Metrics TSV from `analyze` (defaults to metrics.tsv in the output dir)
    #[arg(long)]
    pub metrics: Option<PathBuf>,

    /// Number of length-quantile bins
    #[arg(long)]
    pub bins: Option<usize>,

    /// Grouped generations file: lines of {"group": ..., "solutions": [...]}
    #[arg(long)]
    pub generations: Option<PathBuf>,

    /// Two selection manifests to intersect
    #[arg(long, num_args = 2)]
    pub overlap: Option<Vec<PathBuf>>,
}

pub fn run(config: &RunConfig, args: StatsArgs) -> CliResult {
    let out_dir = ensure_output_dir(config)?;
    let metrics_path = args
        .metrics
        .clone()
        .or_else(|| config.stats.metrics_path.clone())
        .unwrap_or_else(|| config.output_dir().join("metrics.tsv"));
    let n_bins = args.bins.or(config.stats.n_bins).unwrap_or(5);

    let rows = read_metrics_tsv_file(&metrics_path)
        .with_context(|| format!("cannot read metrics {}", metrics_path.display()))
        .map_err(CliError::input)?;
    let metrics: Vec<TraceMetrics> = rows.into_iter().map(|(_, m)| m).collect();

    let binned_path = out_dir.join("rethink_by_length_bin.tsv");
    let binned = length_binned_rethink(&metrics, n_bins).map_err(|e| CliError::input(e.into()))?;
    write_binned_tsv(&binned, &binned_path).map_err(CliError::input)?;
    println!("bins: {}", binned.per_bin.len());
    println!("binned_stats: {}", binned_path.display());

    let corr_path = out_dir.join("length_rethink_correlation.tsv");
    match length_rethink_correlation(&metrics) {
        Ok(rho) => {
            std::fs::write(&corr_path, format!("spearman_rho\n{rho:.6}\n"))
                .context("cannot write correlation")
                .map_err(CliError::input)?;
            println!("spearman_rho: {rho:.4}");
            println!("correlation: {}", corr_path.display());
        }
        Err(e) => log::warn!("correlation not computed: {e}"),
    }

    let generations = args
        .generations
        .clone()
        .or_else(|| config.stats.generations_path.clone());
    if let Some(generations_path) = generations {
        let lexicon = config.lexicon.load().map_err(CliError::input)?;
        let groups = read_generations(&generations_path).map_err(CliError::input)?;
        let stats = generation_rethink_stats(&groups, &lexicon);
        let path = out_dir.join("generation_rethink.tsv");
        write_generation_tsv(&stats, &path).map_err(CliError::input)?;
        println!("generation_stats: {}", path.display());
    }

    if let Some(manifests) = &args.overlap {
        let a = read_selection(&manifests[0]).map_err(CliError::input)?;
        let b = read_selection(&manifests[1]).map_err(CliError::input)?;
        let report = selection_overlap(&a, &b).map_err(|e| CliError::input(e.into()))?;
        let path = out_dir.join("selection_overlap.tsv");
        let mut body = String::from("manifest_a\tmanifest_b\tjaccard\tshared\tsize_a\tsize_b\n");
        body.push_str(&format!(
            "{}\t{}\t{:.6}\t{}\t{}\t{}\n",
            report.pair.0, report.pair.1, report.jaccard, report.shared, report.size_a, report.size_b
        ));
        std::fs::write(&path, body)
            .context("cannot write overlap")
            .map_err(CliError::input)?;
        println!("jaccard: {:.4}", report.jaccard);
        println!("overlap: {}", path.display());
    }

    write_run_manifest(&out_dir, "stats", config, &[&metrics_path])?;
    Ok(())
}

fn write_binned_tsv(binned: &cotsel_core::report::BinnedStats, path: &Path) -> anyhow::Result<()> {
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    );
    let keywords: Vec<&String> = binned
        .per_bin
        .first()
        .map(|b| b.mean_keyword_counts.keys().collect())
        .unwrap_or_default();
    let mut header = vec![
        "bin".to_string(),
        "len_lo".to_string(),
        "len_hi".to_string(),
        "count".to_string(),
        "mean_rethink_total".to_string(),
        "mean_rethink_density".to_string(),
    ];
    header.extend(keywords.iter().map(|kw| format!("mean_{kw}")));
    writeln!(file, "{}", header.join("\t"))?;
    for (i, bin) in binned.per_bin.iter().enumerate() {
        let mut fields = vec![
            i.to_string(),
            bin.lo.to_string(),
            bin.hi.to_string(),
            bin.count.to_string(),
            format!("{:.6}", bin.mean_rethink_total),
            format!("{:.6}", bin.mean_rethink_density),
        ];
        fields.extend(keywords.iter().map(|kw| format!("{:.6}", bin.mean_keyword_counts[*kw])));
        writeln!(file, "{}", fields.join("\t"))?;
    }
    Ok(())
}

fn read_generations(path: &Path) -> anyhow::Result<Vec<(String, Vec<String>)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read generations {}", path.display()))?;
    let mut groups = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).with_context(|| format!("line {}: invalid JSON", i + 1))?;
        let group = value
            .get("group")
            .and_then(|g| g.as_str())
            .with_context(|| format!("line {}: missing `group`", i + 1))?
            .to_string();
        let solutions: Vec<String> = value
            .get("solutions")
            .and_then(|s| s.as_array())
            .with_context(|| format!("line {}: missing `solutions`", i + 1))?
            .iter()
            .filter_map(|v| v.as_str().map(|s| s.to_string()))
            .collect();
        groups.push((group, solutions));
    }
    Ok(groups)
}

fn write_generation_tsv(
    stats: &[cotsel_core::report::GroupRethinkStats],
    path: &Path,
) -> anyhow::Result<()> {
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    );
    let keywords: Vec<&String> = stats
        .first()
        .map(|s| s.keyword_totals.keys().collect())
        .unwrap_or_default();
    let mut header = vec![
        "group".to_string(),
        "n_solutions".to_string(),
        "rethink_total".to_string(),
        "mean_rethink_per_solution".to_string(),
        "mean_chars".to_string(),
        "mean_words".to_string(),
    ];
    for kw in &keywords {
        header.push(format!("total_{kw}"));
    }
    for kw in &keywords {
        header.push(format!("mean_{kw}"));
    }
    writeln!(file, "{}", header.join("\t"))?;
    for s in stats {
        let mut fields = vec![
            s.group.clone(),
            s.n_solutions.to_string(),
            s.rethink_total.to_string(),
            format!("{:.6}", s.mean_rethink_per_solution),
            format!("{:.2}", s.mean_chars),
            format!("{:.2}", s.mean_words),
        ];
        for kw in &keywords {
            fields.push(s.keyword_totals[*kw].to_string());
        }
        for kw in &keywords {
            fields.push(format!("{:.6}", s.mean_per_solution[*kw]));
        }
        writeln!(file, "{}", fields.join("\t"))?;
    }
    Ok(())
}

fn read_selection(path: &Path) -> anyhow::Result<Selection> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read selection manifest {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid selection manifest {}", path.display()))
}
