use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;

use cotsel_core::verifier::{extract_boxed, score_sample, EvalSample, ExtractedAnswer, DEFAULT_REL_TOL};

use crate::config::RunConfig;
use crate::manifest::write_run_manifest;
use crate::{CliError, CliResult};

use super::ensure_output_dir;

#[derive(Args)]
pub struct EvalArgs {
    /// Eval file: lines of {"problem_id": ..., "gold": ..., "solutions": [...]}
    #[arg(long)]
    pub samples: PathBuf,

    /// Vote over the first k candidates (default: all per problem)
    #[arg(long)]
    pub k: Option<usize>,

    /// Relative tolerance for numeric equality
    #[arg(long, default_value_t = DEFAULT_REL_TOL)]
    pub rel_tol: f64,
}

pub fn run(config: &RunConfig, args: EvalArgs) -> CliResult {
    let out_dir = ensure_output_dir(config)?;
    let samples = read_samples(&args.samples).map_err(CliError::input)?;
    if samples.is_empty() {
        return Err(CliError::input(anyhow::anyhow!(
            "no samples in {}",
            args.samples.display()
        )));
    }

    let verdicts_path = out_dir.join("verdicts.tsv");
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(&verdicts_path)
            .context("cannot write verdicts")
            .map_err(CliError::input)?,
    );
    writeln!(file, "problem_id\tk\tpass_at_1\tmaj_at_k\tmajority_answer\tcorrect_count")
        .map_err(|e| CliError::input(e.into()))?;

    let mut pass_sum = 0.0;
    let mut maj_hits = 0usize;
    for sample in &samples {
        let k = args.k.unwrap_or(sample.candidates.len());
        let verdict = score_sample(sample, k, args.rel_tol)
            .with_context(|| format!("problem {}", sample.problem_id))
            .map_err(CliError::input)?;
        writeln!(
            file,
            "{}\t{}\t{:.6}\t{}\t{}\t{}",
            verdict.problem_id,
            verdict.k,
            verdict.pass_at_1,
            verdict.maj_at_k as u8,
            verdict.majority_answer,
            verdict.correct_count
        )
        .map_err(|e| CliError::input(e.into()))?;
        pass_sum += verdict.pass_at_1;
        maj_hits += verdict.maj_at_k as usize;
    }
    file.flush().map_err(|e| CliError::input(e.into()))?;

    write_run_manifest(&out_dir, "eval", config, &[&args.samples])?;

    let n = samples.len();
    println!("problems: {n}");
    println!("pass_at_1: {:.6}", pass_sum / n as f64);
    println!("maj_at_k: {:.6}", maj_hits as f64 / n as f64);
    println!("verdicts: {}", verdicts_path.display());
    Ok(())
}

fn read_samples(path: &std::path::Path) -> anyhow::Result<Vec<EvalSample>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read eval file {}", path.display()))?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).with_context(|| format!("line {}: invalid JSON", i + 1))?;
        let problem_id = value
            .get("problem_id")
            .map(|p| match p {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .with_context(|| format!("line {}: missing `problem_id`", i + 1))?;
        let gold_raw = value
            .get("gold")
            .and_then(|g| g.as_str())
            .with_context(|| format!("line {}: missing `gold`", i + 1))?;
        let solutions = value
            .get("solutions")
            .and_then(|s| s.as_array())
            .with_context(|| format!("line {}: missing `solutions`", i + 1))?;
        let candidates: Vec<ExtractedAnswer> = solutions
            .iter()
            .filter_map(|s| s.as_str())
            .map(extract_boxed)
            .collect();
        samples.push(EvalSample {
            problem_id,
            gold: ExtractedAnswer::from_raw(gold_raw),
            candidates,
        });
    }
    Ok(samples)
}
