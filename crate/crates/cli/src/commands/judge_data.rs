use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;

use cotsel_core::scoring::{build_judge_dataset, DifficultyLabel};

use crate::config::RunConfig;
use crate::manifest::write_run_manifest;
use crate::{CliError, CliResult};

use super::ensure_output_dir;

#[derive(Args)]
pub struct JudgeDataArgs {
    /// Labels file: lines of {"question": ..., "label": "easy"|"hard"}
    #[arg(long)]
    pub labels: PathBuf,
}

pub fn run(config: &RunConfig, args: JudgeDataArgs) -> CliResult {
    let out_dir = ensure_output_dir(config)?;
    let labels = read_labels(&args.labels).map_err(CliError::input)?;
    let (examples, report) =
        build_judge_dataset(&labels).map_err(|e| CliError::input(e.into()))?;

    // same record layout as the SFT subset: question + response
    let path = out_dir.join("judge_dataset.jsonl");
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(&path)
            .context("cannot write judge dataset")
            .map_err(CliError::input)?,
    );
    for example in &examples {
        let row = serde_json::json!({
            "question": example.question,
            "response": example.label.to_string(),
        });
        writeln!(file, "{row}").map_err(|e| CliError::input(e.into()))?;
    }
    file.flush().map_err(|e| CliError::input(e.into()))?;

    write_run_manifest(&out_dir, "emit-judge-data", config, &[&args.labels])?;

    println!("examples: {}", examples.len());
    println!("hard: {}", report.hard);
    println!("easy: {}", report.easy);
    println!("deduplicated: {}", report.deduplicated);
    for warning in &report.warnings {
        println!("warning: {warning}");
    }
    println!("judge_dataset: {}", path.display());
    Ok(())
}

fn read_labels(path: &std::path::Path) -> anyhow::Result<Vec<(String, DifficultyLabel)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read labels file {}", path.display()))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).with_context(|| format!("line {}: invalid JSON", i + 1))?;
        let question = value
            .get("question")
            .and_then(|q| q.as_str())
            .with_context(|| format!("line {}: missing `question`", i + 1))?
            .to_string();
        let label = match value.get("label").and_then(|l| l.as_str()) {
            Some("easy") => DifficultyLabel::Easy,
            Some("hard") => DifficultyLabel::Hard,
            other => anyhow::bail!("line {}: bad label {:?} (expected easy|hard)", i + 1, other),
        };
        labels.push((question, label));
    }
    Ok(labels)
}
