//! Seeded synthetic long-CoT pool generator.
//!
//! Traces are paragraph-structured: a uniform number of steps, each step a
//! short filler sentence that opens with a rethinking keyword with fixed
//! probability. Longer traces therefore carry proportionally more rethinking
//! keywords — the structural property the report statistics measure — while
//! step lengths add noise so token length is not a pure function of step
//! count.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cotsel_core::corpus::{InstructionRecord, RecordId};

const KEYWORDS: &[&str] = &["Wait", "Alternatively", "Maybe", "However"];
const FILLER: &[&str] = &[
    "the", "derivative", "of", "this", "expression", "equals", "zero", "so", "we", "substitute",
    "and", "simplify", "both", "sides", "which", "gives", "a", "quadratic", "in", "terms",
    "factor", "then", "check", "sign", "interval", "value", "sum", "product", "root", "case",
];

const CATEGORIES: &[&str] = &["algebra", "combinatorics", "geometry", "number theory"];

/// Generates `n` records with seeded, reproducible content.
pub fn synthetic_pool(n: usize, seed: u64) -> Vec<InstructionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let n_steps = rng.gen_range(1..=60);
            let mut steps = Vec::with_capacity(n_steps);
            for _ in 0..n_steps {
                let mut words = Vec::new();
                if rng.gen_bool(0.35) {
                    words.push(KEYWORDS[rng.gen_range(0..KEYWORDS.len())].to_string());
                }
                let sentence_len = rng.gen_range(6..=24);
                for _ in 0..sentence_len {
                    words.push(FILLER[rng.gen_range(0..FILLER.len())].to_string());
                }
                let mut sentence = words.join(" ");
                sentence.push('.');
                steps.push(sentence);
            }
            let trace = steps.join("\n\n");
            let gold = rng.gen_range(1..=9999).to_string();
            let question = format!(
                "Problem {i}: determine the value of expression number {}.",
                rng.gen_range(1..=100_000)
            );
            let answer_section = format!("The final answer is \\boxed{{{gold}}}.");
            let raw_response = format!("<think>{trace}</think>{answer_section}");
            InstructionRecord {
                id: RecordId::new(format!("syn{i:06}")),
                question,
                raw_response,
                trace: Some(trace),
                answer_section,
                gold_answer: Some(gold),
                category: Some(CATEGORIES[i % CATEGORIES.len()].to_string()),
                source: "synthetic".into(),
            }
        })
        .collect()
}

/// Writes records to a canonical pool file.
pub fn write_pool_file(records: &[InstructionRecord], path: &Path) {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).expect("create pool file"));
    cotsel_core::corpus::write_pool(records.iter(), &mut file).expect("write pool");
    file.flush().expect("flush pool");
}
