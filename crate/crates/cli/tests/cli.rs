//! End-to-end CLI tests: exit codes, file outputs, determinism.

use std::path::Path;
use std::process::{Command, Output};

use cotsel_testkit::{synthetic_pool, write_pool_file, MockBehavior, MockEndpoint};

fn cotsel() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cotsel"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    cotsel()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run cotsel")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout(output),
        stderr(output)
    );
}

fn write_small_pool(path: &Path, n: usize) {
    let records = synthetic_pool(n, 11);
    write_pool_file(&records, path);
}

#[test]
fn ingest_valid_pool_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    write_small_pool(&dir.path().join("pool.jsonl"), 20);
    let out = run_in(dir.path(), &["--output-dir", "out", "ingest", "--pool", "pool.jsonl"]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("records: 20"));
    assert!(dir.path().join("out/pool.normalized.jsonl").exists());
    assert!(dir.path().join("out/run_manifest_ingest.json").exists());
}

#[test]
fn ingest_missing_file_exits_two_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["ingest", "--pool", "no-such-pool.jsonl"]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("no-such-pool.jsonl"));
}

#[test]
fn ingest_tolerates_sparse_malformed_lines() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.jsonl");
    let records = synthetic_pool(100, 3);
    let mut body = String::new();
    for (i, r) in records.iter().enumerate() {
        if i == 50 {
            body.push_str("{{{ truly broken line\n");
        }
        let mut buf = Vec::new();
        cotsel_core::corpus::write_pool([r], &mut buf).unwrap();
        body.push_str(&String::from_utf8(buf).unwrap());
    }
    std::fs::write(&pool, body).unwrap();
    let out = run_in(dir.path(), &["--output-dir", "out", "ingest", "--pool", "pool.jsonl"]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("skipped_malformed_lines: 1"));
    assert!(stdout(&out).contains("records: 100"));
}

#[test]
fn ingest_unparseable_pool_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pool.jsonl"), "").unwrap();
    let out = run_in(dir.path(), &["ingest", "--pool", "pool.jsonl"]);
    assert_exit(&out, 2);
}

#[test]
fn analyze_writes_one_row_per_record_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_small_pool(&dir.path().join("pool.jsonl"), 3);
    let out = run_in(dir.path(), &["--output-dir", "out", "analyze", "--pool", "pool.jsonl"]);
    assert_exit(&out, 0);
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 4, "header + 3 rows");

    let out2 = run_in(dir.path(), &["--output-dir", "out", "analyze", "--pool", "pool.jsonl"]);
    assert_exit(&out2, 0);
    let metrics2 = std::fs::read_to_string(dir.path().join("out/metrics.tsv")).unwrap();
    assert_eq!(metrics, metrics2, "rerun must be byte-identical");
}

#[test]
fn analyze_empty_pool_writes_empty_metrics_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pool.jsonl"), "\n\n").unwrap();
    let out = run_in(dir.path(), &["--output-dir", "out", "analyze", "--pool", "pool.jsonl"]);
    assert_exit(&out, 0);
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 1, "header only");
}

#[test]
fn analyze_missing_pool_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["analyze", "--pool", "absent.jsonl"]);
    assert_exit(&out, 2);
}

fn prepare_analyzed_pool(dir: &Path, n: usize) {
    write_small_pool(&dir.join("pool.jsonl"), n);
    let out = run_in(dir, &["--output-dir", "out", "analyze", "--pool", "pool.jsonl"]);
    assert_exit(&out, 0);
}

#[test]
fn select_longest_ten_percent_of_hundred() {
    let dir = tempfile::tempdir().unwrap();
    prepare_analyzed_pool(dir.path(), 100);
    let out = run_in(
        dir.path(),
        &[
            "--output-dir", "out", "select", "--pool", "pool.jsonl",
            "--strategy", "longest", "--fraction", "0.10",
        ],
    );
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("k: 10"));
    let subset = std::fs::read_to_string(dir.path().join("out/subset.jsonl")).unwrap();
    assert_eq!(subset.lines().count(), 10);
}

#[test]
fn select_repeat_run_same_manifest_hash() {
    let dir = tempfile::tempdir().unwrap();
    prepare_analyzed_pool(dir.path(), 50);
    let args = [
        "--output-dir", "out", "select", "--pool", "pool.jsonl",
        "--strategy", "longest", "--fraction", "0.2",
    ];
    let first = run_in(dir.path(), &args);
    let second = run_in(dir.path(), &args);
    assert_exit(&first, 0);
    let hash = |o: &Output| {
        stdout(o)
            .lines()
            .find(|l| l.starts_with("manifest_hash:"))
            .unwrap()
            .to_string()
    };
    assert_eq!(hash(&first), hash(&second));
    let subset = std::fs::read(dir.path().join("out/subset.jsonl")).unwrap();
    let manifest = std::fs::read(dir.path().join("out/selection.manifest.json")).unwrap();
    let third = run_in(dir.path(), &args);
    assert_exit(&third, 0);
    assert_eq!(std::fs::read(dir.path().join("out/subset.jsonl")).unwrap(), subset);
    assert_eq!(
        std::fs::read(dir.path().join("out/selection.manifest.json")).unwrap(),
        manifest
    );
}

#[test]
fn select_joint_without_scores_exits_two_naming_score() {
    let dir = tempfile::tempdir().unwrap();
    prepare_analyzed_pool(dir.path(), 20);
    let out = run_in(
        dir.path(),
        &["--output-dir", "out", "select", "--pool", "pool.jsonl", "--strategy", "joint"],
    );
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("cotsel score"), "stderr: {}", stderr(&out));
}

#[test]
fn select_joint_w_zero_matches_longest_selection() {
    let dir = tempfile::tempdir().unwrap();
    prepare_analyzed_pool(dir.path(), 60);
    let server = MockEndpoint::start(MockBehavior::DeterministicPerPrompt);
    let score_out = run_in(
        dir.path(),
        &[
            "--output-dir", "out", "score", "--pool", "pool.jsonl",
            "--mode", "judge", "--endpoint-url", &server.url(),
        ],
    );
    assert_exit(&score_out, 0);

    let joint = run_in(
        dir.path(),
        &[
            "--output-dir", "out", "select", "--pool", "pool.jsonl",
            "--strategy", "joint", "--w", "0", "--fraction", "0.1",
        ],
    );
    assert_exit(&joint, 0);
    let joint_ids = subset_questions(&dir.path().join("out/subset.jsonl"));

    let longest = run_in(
        dir.path(),
        &[
            "--output-dir", "out", "select", "--pool", "pool.jsonl",
            "--strategy", "longest", "--fraction", "0.1",
        ],
    );
    assert_exit(&longest, 0);
    let longest_ids = subset_questions(&dir.path().join("out/subset.jsonl"));
    assert_eq!(joint_ids, longest_ids);
}

fn subset_questions(path: &Path) -> std::collections::BTreeSet<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["question"].as_str().unwrap().to_string()
        })
        .collect()
}

#[test]
fn score_judge_mode_scores_all_then_serves_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    write_small_pool(&dir.path().join("pool.jsonl"), 10);
    let server = MockEndpoint::start(MockBehavior::DeterministicPerPrompt);
    let args = [
        "--output-dir", "out", "score", "--pool", "pool.jsonl",
        "--mode", "judge", "--endpoint-url", &server.url(),
    ];
    let first = run_in(dir.path(), &args);
    assert_exit(&first, 0);
    assert!(stdout(&first).contains("scored: 10"));
    assert_eq!(server.requests(), 10);

    let second = run_in(dir.path(), &args);
    assert_exit(&second, 0);
    assert!(stdout(&second).contains("cached: 10"));
    assert!(stdout(&second).contains("scored: 0"));
    assert_eq!(server.requests(), 10, "cached rerun must not hit the endpoint");
}

#[test]
fn score_total_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    write_small_pool(&dir.path().join("pool.jsonl"), 4);
    let server = MockEndpoint::start(MockBehavior::FailAll { status: 500 });
    let config = r#"
[judge]
retries = 0
backoff_base_ms = 1
timeout_ms = 2000
"#;
    std::fs::write(dir.path().join("cotsel.toml"), config).unwrap();
    let out = run_in(
        dir.path(),
        &[
            "--config", "cotsel.toml", "--output-dir", "out", "score",
            "--pool", "pool.jsonl", "--mode", "judge", "--endpoint-url", &server.url(),
        ],
    );
    assert_exit(&out, 3);
}

#[test]
fn score_solve_rate_writes_labels() {
    let dir = tempfile::tempdir().unwrap();
    // all records share the same synthetic gold? No — use a pool whose golds
    // the mock never matches, so every record labels hard.
    write_small_pool(&dir.path().join("pool.jsonl"), 5);
    let server = MockEndpoint::start(MockBehavior::FixedSolutions {
        texts: vec!["my answer is \\boxed{never-correct}".into()],
    });
    let out = run_in(
        dir.path(),
        &[
            "--output-dir", "out", "score", "--pool", "pool.jsonl",
            "--mode", "solve-rate", "--endpoint-url", &server.url(),
        ],
    );
    assert_exit(&out, 0);
    let labels = std::fs::read_to_string(dir.path().join("out/solve_labels.jsonl")).unwrap();
    assert_eq!(labels.lines().count(), 5);
    assert!(labels.lines().all(|l| l.contains("\"label\":\"hard\"")));
}

#[test]
fn eval_all_correct_fixture() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("eval.jsonl"),
        r#"{"problem_id":"p1","gold":"4","solutions":["\\boxed{4}","ends \\boxed{4}"]}"#,
    )
    .unwrap();
    let out = run_in(dir.path(), &["--output-dir", "out", "eval", "--samples", "eval.jsonl"]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("pass_at_1: 1.000000"));
    assert!(stdout(&out).contains("maj_at_k: 1.000000"));
}

#[test]
fn eval_nine_of_sixteen_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let mut solutions: Vec<String> = Vec::new();
    for _ in 0..9 {
        solutions.push("\\boxed{7}".into());
    }
    for _ in 0..7 {
        solutions.push("\\boxed{8}".into());
    }
    let line = serde_json::json!({"problem_id": "p", "gold": "7", "solutions": solutions});
    std::fs::write(dir.path().join("eval.jsonl"), format!("{line}\n")).unwrap();
    let out = run_in(dir.path(), &["--output-dir", "out", "eval", "--samples", "eval.jsonl"]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("pass_at_1: 0.562500"), "stdout: {}", stdout(&out));
}

#[test]
fn eval_empty_candidates_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("eval.jsonl"),
        r#"{"problem_id":"p1","gold":"4","solutions":[]}"#,
    )
    .unwrap();
    let out = run_in(dir.path(), &["--output-dir", "out", "eval", "--samples", "eval.jsonl"]);
    assert_exit(&out, 2);
}

#[test]
fn emit_judge_data_maps_labels() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("labels.jsonl"),
        concat!(
            r#"{"question":"hard one","label":"hard"}"#, "\n",
            r#"{"question":"easy one","label":"easy"}"#, "\n",
        ),
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &["--output-dir", "out", "emit-judge-data", "--labels", "labels.jsonl"],
    );
    assert_exit(&out, 0);
    let dataset = std::fs::read_to_string(dir.path().join("out/judge_dataset.jsonl")).unwrap();
    assert!(dataset.contains(r#""response":"1""#));
    assert!(dataset.contains(r#""response":"0""#));
}

#[test]
fn stats_emits_tables_and_overlap() {
    let dir = tempfile::tempdir().unwrap();
    prepare_analyzed_pool(dir.path(), 200);
    let select = |strategy: &str, out_dir: &str| {
        let out = run_in(
            dir.path(),
            &[
                "--output-dir", out_dir, "select", "--pool", "pool.jsonl",
                "--strategy", strategy, "--fraction", "0.2",
                "--metrics", "out/metrics.tsv",
            ],
        );
        assert_exit(&out, 0);
    };
    select("longest", "sel-a");
    select("shortest", "sel-b");
    let out = run_in(
        dir.path(),
        &[
            "--output-dir", "out", "stats", "--metrics", "out/metrics.tsv",
            "--bins", "4",
            "--overlap", "sel-a/selection.manifest.json", "sel-b/selection.manifest.json",
        ],
    );
    assert_exit(&out, 0);
    assert!(dir.path().join("out/rethink_by_length_bin.tsv").exists());
    assert!(dir.path().join("out/length_rethink_correlation.tsv").exists());
    assert!(dir.path().join("out/selection_overlap.tsv").exists());
    // longest and shortest quintiles of 200 distinct-length traces are disjoint
    assert!(stdout(&out).contains("jaccard: 0.0000"), "stdout: {}", stdout(&out));
}

#[test]
fn ingest_is_byte_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    write_small_pool(&dir.path().join("pool.jsonl"), 25);
    let args = ["--output-dir", "out", "ingest", "--pool", "pool.jsonl"];
    assert_exit(&run_in(dir.path(), &args), 0);
    let pool1 = std::fs::read(dir.path().join("out/pool.normalized.jsonl")).unwrap();
    let manifest1 = std::fs::read(dir.path().join("out/run_manifest_ingest.json")).unwrap();
    assert_exit(&run_in(dir.path(), &args), 0);
    assert_eq!(std::fs::read(dir.path().join("out/pool.normalized.jsonl")).unwrap(), pool1);
    assert_eq!(std::fs::read(dir.path().join("out/run_manifest_ingest.json")).unwrap(), manifest1);
}

#[test]
fn select_conversational_sft_format() {
    let dir = tempfile::tempdir().unwrap();
    prepare_analyzed_pool(dir.path(), 10);
    let out = run_in(
        dir.path(),
        &[
            "--output-dir", "out", "select", "--pool", "pool.jsonl",
            "--strategy", "longest", "--count", "2", "--sft-format", "conversational",
        ],
    );
    assert_exit(&out, 0);
    let subset = std::fs::read_to_string(dir.path().join("out/subset.jsonl")).unwrap();
    for line in subset.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["messages"][0]["role"], "user");
        assert_eq!(v["messages"][1]["role"], "assistant");
    }
}

#[test]
fn pipeline_end_to_end_joint_selection() {
    let dir = tempfile::tempdir().unwrap();
    write_small_pool(&dir.path().join("pool.jsonl"), 200);
    let server = MockEndpoint::start(MockBehavior::DeterministicPerPrompt);

    for args in [
        vec!["--output-dir", "out", "ingest", "--pool", "pool.jsonl"],
        vec!["--output-dir", "out", "analyze", "--pool", "pool.jsonl"],
        vec![
            "--output-dir", "out", "score", "--pool", "pool.jsonl",
            "--mode", "judge", "--endpoint-url",
        ],
    ] {
        let mut full = args.clone();
        let url = server.url();
        if args.last() == Some(&"--endpoint-url") {
            full.push(&url);
            let out = run_in(dir.path(), &full);
            assert_exit(&out, 0);
        } else {
            let out = run_in(dir.path(), &full);
            assert_exit(&out, 0);
        }
    }

    let select = run_in(
        dir.path(),
        &[
            "--output-dir", "out", "select", "--pool", "pool.jsonl",
            "--strategy", "joint", "--w", "0.25", "--fraction", "0.10",
        ],
    );
    assert_exit(&select, 0);
    assert!(stdout(&select).contains("k: 20"));

    // subset questions must come from the pool and ranks must cover the pool
    let subset = subset_questions(&dir.path().join("out/subset.jsonl"));
    assert_eq!(subset.len(), 20);
    let ranks = std::fs::read_to_string(dir.path().join("out/ranks.tsv")).unwrap();
    assert_eq!(ranks.lines().count(), 201, "header + one rank row per record");

    let stats = run_in(
        dir.path(),
        &["--output-dir", "out", "stats", "--metrics", "out/metrics.tsv", "--bins", "5"],
    );
    assert_exit(&stats, 0);
    assert!(stdout(&stats).contains("spearman_rho:"));
}

#[test]
fn config_file_defaults_flow_into_commands() {
    let dir = tempfile::tempdir().unwrap();
    write_small_pool(&dir.path().join("pool.jsonl"), 30);
    std::fs::write(
        dir.path().join("cotsel.toml"),
        r#"
output_dir = "configured-out"

[pool]
path = "pool.jsonl"

[selection]
strategy = "random"
fraction = 0.5
seed = 9
"#,
    )
    .unwrap();
    let out = run_in(dir.path(), &["--config", "cotsel.toml", "select"]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("k: 15"));
    assert!(dir.path().join("configured-out/subset.jsonl").exists());
}
