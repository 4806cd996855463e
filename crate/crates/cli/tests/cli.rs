//! End-to-end checks of the binary: exit codes, stdout shapes, and
//! checkpoint round trips, driven through `std::process::Command`.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kgrag() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kgrag"))
}

fn figure4_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/figure4")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

#[test]
fn kg_load_check_counts_and_vocab_dump() {
    let dir = tempfile::tempdir().unwrap();
    let triples = write(dir.path(), "kg.tsv", "a\tr\tb\nb\tr\tc\n");
    let vocab = dir.path().join("vocab");
    let out = kgrag()
        .args(["kg", "load-check", "--triples"])
        .arg(&triples)
        .arg("--dump-vocab")
        .arg(&vocab)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("entities: 3"));
    assert!(text.contains("relations: 1"));
    assert!(text.contains("triples: 2"));
    assert!(vocab.join("entities.tsv").exists());
}

#[test]
fn kg_load_check_exit_codes() {
    let out = kgrag()
        .args(["kg", "load-check", "--triples", "/nonexistent/kg.tsv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "missing file is a usage error");

    let dir = tempfile::tempdir().unwrap();
    let triples = write(dir.path(), "kg.tsv", "only two\tfields\n");
    let out = kgrag()
        .args(["kg", "load-check", "--triples"])
        .arg(&triples)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "malformed content is a data error");
}

#[test]
fn kge_train_round_trips_and_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    for i in 0..12 {
        lines.push_str(&format!("e{i}\tnext\te{}\n", (i + 1) % 12));
    }
    let triples = write(dir.path(), "kg.tsv", &lines);

    let train = |out_name: &str, seed: &str| -> Output {
        kgrag()
            .args(["kge", "train", "--triples"])
            .arg(&triples)
            .arg("--out")
            .arg(dir.path().join(out_name))
            .args(["--dim", "6", "--epochs", "10", "--seed", seed])
            .output()
            .unwrap()
    };
    let out = train("a.kgec", "7");
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("final loss:"));
    assert!(text.contains("filtered MRR"));

    // Identical seed, identical checkpoint bytes.
    train("b.kgec", "7");
    let a = std::fs::read(dir.path().join("a.kgec")).unwrap();
    let b = std::fs::read(dir.path().join("b.kgec")).unwrap();
    assert_eq!(a, b);
    // Different seed, different bytes.
    train("c.kgec", "8");
    let c = std::fs::read(dir.path().join("c.kgec")).unwrap();
    assert_ne!(a, c);

    // Scoring against the checkpoint works and vocabularies line up.
    let out = kgrag()
        .args(["kge", "score", "--checkpoint"])
        .arg(dir.path().join("a.kgec"))
        .arg("--triples")
        .arg(&triples)
        .args(["--head", "e0", "--relation", "next", "--tail", "e1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(stdout(&out).contains("kge_score:"));
}

#[test]
fn kge_train_missing_file_is_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = kgrag()
        .args(["kge", "train", "--triples", "/nonexistent/kg.tsv", "--out"])
        .arg(dir.path().join("x.kgec"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn kge_score_hand_computed_and_unverifiable() {
    let dir = tempfile::tempdir().unwrap();
    let triples = write(dir.path(), "kg.tsv", "a\tr\tb\n");
    // Hand-set d=1 tables: score(a, r, b) = 2 * 5 * 3 = 30.
    let kg = kgrag_core::kg::load_kg(&triples, None).unwrap();
    let model = kgrag_core::kge::ComplExModel::from_parts(
        1,
        2,
        1,
        0,
        vec![2.0, 3.0],
        vec![0.0, 0.0],
        vec![5.0],
        vec![0.0],
    )
    .unwrap();
    let ckpt = dir.path().join("hand.kgec");
    kgrag_core::kge::save_checkpoint(&ckpt, &model, kg.entity_labels(), kg.relation_labels())
        .unwrap();

    let score = |head: &str, tail: &str| -> Output {
        kgrag()
            .args(["kge", "score", "--checkpoint"])
            .arg(&ckpt)
            .arg("--triples")
            .arg(&triples)
            .args(["--head", head, "--relation", "r", "--tail", tail])
            .output()
            .unwrap()
    };

    // The sole reference triple scores 30, so its relative score is 0.
    let out = score("a", "b");
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("kge_score: 30.000000"), "got: {text}");
    assert!(text.contains("reference_mean: 30.000000"));
    assert!(text.contains("relative_score: 0.000000"));

    // Unknown head is a policy output, not an error.
    let out = score("nobody", "b");
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).trim(), "unverifiable");

    // Mapped head without outgoing edges: score prints, relative does not.
    let out = score("b", "a");
    assert!(out.status.success());
    assert!(stdout(&out).contains("relative_score: unverifiable"));
}

#[test]
fn ask_figure4_case() {
    let config = figure4_dir().join("config.toml");
    let question = "Whose teacher was Bernhard Heiden's, and what nationality?";
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let out = kgrag()
        .args(["ask", "--config"])
        .arg(&config)
        .args(["--question", question, "--deterministic", "--trace"])
        .arg(&trace)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("Paul Hindemith"));
    assert!(text.contains("German"));
    assert!(text.contains("below_threshold"));

    // The written record shows the rejected turn-0 triple.
    let record = std::fs::read_to_string(&trace).unwrap();
    assert!(record.contains("Arnold Schoenberg"));

    // Identical invocations print identical bytes under --deterministic.
    let again = kgrag()
        .args(["ask", "--config"])
        .arg(&config)
        .args(["--question", question, "--deterministic"])
        .output()
        .unwrap();
    let third = kgrag()
        .args(["ask", "--config"])
        .arg(&config)
        .args(["--question", question, "--deterministic"])
        .output()
        .unwrap();
    assert_eq!(again.stdout, third.stdout);
}

#[test]
fn ask_max_turns_zero_answers_once() {
    let config = figure4_dir().join("config.toml");
    let out = kgrag()
        .args(["ask", "--config"])
        .arg(&config)
        .args([
            "--question",
            "Whose teacher was Bernhard Heiden's, and what nationality?",
            "--max-turns",
            "0",
            "--deterministic",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("max_turns (t = 0)"));
    assert!(text.contains("Arnold Schoenberg"));
}

#[test]
fn ask_unresolved_theta0_is_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "kg.tsv", "x\tr\ty\n");
    write(
        dir.path(),
        "fixtures.jsonl",
        r#"{"role": "answer", "turn": null, "key": "*", "response": "y"}
{"role": "triple_extract", "turn": null, "key": "*", "response": "(x, r, y)"}
"#,
    );
    let config = write(
        dir.path(),
        "run.toml",
        r#"
[kg]
triples = "kg.tsv"

[kge]
dim = 2
epochs = 2

[controller]

[gateway]
backend = "fixture"
fixtures = "fixtures.jsonl"

[pipeline]
knowledge_models = ["m1"]
"#,
    );
    let ask = |extra: &[&str]| -> Output {
        kgrag()
            .args(["ask", "--config"])
            .arg(&config)
            .args(["--question", "why?"])
            .args(extra)
            .output()
            .unwrap()
    };
    assert_eq!(ask(&[]).status.code(), Some(2));
    // An explicit flag unblocks the same config.
    assert_eq!(ask(&["--theta0", "1.0"]).status.code(), Some(0));
}

#[test]
fn ask_records_format_is_json() {
    let config = figure4_dir().join("config.toml");
    let out = kgrag()
        .args(["ask", "--config"])
        .arg(&config)
        .args([
            "--question",
            "Whose teacher was Bernhard Heiden's, and what nationality?",
            "--format",
            "records",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let value: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(value["stop_reason"], "below_threshold");
    assert_eq!(value["turns"].as_array().unwrap().len(), 2);
}

#[test]
fn eval_reports_metrics_and_histogram() {
    let config = figure4_dir().join("config.toml");
    let dir = tempfile::tempdir().unwrap();
    let dataset = write(
        dir.path(),
        "data.jsonl",
        r#"{"id": "f4", "question": "Whose teacher was Bernhard Heiden's, and what nationality?", "answers": ["Paul Hindemith, German"]}
"#,
    );
    let report = dir.path().join("report.jsonl");
    let out = kgrag()
        .args(["eval", "--config"])
        .arg(&config)
        .arg("--dataset")
        .arg(&dataset)
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("items: 1"));
    assert!(text.contains("mean EM:"));
    assert!(text.contains("t = 1: 1 (1.0000)"));
    assert!(text.contains("llama3-8b"));
    let report_text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(report_text.lines().count(), 2);

    // Records format emits one JSON summary.
    let out = kgrag()
        .args(["eval", "--config"])
        .arg(&config)
        .arg("--dataset")
        .arg(&dataset)
        .args(["--format", "records"])
        .output()
        .unwrap();
    let value: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(value["items"], 1);
}

#[test]
fn eval_missing_dataset_is_exit_two() {
    let config = figure4_dir().join("config.toml");
    let out = kgrag()
        .args(["eval", "--config"])
        .arg(&config)
        .args(["--dataset", "/nonexistent/data.jsonl"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
