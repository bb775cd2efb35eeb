use std::path::Path;
use std::process::{Command, Output};

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetero-rlhf"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn small_config(dir: &Path, extra: serde_json::Value) -> String {
    let mut cfg = serde_json::json!({
        "seed": 3,
        "sim": {"n_workers": 8, "n_latent_groups": 2, "feature_dim": 6, "embedding_dim": 3, "pairs_per_worker": 30},
        "embedding_dim": 3,
        "train": {"epochs": 3},
        "policy": {"n_sets": 2},
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("run.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn subcommands_chain_like_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d, serde_json::json!({}));
    let run = |args: &[&str]| {
        let mut full = vec!["--config", cfg.as_str(), "--out", "steps"];
        full.extend_from_slice(args);
        let out = bin(d, &full);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["simulate"]);
    run(&["split", "--corpus", "steps/corpus.jsonl"]);
    run(&["train-joint", "--corpus", "steps/train.jsonl"]);
    run(&["similarity", "--model", "steps/backbone.json"]);
    run(&["cluster", "--model", "steps/backbone.json"]);
    run(&[
        "train-clusters",
        "--corpus",
        "steps/train.jsonl",
        "--model",
        "steps/backbone.json",
    ]);
    run(&["train-naive", "--corpus", "steps/train.jsonl"]);
    run(&[
        "evaluate",
        "--corpus",
        "steps/test.jsonl",
        "--model",
        "steps/cluster_models.json",
        "--naive",
        "steps/naive.json",
        "--assignment",
        "steps/assignment.json",
    ]);
    run(&["policy", "--model", "steps/cluster_models.json"]);

    let out = bin(d, &["--config", cfg.as_str(), "--out", "whole", "pipeline"]);
    assert!(out.status.success());
    // the step-by-step run and the pipeline agree on the final comparison
    let a = std::fs::read_to_string(d.join("steps/comparison.csv")).unwrap();
    let b = std::fs::read_to_string(d.join("whole/comparison.csv")).unwrap();
    assert_eq!(a, b);
    assert!(a.starts_with("model_label,win_rate_pct\nNaive RLHF,"));
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let cfg = small_config(d, serde_json::json!({"cluster": {"k": 9}}));
    let out = bin(d, &["--config", &cfg, "pipeline"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(d.join("typo.json"), r#"{"trian": {}}"#).unwrap();
    assert_eq!(bin(d, &["--config", "typo.json", "simulate"]).status.code(), Some(2));

    assert_eq!(bin(d, &["--threads", "0", "simulate"]).status.code(), Some(2));
    assert_eq!(bin(d, &["split", "--corpus", "missing.jsonl"]).status.code(), Some(2));

    // a readable but malformed input is a runtime failure
    std::fs::write(d.join("bad.jsonl"), "{not json\n").unwrap();
    assert_eq!(bin(d, &["train-naive", "--corpus", "bad.jsonl"]).status.code(), Some(1));
}

#[test]
fn seed_flag_changes_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d, serde_json::json!({}));
    for (seed, out) in [("1", "a"), ("1", "b"), ("2", "c")] {
        assert!(bin(d, &["--config", &cfg, "--seed", seed, "--out", out, "simulate"]).status.success());
    }
    let read = |o: &str| std::fs::read(d.join(o).join("corpus.jsonl")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}
