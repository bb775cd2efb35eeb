use std::path::PathBuf;

use hetero_rlhf::data::{filter_common_workers, ingest_jsonl, read_corpus, write_corpus, FeaturizerConfig, IngestReport};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn comparison_fixture_counts() {
    let cfg = FeaturizerConfig::default();
    let train = ingest_jsonl(fixture("tldr_train.jsonl"), &cfg).unwrap();
    let test = ingest_jsonl(fixture("tldr_test.jsonl"), &cfg).unwrap();
    let (ftrain, ftest, report) = filter_common_workers(&train, &test).unwrap();
    // counted independently from the raw JSON
    assert_eq!(
        report,
        IngestReport {
            train_examples: 130,
            test_examples: 70,
            train_workers: 12,
            test_workers: 11,
            filtered_train_examples: 70,
            filtered_test_examples: 51,
            final_workers: 7,
        }
    );
    let expected: Vec<String> = (6..=12).map(|i| format!("worker{i:02}")).collect();
    let sorted = |c: &hetero_rlhf::data::Corpus| {
        let mut ids: Vec<String> = c.worker_ids().into_iter().map(String::from).collect();
        ids.sort();
        ids
    };
    assert_eq!(sorted(&ftrain), expected);
    assert_eq!(sorted(&ftest), expected);

    let (again_train, again_test, _) = filter_common_workers(&ftrain, &ftest).unwrap();
    assert_eq!(again_train, ftrain);
    assert_eq!(again_test, ftest);
}

#[test]
fn label_index_picks_the_chosen_summary() {
    let cfg = FeaturizerConfig::default();
    let corpus = ingest_jsonl(fixture("tldr_train.jsonl"), &cfg).unwrap();
    let first_line: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(fixture("tldr_train.jsonl")).unwrap().lines().next().unwrap())
            .unwrap();
    let choice = first_line["choice"].as_u64().unwrap() as usize;
    let chosen = first_line["summaries"][choice]["text"].as_str().unwrap();
    let rejected = first_line["summaries"][1 - choice]["text"].as_str().unwrap();
    let worker = first_line["worker"].as_str().unwrap();
    let rec = &corpus.worker(worker).unwrap().records()[0];
    assert_eq!(rec.prompt_id, first_line["info"]["id"].as_str().unwrap());
    assert_eq!(rec.raw_chosen_text.as_deref(), Some(chosen));
    assert_eq!(rec.raw_rejected_text.as_deref(), Some(rejected));
    assert_eq!(rec.feature_dim(), cfg.dim);
}

#[test]
fn ingested_corpus_round_trips() {
    let cfg = FeaturizerConfig { dim: 32, seed: 5 };
    let corpus = ingest_jsonl(fixture("tldr_test.jsonl"), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    write_corpus(&corpus, &path).unwrap();
    assert_eq!(read_corpus(&path).unwrap(), corpus);
}
