use std::path::{Path, PathBuf};

use hetero_rlhf::clustering::{
    adjusted_rand_index, cosine_similarity_matrix, pca_project, run_algorithm1, spherical_kmeans, Alg1Result,
    ClusterAssignment, Init,
};
use hetero_rlhf::data::{filter_common_workers, ingest_jsonl, read_corpus, split_corpus, Corpus};
use hetero_rlhf::eval::{compare_models, ComparisonTable, WinRateReport};
use hetero_rlhf::policy::{per_cluster_policies, policy_records, read_candidate_sets, write_candidate_sets, CandidateSet};
use hetero_rlhf::reward::{
    train_joint, train_naive, ClusterModel, ModelFile, NaiveModel, NaiveModelFile, SharedBackbone, WorkerEmbedding,
};
use hetero_rlhf::sim::{bayes_win_rate, generate, generate_candidate_sets, GroundTruth};
use serde::Serialize;

use crate::artifacts::Artifacts;
use crate::config::{InitKind, RunConfig, Source};
use crate::CliError;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_corpus(path: &Path) -> Result<Corpus, CliError> {
    read_corpus(path).map_err(|e| CliError::stage("read corpus", e))
}

fn load_model(path: &Path) -> Result<ModelFile, CliError> {
    read_json(path)
}

fn embeddings_csv(embs: &[WorkerEmbedding]) -> String {
    let m = embs.first().map_or(0, |e| e.e.len());
    let mut out = String::from("worker_id");
    for j in 0..m {
        out.push_str(&format!(",e{j}"));
    }
    out.push('\n');
    for e in embs {
        out.push_str(&e.worker_id);
        for x in &e.e {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Stages; each returns its in-memory result and writes its artifacts
// ---------------------------------------------------------------------------

pub fn stage_simulate(cfg: &RunConfig, art: &mut Artifacts) -> Result<(Corpus, GroundTruth), CliError> {
    let (corpus, gt) = generate(&cfg.sim).map_err(|e| CliError::stage("simulate", e))?;
    art.write_corpus("corpus.jsonl", &corpus)?;
    art.write_json("ground_truth.json", &gt)?;
    Ok((corpus, gt))
}

/// Ingests `train` (and `test` when given). With two files the result is
/// already split and restricted to shared workers.
pub fn stage_ingest(
    cfg: &RunConfig,
    train: &Path,
    test: Option<&Path>,
    art: &mut Artifacts,
) -> Result<(Corpus, Option<Corpus>), CliError> {
    let stage = |e| CliError::stage("ingest", e);
    let first = ingest_jsonl(train, &cfg.data.featurizer).map_err(stage)?;
    match test {
        None => {
            art.write_corpus("corpus.jsonl", &first)?;
            Ok((first, None))
        }
        Some(test) => {
            let second = ingest_jsonl(test, &cfg.data.featurizer).map_err(stage)?;
            let (mut tr, mut te, report) = filter_common_workers(&first, &second).map_err(stage)?;
            tr.split_tag = hetero_rlhf::data::SplitTag::Train;
            te.split_tag = hetero_rlhf::data::SplitTag::Test;
            art.write_corpus("train.jsonl", &tr)?;
            art.write_corpus("test.jsonl", &te)?;
            art.write_json("ingest_report.json", &report)?;
            Ok((tr, Some(te)))
        }
    }
}

pub fn stage_split(cfg: &RunConfig, corpus: &Corpus, art: &mut Artifacts) -> Result<(Corpus, Corpus), CliError> {
    let (train, test) =
        split_corpus(corpus, cfg.data.train_fraction, cfg.split_seed()).map_err(|e| CliError::stage("split", e))?;
    art.write_corpus("train.jsonl", &train)?;
    art.write_corpus("test.jsonl", &test)?;
    Ok((train, test))
}

pub fn stage_train_joint(
    cfg: &RunConfig,
    train: &Corpus,
    art: &mut Artifacts,
) -> Result<(SharedBackbone, Vec<WorkerEmbedding>), CliError> {
    let (bb, embs) =
        train_joint(train, &cfg.train, cfg.embedding_dim).map_err(|e| CliError::stage("train-joint", e))?;
    art.write_json("backbone.json", &ModelFile::new(&bb).with_embeddings(&embs))?;
    art.write("embeddings.csv", embeddings_csv(&embs).as_bytes())?;
    Ok((bb, embs))
}

pub fn stage_similarity(embs: &[WorkerEmbedding], art: &mut Artifacts) -> Result<(), CliError> {
    let stage = |e| CliError::stage("similarity", e);
    let sim = cosine_similarity_matrix(embs).map_err(stage)?;
    art.write("similarity.csv", sim.to_csv().as_bytes())?;
    let m = embs.first().map_or(0, |e| e.e.len());
    for (dim, name) in [(2, "projection_2d.csv"), (3, "projection_3d.csv")] {
        if embs.len() > dim && m >= dim {
            let p = pca_project(embs, dim).map_err(stage)?;
            if p.degenerate {
                eprintln!("  note: all embeddings coincide; {name} is all zeros");
            }
            art.write(name, p.to_csv().as_bytes())?;
        } else {
            eprintln!("  skipped {name}: needs more than {dim} workers and embedding_dim >= {dim}");
        }
    }
    Ok(())
}

pub fn stage_kmeans(
    cfg: &RunConfig,
    embs: &[WorkerEmbedding],
    art: &mut Artifacts,
) -> Result<ClusterAssignment, CliError> {
    let km = spherical_kmeans(embs, cfg.cluster.k, cfg.kmeans_seed(), cfg.cluster.kmeans_max_iters)
        .map_err(|e| CliError::stage("cluster", e))?;
    art.write_json("kmeans_assignment.json", &km.assignment)?;
    Ok(km.assignment)
}

pub fn stage_train_clusters(
    cfg: &RunConfig,
    train: &Corpus,
    bb: &SharedBackbone,
    embs: &[WorkerEmbedding],
    initial: Option<ClusterAssignment>,
    art: &mut Artifacts,
) -> Result<Alg1Result, CliError> {
    let init = match (initial, cfg.cluster.init) {
        (Some(a), _) => Init::Assignment(a),
        (None, InitKind::Kmeans) => Init::KMeans {
            embeddings: embs,
            seed: cfg.kmeans_seed(),
            max_iters: cfg.cluster.kmeans_max_iters,
        },
        (None, InitKind::Random) => Init::Random { seed: cfg.kmeans_seed() },
    };
    let res = run_algorithm1(train, bb, cfg.cluster.k, &cfg.train, init, cfg.cluster.max_rounds)
        .map_err(|e| CliError::stage("train-clusters", e))?;
    if !res.converged {
        eprintln!("  note: stopped after {} rounds without reaching a fixed point", cfg.cluster.max_rounds);
    }
    art.write_json("cluster_models.json", &ModelFile::new(bb).with_clusters(&res.models))?;
    art.write_json("assignment.json", &res.assignment)?;
    art.write("trace.csv", res.trace.to_csv().as_bytes())?;
    Ok(res)
}

pub fn stage_train_naive(cfg: &RunConfig, train: &Corpus, art: &mut Artifacts) -> Result<NaiveModel, CliError> {
    let naive = train_naive(train, &cfg.train).map_err(|e| CliError::stage("train-naive", e))?;
    art.write_json("naive.json", &NaiveModelFile::from(&naive))?;
    Ok(naive)
}

pub fn stage_evaluate(
    cfg: &RunConfig,
    test: &Corpus,
    naive: &NaiveModel,
    bb: &SharedBackbone,
    models: &[ClusterModel],
    assignment: &ClusterAssignment,
    art: &mut Artifacts,
) -> Result<ComparisonTable, CliError> {
    let table = compare_models(test, naive, bb, models, assignment, cfg.eval.scope)
        .map_err(|e| CliError::stage("evaluate", e))?;
    art.write("comparison.csv", table.to_csv().as_bytes())?;
    art.write_json("comparison.json", &table)?;
    Ok(table)
}

pub fn stage_policy(
    cfg: &RunConfig,
    bb: &SharedBackbone,
    models: &[ClusterModel],
    art: &mut Artifacts,
) -> Result<(), CliError> {
    let stage = |e| CliError::stage("policy", e);
    let sets: Vec<CandidateSet> = match &cfg.policy.candidates {
        Some(path) => read_candidate_sets(path).map_err(stage)?,
        None => {
            let sets = generate_candidate_sets(
                cfg.policy.n_sets,
                cfg.policy.n_candidates,
                bb.feature_dim(),
                cfg.candidate_seed(),
            )
            .map_err(stage)?;
            let mut buf = Vec::new();
            write_candidate_sets(&sets, &mut buf).map_err(stage)?;
            art.write("candidates.jsonl", &buf)?;
            sets
        }
    };
    let policies = per_cluster_policies(models, bb, &sets, &cfg.policy.solver).map_err(stage)?;
    art.write_json("policies.json", &policy_records(&policies, &sets))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Recovery {
    kmeans_ari: f64,
    algorithm1_ari: f64,
    within_group_cosine: Option<f64>,
    cross_group_cosine: Option<f64>,
    bayes_test: Vec<WinRateReport>,
}

fn stage_recovery(
    gt: &GroundTruth,
    test: &Corpus,
    embs: &[WorkerEmbedding],
    kmeans: &ClusterAssignment,
    alg1: &ClusterAssignment,
    art: &mut Artifacts,
) -> Result<(), CliError> {
    let stage = |e| CliError::stage("recovery", e);
    let ids: Vec<&String> = gt.latent_group_of.keys().collect();
    let truth = ClusterAssignment::from_labels(gt.n_groups(), &ids, &gt.labels()).map_err(stage)?;
    let sim = cosine_similarity_matrix(embs).map_err(stage)?;
    let group: Vec<usize> = embs.iter().map(|e| gt.latent_group_of[&e.worker_id]).collect();
    let report = Recovery {
        kmeans_ari: adjusted_rand_index(kmeans, &truth).map_err(stage)?,
        algorithm1_ari: adjusted_rand_index(alg1, &truth).map_err(stage)?,
        within_group_cosine: sim.mean_where(|i, j| i != j && group[i] == group[j]),
        cross_group_cosine: sim.mean_where(|i, j| group[i] != group[j]),
        bayes_test: bayes_win_rate(gt, test).map_err(stage)?,
    };
    art.write_json("recovery.json", &report)?;
    Ok(())
}

/// Runs every stage in order and writes `manifest.json` last.
pub fn pipeline(cfg: &RunConfig, art: &mut Artifacts) -> Result<ComparisonTable, CliError> {
    eprintln!("[data]");
    let (train, test, gt) = match cfg.data.source {
        Source::Simulate => {
            let (corpus, gt) = stage_simulate(cfg, art)?;
            eprintln!("[split]");
            let (train, test) = stage_split(cfg, &corpus, art)?;
            (train, test, Some(gt))
        }
        Source::Jsonl => {
            let train_path = cfg.data.train_path.as_deref().expect("validated");
            let (first, second) = stage_ingest(cfg, train_path, cfg.data.test_path.as_deref(), art)?;
            match second {
                Some(test) => (first, test, None),
                None => {
                    eprintln!("[split]");
                    let (train, test) = stage_split(cfg, &first, art)?;
                    (train, test, None)
                }
            }
        }
    };
    eprintln!("[train-joint]");
    let (bb, embs) = stage_train_joint(cfg, &train, art)?;
    eprintln!("[similarity]");
    stage_similarity(&embs, art)?;
    eprintln!("[cluster]");
    let kmeans = stage_kmeans(cfg, &embs, art)?;
    eprintln!("[train-clusters]");
    let alg1 = stage_train_clusters(cfg, &train, &bb, &embs, None, art)?;
    eprintln!("[train-naive]");
    let naive = stage_train_naive(cfg, &train, art)?;
    eprintln!("[evaluate]");
    let table = stage_evaluate(cfg, &test, &naive, &bb, &alg1.models, &alg1.assignment, art)?;
    if cfg.policy.enabled {
        eprintln!("[policy]");
        stage_policy(cfg, &bb, &alg1.models, art)?;
    }
    if let Some(gt) = &gt {
        eprintln!("[recovery]");
        stage_recovery(gt, &test, &embs, &kmeans, &alg1.assignment, art)?;
    }
    art.write_json("config.resolved.json", cfg)?;
    art.write_manifest()?;
    Ok(table)
}

// ---------------------------------------------------------------------------
// Stand-alone subcommands: read inputs from files
// ---------------------------------------------------------------------------

pub fn require(path: Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    let path = path.ok_or_else(|| CliError::Config(format!("missing {flag}")))?;
    if !path.exists() {
        return Err(CliError::Config(format!("{flag} {} does not exist", path.display())));
    }
    Ok(path)
}

pub fn cmd_ingest(cfg: &RunConfig, train: Option<PathBuf>, test: Option<PathBuf>, art: &mut Artifacts) -> Result<(), CliError> {
    let train = require(train.or_else(|| cfg.data.train_path.clone()), "--train")?;
    let test = match test.or_else(|| cfg.data.test_path.clone()) {
        Some(t) => Some(require(Some(t), "--test")?),
        None => None,
    };
    stage_ingest(cfg, &train, test.as_deref(), art).map(|_| ())
}

pub fn cmd_split(cfg: &RunConfig, corpus: &Path, art: &mut Artifacts) -> Result<(), CliError> {
    stage_split(cfg, &load_corpus(corpus)?, art).map(|_| ())
}

pub fn cmd_train_joint(cfg: &RunConfig, corpus: &Path, art: &mut Artifacts) -> Result<(), CliError> {
    stage_train_joint(cfg, &load_corpus(corpus)?, art).map(|_| ())
}

fn model_embeddings(model: &ModelFile) -> Result<Vec<WorkerEmbedding>, CliError> {
    if model.embeddings.is_empty() {
        return Err(CliError::Config("model file has no worker embeddings".into()));
    }
    model.worker_embeddings().map_err(|e| CliError::stage("read model", e))
}

pub fn cmd_similarity(model: &Path, art: &mut Artifacts) -> Result<(), CliError> {
    stage_similarity(&model_embeddings(&load_model(model)?)?, art)
}

pub fn cmd_cluster(cfg: &RunConfig, model: &Path, art: &mut Artifacts) -> Result<(), CliError> {
    stage_kmeans(cfg, &model_embeddings(&load_model(model)?)?, art).map(|_| ())
}

pub fn cmd_train_clusters(
    cfg: &RunConfig,
    corpus: &Path,
    model: &Path,
    assignment: Option<&Path>,
    art: &mut Artifacts,
) -> Result<(), CliError> {
    let train = load_corpus(corpus)?;
    let file = load_model(model)?;
    let bb = file.backbone().map_err(|e| CliError::stage("read model", e))?;
    let initial = assignment.map(read_json::<ClusterAssignment>).transpose()?;
    let embs = if initial.is_none() && cfg.cluster.init == InitKind::Kmeans {
        model_embeddings(&file)?
    } else {
        Vec::new()
    };
    stage_train_clusters(cfg, &train, &bb, &embs, initial, art).map(|_| ())
}

pub fn cmd_train_naive(cfg: &RunConfig, corpus: &Path, art: &mut Artifacts) -> Result<(), CliError> {
    stage_train_naive(cfg, &load_corpus(corpus)?, art).map(|_| ())
}

fn cluster_file(model: &Path) -> Result<(SharedBackbone, Vec<ClusterModel>), CliError> {
    let file = load_model(model)?;
    let read = |e| CliError::stage("read model", e);
    let bb = file.backbone().map_err(read)?;
    let models = file.cluster_models().map_err(read)?;
    if models.is_empty() {
        return Err(CliError::Config(format!("{} has no cluster parameters", model.display())));
    }
    Ok((bb, models))
}

pub fn cmd_policy(cfg: &RunConfig, model: &Path, art: &mut Artifacts) -> Result<(), CliError> {
    let (bb, models) = cluster_file(model)?;
    stage_policy(cfg, &bb, &models, art)
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    corpus: &Path,
    model: &Path,
    naive: &Path,
    assignment: &Path,
    art: &mut Artifacts,
) -> Result<ComparisonTable, CliError> {
    let test = load_corpus(corpus)?;
    let (bb, models) = cluster_file(model)?;
    let naive = read_json::<NaiveModelFile>(naive)?
        .model()
        .map_err(|e| CliError::stage("read naive model", e))?;
    let assignment: ClusterAssignment = read_json(assignment)?;
    stage_evaluate(cfg, &test, &naive, &bb, &models, &assignment, art)
}
