//! WebAssembly bindings for the static page in `www/`. Each export takes and
//! returns a JSON string; errors come back as `{"error": "..."}` so the page
//! never has to catch exceptions.

use hetero_rlhf::clustering::{
    adjusted_rand_index, cosine_similarity_matrix, pca_project, run_algorithm1, spherical_kmeans, ClusterAssignment,
    Init,
};
use hetero_rlhf::data::{split_corpus, FeatureVector};
use hetero_rlhf::eval::{compare_models, EvalScope, WinRateReport};
use hetero_rlhf::policy::{
    objective_raw, optimal_policy_closed_form, optimal_policy_numeric, Candidate, CandidateSet, Mu1, PolicyConfig,
    Variant,
};
use hetero_rlhf::reward::{train_joint, train_naive, TrainConfig};
use hetero_rlhf::sim::{bayes_win_rate, generate, SimConfig};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::wasm_bindgen;

#[derive(Debug, Deserialize)]
pub struct PolicyRequest {
    pub rewards: Vec<f64>,
    /// Reference probabilities; uniform when omitted.
    #[serde(default)]
    pub sft: Option<Vec<f64>>,
    pub beta: f64,
    #[serde(default)]
    pub mu1: Mu1,
}

#[derive(Debug, Serialize)]
pub struct PolicyView {
    pub closed_form: Vec<f64>,
    pub numeric: Vec<f64>,
    pub numeric_iterations: usize,
    pub total_variation: f64,
    /// Optimum with the extra log-probability term.
    pub with_log_term: Vec<f64>,
    pub objective: f64,
    pub objective_with_log_term: f64,
}

fn candidate_set(rewards: &[f64], sft: Option<Vec<f64>>) -> hetero_rlhf::Result<CandidateSet> {
    let candidates: Vec<Candidate> = (0..rewards.len())
        .map(|i| Candidate {
            action_id: format!("y{}", i + 1),
            features: FeatureVector::new(vec![i as f64]).expect("finite"),
        })
        .collect();
    match sft {
        Some(p) => CandidateSet::new("demo", candidates, p),
        None => CandidateSet::uniform("demo", candidates),
    }
}

pub fn explore_policy(req: PolicyRequest) -> hetero_rlhf::Result<PolicyView> {
    let cs = candidate_set(&req.rewards, req.sft)?;
    let cfg = PolicyConfig {
        beta: req.beta,
        mu1: req.mu1,
        ..PolicyConfig::default()
    };
    let closed = optimal_policy_closed_form(&cs, &req.rewards, cfg.beta)?;
    let numeric = optimal_policy_numeric(&cs, &req.rewards, &cfg, Variant::Eq31)?;
    let logged = optimal_policy_numeric(&cs, &req.rewards, &cfg, Variant::Alg1Line3)?;
    Ok(PolicyView {
        objective: objective_raw(&closed.probs, &req.rewards, &cs.sft_probs, cfg.beta, None),
        total_variation: closed.total_variation(&numeric.policy),
        closed_form: closed.probs,
        numeric: numeric.policy.probs,
        numeric_iterations: numeric.iterations,
        with_log_term: logged.policy.probs,
        objective_with_log_term: logged.objective,
    })
}

#[derive(Debug, Deserialize)]
pub struct SweepRequest {
    pub rewards: Vec<f64>,
    #[serde(default)]
    pub sft: Option<Vec<f64>>,
    pub betas: Vec<f64>,
}

/// Closed-form policy for each β, one row per β.
pub fn beta_sweep(req: SweepRequest) -> hetero_rlhf::Result<Vec<Vec<f64>>> {
    let cs = candidate_set(&req.rewards, req.sft)?;
    req.betas
        .iter()
        .map(|&b| optimal_policy_closed_form(&cs, &req.rewards, b).map(|p| p.probs))
        .collect()
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct ClusterRequest {
    pub n_workers: usize,
    pub groups: usize,
    pub k: usize,
    pub separation: f64,
    pub noise: f64,
    pub pairs_per_worker: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ClusterRequest {
    fn default() -> Self {
        Self {
            n_workers: 20,
            groups: 2,
            k: 2,
            separation: std::f64::consts::PI,
            noise: 0.1,
            pairs_per_worker: 100,
            epochs: 20,
            seed: 1,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct WorkerPoint {
    pub worker_id: String,
    pub x: f64,
    pub y: f64,
    pub group: usize,
    pub kmeans: usize,
    pub cluster: usize,
}

#[derive(Debug, Serialize)]
pub struct ClusterView {
    pub points: Vec<WorkerPoint>,
    /// Rows and columns ordered by latent group, then worker.
    pub similarity: Vec<Vec<f64>>,
    pub kmeans_ari: f64,
    pub algorithm1_ari: f64,
    pub rounds: usize,
    pub win_rates: Vec<WinRateReport>,
    pub bayes: Vec<WinRateReport>,
}

pub fn simulate_and_cluster(req: ClusterRequest) -> hetero_rlhf::Result<ClusterView> {
    let sim = SimConfig {
        n_workers: req.n_workers,
        n_latent_groups: req.groups,
        feature_dim: 8,
        embedding_dim: 4,
        pairs_per_worker: req.pairs_per_worker,
        group_separation: req.separation,
        worker_noise: req.noise,
        seed: req.seed,
        ..SimConfig::default()
    };
    let (corpus, gt) = generate(&sim)?;
    let (train, test) = split_corpus(&corpus, 0.7, req.seed)?;
    let cfg = TrainConfig {
        epochs: req.epochs,
        seed: req.seed,
        ..TrainConfig::default()
    };
    let (bb, embs) = train_joint(&train, &cfg, sim.embedding_dim)?;
    let km = spherical_kmeans(&embs, req.k, req.seed, 100)?;
    let init = Init::KMeans {
        embeddings: &embs,
        seed: req.seed,
        max_iters: 100,
    };
    let alg1 = run_algorithm1(&train, &bb, req.k, &cfg, init, 20)?;
    let naive = train_naive(&train, &cfg)?;
    let table = compare_models(&test, &naive, &bb, &alg1.models, &alg1.assignment, EvalScope::GroupRestricted)?;

    let ids: Vec<&String> = gt.latent_group_of.keys().collect();
    let truth = ClusterAssignment::from_labels(gt.n_groups(), &ids, &gt.labels())?;
    let proj = pca_project(&embs, 2)?;
    let points = proj
        .coords
        .into_iter()
        .map(|(id, c)| WorkerPoint {
            group: gt.latent_group_of[&id],
            kmeans: km.assignment.get(&id).unwrap_or(0),
            cluster: alg1.assignment.get(&id).unwrap_or(0),
            x: c[0],
            y: c[1],
            worker_id: id,
        })
        .collect();

    let sim_matrix = cosine_similarity_matrix(&embs)?;
    let mut order: Vec<usize> = (0..embs.len()).collect();
    order.sort_by_key(|&i| (gt.latent_group_of[&embs[i].worker_id], i));
    let similarity = order
        .iter()
        .map(|&i| order.iter().map(|&j| sim_matrix.values[i][j]).collect())
        .collect();

    let mut win_rates = vec![table.naive];
    win_rates.extend(table.clusters);
    Ok(ClusterView {
        points,
        similarity,
        kmeans_ari: adjusted_rand_index(&km.assignment, &truth)?,
        algorithm1_ari: adjusted_rand_index(&alg1.assignment, &truth)?,
        rounds: alg1.trace.rows.len(),
        win_rates,
        bayes: bayes_win_rate(&gt, &test)?,
    })
}

fn respond<Req, Resp>(input: &str, f: impl FnOnce(Req) -> hetero_rlhf::Result<Resp>) -> String
where
    Req: for<'de> Deserialize<'de>,
    Resp: Serialize,
{
    let result = serde_json::from_str(input)
        .map_err(|e| format!("bad request: {e}"))
        .and_then(|req| f(req).map_err(|e| e.to_string()));
    match result {
        Ok(v) => serde_json::to_string(&v).expect("serializable"),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

#[wasm_bindgen(js_name = explorePolicy)]
pub fn explore_policy_json(input: &str) -> String {
    respond(input, explore_policy)
}

#[wasm_bindgen(js_name = betaSweep)]
pub fn beta_sweep_json(input: &str) -> String {
    respond(input, beta_sweep)
}

#[wasm_bindgen(js_name = simulateAndCluster)]
pub fn simulate_and_cluster_json(input: &str) -> String {
    respond(input, simulate_and_cluster)
}
