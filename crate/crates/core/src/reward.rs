//! Reward parameterizations and their trainers.
//!
//! * [`NaiveModel`]: one pooled linear reward `⟨w, x⟩`.
//! * [`SharedBackbone`] with a preference vector `e`: `⟨u, x⟩ + eᵀ V x`. The
//!   vector is a worker embedding during joint training and a cluster
//!   parameter `θ_k` during per-cluster fitting.
//!
//! Trainers use plain mini-batch gradient ascent with a constant learning
//! rate. Each epoch reshuffles the records with a seeded ChaCha stream, so a
//! fixed [`TrainConfig`] reproduces the same parameters bit for bit.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::btl::{log_sigmoid, sigmoid};
use crate::data::{Corpus, PreferenceRecord};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, project_l2_ball, Matrix};
use crate::seed;

const STREAM_SHUFFLE: u64 = 1;
const STREAM_INIT: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub norm_bound: f64,
    /// Ridge penalty on the pooled weights and on the backbone `(u, V)`.
    pub l2_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 5,
            batch_size: 32,
            seed: 0,
            norm_bound: 5.0,
            l2_penalty: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.norm_bound > 0.0 && self.norm_bound.is_finite()) {
            return bad("norm_bound must be positive");
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return bad("l2_penalty must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveModel {
    pub w: Vec<f64>,
}

/// Shared reward weights `u` (length d) and interaction map `V` (m × d).
#[derive(Debug, Clone, PartialEq)]
pub struct SharedBackbone {
    pub u: Vec<f64>,
    pub v: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerEmbedding {
    pub worker_id: String,
    pub e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub index: usize,
    pub theta: Vec<f64>,
    pub norm_bound: f64,
}

impl SharedBackbone {
    pub fn new(u: Vec<f64>, v: Matrix) -> Result<Self> {
        if v.cols() != u.len() {
            return Err(Error::dim("backbone V columns", u.len(), v.cols()));
        }
        if u.iter().any(|x| !x.is_finite()) || !v.is_finite() {
            return Err(Error::NonFinite("backbone".into()));
        }
        Ok(Self { u, v })
    }

    pub fn feature_dim(&self) -> usize {
        self.u.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.v.rows()
    }

    fn check(&self, e: &[f64], x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim() {
            return Err(Error::dim("feature vector", self.feature_dim(), x.len()));
        }
        if e.len() != self.embedding_dim() {
            return Err(Error::dim("preference vector", self.embedding_dim(), e.len()));
        }
        Ok(())
    }

    /// `⟨u, x⟩ + eᵀ V x` without dimension checks; see [`reward_personal`]
    /// for the checked form. Mismatched lengths give a meaningless value or
    /// a panic.
    pub fn score(&self, e: &[f64], x: &[f64]) -> f64 {
        dot(&self.u, x) + dot(e, &self.v.mul_vec(x))
    }
}

pub fn reward_naive(model: &NaiveModel, x: &[f64]) -> Result<f64> {
    if model.w.len() != x.len() {
        return Err(Error::dim("naive reward", model.w.len(), x.len()));
    }
    Ok(dot(&model.w, x))
}

pub fn reward_personal(backbone: &SharedBackbone, e: &[f64], x: &[f64]) -> Result<f64> {
    backbone.check(e, x)?;
    Ok(backbone.score(e, x))
}

// ---------------------------------------------------------------------------
// Objectives and analytic gradients (full-data sums)
// ---------------------------------------------------------------------------

/// `Σ log σ(⟨w, δ⟩) − λ‖w‖²` with `δ = chosen − rejected`.
pub fn naive_objective(records: &[PreferenceRecord], w: &[f64], l2: f64) -> f64 {
    let ll: f64 = records
        .iter()
        .map(|r| log_sigmoid(dot(w, &r.difference())))
        .sum();
    ll - l2 * dot(w, w)
}

pub fn naive_gradient(records: &[PreferenceRecord], w: &[f64], l2: f64) -> Vec<f64> {
    let mut g = vec![0.0; w.len()];
    for r in records {
        let d = r.difference();
        axpy(sigmoid(-dot(w, &d)), &d, &mut g);
    }
    axpy(-2.0 * l2, w, &mut g);
    g
}

/// Parameters of the joint (backbone + embeddings) model. `embeddings[i]`
/// belongs to the i-th worker of the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct JointParams {
    pub u: Vec<f64>,
    pub v: Matrix,
    pub embeddings: Vec<Vec<f64>>,
}

impl JointParams {
    fn zeros_like(&self) -> Self {
        Self {
            u: vec![0.0; self.u.len()],
            v: Matrix::zeros(self.v.rows(), self.v.cols()),
            embeddings: self.embeddings.iter().map(|e| vec![0.0; e.len()]).collect(),
        }
    }
}

/// Joint log-likelihood over all workers minus `λ(‖u‖² + ‖V‖²_F)`.
pub fn joint_objective(corpus: &Corpus, params: &JointParams, l2: f64) -> f64 {
    let mut ll = 0.0;
    for (w, e) in corpus.workers().iter().zip(&params.embeddings) {
        for r in w.records() {
            let d = r.difference();
            ll += log_sigmoid(dot(&params.u, &d) + dot(e, &params.v.mul_vec(&d)));
        }
    }
    ll - l2 * (dot(&params.u, &params.u) + params.v.frobenius_sq())
}

pub fn joint_gradient(corpus: &Corpus, params: &JointParams, l2: f64) -> JointParams {
    let mut grad = params.zeros_like();
    for (i, w) in corpus.workers().iter().enumerate() {
        let e = &params.embeddings[i];
        for r in w.records() {
            let d = r.difference();
            let z = params.v.mul_vec(&d);
            let g = sigmoid(-(dot(&params.u, &d) + dot(e, &z)));
            axpy(g, &d, &mut grad.u);
            grad.v.add_outer(g, e, &d);
            axpy(g, &z, &mut grad.embeddings[i]);
        }
    }
    axpy(-2.0 * l2, &params.u, &mut grad.u);
    axpy(-2.0 * l2, params.v.as_slice(), grad.v.as_mut_slice());
    grad
}

/// Precomputed per-record quantities for fitting a preference vector against
/// a frozen backbone: margin = `offset + θ·z` with `offset = ⟨u, δ⟩` and
/// `z = V δ`.
#[derive(Debug, Clone, Default)]
pub struct ThetaDesign {
    offsets: Vec<f64>,
    z: Vec<Vec<f64>>,
}

impl ThetaDesign {
    pub fn new(records: &[PreferenceRecord], backbone: &SharedBackbone) -> Result<Self> {
        let mut design = Self::default();
        for r in records {
            if r.feature_dim() != backbone.feature_dim() {
                return Err(Error::dim("record features", backbone.feature_dim(), r.feature_dim()));
            }
            let d = r.difference();
            design.offsets.push(dot(&backbone.u, &d));
            design.z.push(backbone.v.mul_vec(&d));
        }
        Ok(design)
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn extend(&mut self, other: &ThetaDesign) {
        self.offsets.extend_from_slice(&other.offsets);
        self.z.extend(other.z.iter().cloned());
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        self.offsets
            .iter()
            .zip(&self.z)
            .map(|(a, z)| log_sigmoid(a + dot(theta, z)))
            .sum()
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        for (a, z) in self.offsets.iter().zip(&self.z) {
            axpy(sigmoid(-(a + dot(theta, z))), z, &mut g);
        }
        g
    }
}

/// `Σ log σ(⟨u, δ⟩ + θᵀ V δ)` over `records`.
pub fn theta_objective(records: &[PreferenceRecord], backbone: &SharedBackbone, theta: &[f64]) -> Result<f64> {
    Ok(ThetaDesign::new(records, backbone)?.log_likelihood(theta))
}

pub fn theta_gradient(
    records: &[PreferenceRecord],
    backbone: &SharedBackbone,
    theta: &[f64],
) -> Result<Vec<f64>> {
    Ok(ThetaDesign::new(records, backbone)?.gradient(theta))
}

// ---------------------------------------------------------------------------
// Trainers
// ---------------------------------------------------------------------------

fn batches(n: usize, config: &TrainConfig) -> impl FnMut() -> Vec<Vec<usize>> {
    let mut rng = seed::rng(config.seed, STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..n).collect();
    let bs = config.batch_size;
    move || {
        order.shuffle(&mut rng);
        order.chunks(bs).map(<[usize]>::to_vec).collect()
    }
}

/// `w += lr * (grad_sum / batch_len − 2λ w)`
fn ascend(w: &mut [f64], grad_sum: &[f64], batch_len: usize, lr: f64, l2: f64) {
    let inv = 1.0 / batch_len as f64;
    for (wi, gi) in w.iter_mut().zip(grad_sum) {
        let step = gi * inv - 2.0 * l2 * *wi;
        *wi += lr * step;
    }
}

pub fn train_naive(corpus: &Corpus, config: &TrainConfig) -> Result<NaiveModel> {
    config.validate()?;
    if corpus.n_records() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let diffs: Vec<Vec<f64>> = corpus.records().map(PreferenceRecord::difference).collect();
    let d = corpus.feature_dim();
    let mut w = vec![0.0; d];
    let mut next_epoch = batches(diffs.len(), config);
    let mut grad = vec![0.0; d];
    for _ in 0..config.epochs {
        for batch in next_epoch() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &j in &batch {
                let g = sigmoid(-dot(&w, &diffs[j]));
                axpy(g, &diffs[j], &mut grad);
            }
            ascend(&mut w, &grad, batch.len(), config.learning_rate, config.l2_penalty);
        }
    }
    Ok(NaiveModel { w })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JointOptions {
    /// Hold every embedding at zero; the backbone then reduces to the pooled
    /// linear model in `u`.
    pub zero_embeddings: bool,
}

/// Initial joint parameters: `u = 0`, `V` and embeddings drawn from
/// seeded normals with scales `0.1/√d` and `0.1/√m`.
pub fn init_joint(n_workers: usize, feature_dim: usize, embedding_dim: usize, seed_value: u64) -> JointParams {
    let mut rng = seed::rng(seed_value, STREAM_INIT);
    let v_scale = 0.1 / (feature_dim as f64).sqrt();
    let e_scale = 0.1 / (embedding_dim as f64).sqrt();
    let v_data = (0..embedding_dim * feature_dim)
        .map(|_| v_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let embeddings = (0..n_workers)
        .map(|_| {
            (0..embedding_dim)
                .map(|_| e_scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    JointParams {
        u: vec![0.0; feature_dim],
        v: Matrix::from_row_major(embedding_dim, feature_dim, v_data),
        embeddings,
    }
}

pub fn train_joint(
    corpus: &Corpus,
    config: &TrainConfig,
    embedding_dim: usize,
) -> Result<(SharedBackbone, Vec<WorkerEmbedding>)> {
    train_joint_with(corpus, config, embedding_dim, JointOptions::default())
}

pub fn train_joint_with(
    corpus: &Corpus,
    config: &TrainConfig,
    embedding_dim: usize,
    options: JointOptions,
) -> Result<(SharedBackbone, Vec<WorkerEmbedding>)> {
    config.validate()?;
    if embedding_dim == 0 {
        return Err(Error::InvalidConfig("embedding_dim must be at least 1".into()));
    }
    if corpus.n_records() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let d = corpus.feature_dim();
    let m = embedding_dim;
    let mut params = init_joint(corpus.n_workers(), d, m, config.seed);
    if options.zero_embeddings {
        params.embeddings.iter_mut().for_each(|e| e.iter_mut().for_each(|x| *x = 0.0));
    }

    let index: HashMap<&str, usize> = corpus
        .worker_ids()
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    let mut samples: Vec<(usize, Vec<f64>)> = Vec::with_capacity(corpus.n_records());
    for r in corpus.records() {
        let wi = *index
            .get(r.worker_id.as_str())
            .ok_or_else(|| Error::UnknownWorker(r.worker_id.clone()))?;
        samples.push((wi, r.difference()));
    }

    let lr = config.learning_rate;
    let l2 = config.l2_penalty;
    let mut next_epoch = batches(samples.len(), config);
    let mut grad_u = vec![0.0; d];
    let mut grad_v = Matrix::zeros(m, d);
    let mut grad_e: Vec<Vec<f64>> = vec![vec![0.0; m]; corpus.n_workers()];
    for _ in 0..config.epochs {
        for batch in next_epoch() {
            grad_u.iter_mut().for_each(|g| *g = 0.0);
            grad_v.as_mut_slice().iter_mut().for_each(|g| *g = 0.0);
            for &j in &batch {
                grad_e[samples[j].0].iter_mut().for_each(|g| *g = 0.0);
            }
            for &j in &batch {
                let (wi, ref delta) = samples[j];
                let e = &params.embeddings[wi];
                let z = params.v.mul_vec(delta);
                let g = sigmoid(-(dot(&params.u, delta) + dot(e, &z)));
                axpy(g, delta, &mut grad_u);
                if !options.zero_embeddings {
                    grad_v.add_outer(g, e, delta);
                    axpy(g, &z, &mut grad_e[wi]);
                }
            }
            let inv = 1.0 / batch.len() as f64;
            ascend(&mut params.u, &grad_u, batch.len(), lr, l2);
            ascend(params.v.as_mut_slice(), grad_v.as_slice(), batch.len(), lr, l2);
            if !options.zero_embeddings {
                let mut touched: Vec<usize> = batch.iter().map(|&j| samples[j].0).collect();
                touched.sort_unstable();
                touched.dedup();
                for wi in touched {
                    axpy(lr * inv, &grad_e[wi], &mut params.embeddings[wi]);
                }
            }
        }
    }

    let backbone = SharedBackbone::new(params.u, params.v)?;
    let embeddings = corpus
        .worker_ids()
        .into_iter()
        .zip(params.embeddings)
        .map(|(id, e)| WorkerEmbedding {
            worker_id: id.to_string(),
            e,
        })
        .collect();
    Ok((backbone, embeddings))
}

/// Result of a projected-gradient fit of one cluster parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFit {
    pub theta: Vec<f64>,
    /// Full-data log-likelihood at the start and after each epoch.
    pub objective_trace: Vec<f64>,
    /// Epochs whose result was rejected (and step size halved) because the
    /// objective went down.
    pub rejected_epochs: usize,
}

/// Projected mini-batch gradient ascent on `design`, starting from
/// `init_theta` (projected first). Every step is followed by projection onto
/// the ball of radius `norm_bound`. An epoch that lowers the full-data
/// objective is rolled back and the step size halved, so the returned
/// objective is never below the starting one.
pub fn fit_theta_design(design: &ThetaDesign, init_theta: &[f64], config: &TrainConfig) -> Result<ThetaFit> {
    config.validate()?;
    if design.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let m = init_theta.len();
    if let Some(z) = design.z.first() {
        if z.len() != m {
            return Err(Error::dim("init theta", z.len(), m));
        }
    }
    let mut theta = init_theta.to_vec();
    project_l2_ball(&mut theta, config.norm_bound);
    let mut best = design.log_likelihood(&theta);
    let mut trace = vec![best];
    let mut lr = config.learning_rate;
    let mut rejected = 0;
    let mut next_epoch = batches(design.len(), config);
    let mut grad = vec![0.0; m];
    for _ in 0..config.epochs {
        let start = theta.clone();
        for batch in next_epoch() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &j in &batch {
                let z = &design.z[j];
                axpy(sigmoid(-(design.offsets[j] + dot(&theta, z))), z, &mut grad);
            }
            axpy(lr / batch.len() as f64, &grad, &mut theta);
            project_l2_ball(&mut theta, config.norm_bound);
        }
        let value = design.log_likelihood(&theta);
        if value >= best {
            best = value;
        } else {
            theta = start;
            lr *= 0.5;
            rejected += 1;
        }
        trace.push(best);
    }
    Ok(ThetaFit {
        theta,
        objective_trace: trace,
        rejected_epochs: rejected,
    })
}

pub fn fit_cluster_theta(
    records: &[PreferenceRecord],
    backbone: &SharedBackbone,
    init_theta: &[f64],
    config: &TrainConfig,
) -> Result<ClusterModel> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    if init_theta.len() != backbone.embedding_dim() {
        return Err(Error::dim("init theta", backbone.embedding_dim(), init_theta.len()));
    }
    let design = ThetaDesign::new(records, backbone)?;
    let fit = fit_theta_design(&design, init_theta, config)?;
    Ok(ClusterModel {
        index: 0,
        theta: fit.theta,
        norm_bound: config.norm_bound,
    })
}

impl ClusterModel {
    pub fn theta_norm(&self) -> f64 {
        norm(&self.theta)
    }
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

/// On-disk form of a backbone with optional embeddings and cluster
/// parameters. Matrices are flat row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub feature_dim: usize,
    pub embedding_dim: usize,
    pub u: Vec<f64>,
    #[serde(rename = "V")]
    pub v: Vec<f64>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub embeddings: IndexMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub clusters: IndexMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_bound: Option<f64>,
}

impl ModelFile {
    pub fn new(backbone: &SharedBackbone) -> Self {
        Self {
            feature_dim: backbone.feature_dim(),
            embedding_dim: backbone.embedding_dim(),
            u: backbone.u.clone(),
            v: backbone.v.as_slice().to_vec(),
            embeddings: IndexMap::new(),
            clusters: IndexMap::new(),
            norm_bound: None,
        }
    }

    pub fn with_embeddings(mut self, embeddings: &[WorkerEmbedding]) -> Self {
        self.embeddings = embeddings
            .iter()
            .map(|e| (e.worker_id.clone(), e.e.clone()))
            .collect();
        self
    }

    pub fn with_clusters(mut self, clusters: &[ClusterModel]) -> Self {
        self.clusters = clusters
            .iter()
            .map(|c| (c.index.to_string(), c.theta.clone()))
            .collect();
        self.norm_bound = clusters.first().map(|c| c.norm_bound);
        self
    }

    pub fn backbone(&self) -> Result<SharedBackbone> {
        if self.u.len() != self.feature_dim {
            return Err(Error::dim("model file u", self.feature_dim, self.u.len()));
        }
        if self.v.len() != self.feature_dim * self.embedding_dim {
            return Err(Error::dim("model file V", self.feature_dim * self.embedding_dim, self.v.len()));
        }
        SharedBackbone::new(
            self.u.clone(),
            Matrix::from_row_major(self.embedding_dim, self.feature_dim, self.v.clone()),
        )
    }

    pub fn worker_embeddings(&self) -> Result<Vec<WorkerEmbedding>> {
        self.embeddings
            .iter()
            .map(|(id, e)| {
                if e.len() != self.embedding_dim {
                    return Err(Error::dim(format!("embedding of {id}"), self.embedding_dim, e.len()));
                }
                Ok(WorkerEmbedding {
                    worker_id: id.clone(),
                    e: e.clone(),
                })
            })
            .collect()
    }

    pub fn cluster_models(&self) -> Result<Vec<ClusterModel>> {
        let bound = self.norm_bound.unwrap_or(TrainConfig::default().norm_bound);
        let mut models = self
            .clusters
            .iter()
            .map(|(k, theta)| {
                let index = k
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidConfig(format!("cluster key {k:?} is not an index")))?;
                if theta.len() != self.embedding_dim {
                    return Err(Error::dim(format!("cluster {k}"), self.embedding_dim, theta.len()));
                }
                Ok(ClusterModel {
                    index,
                    theta: theta.clone(),
                    norm_bound: bound,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        models.sort_by_key(|c| c.index);
        if models.iter().enumerate().any(|(i, c)| c.index != i) {
            return Err(Error::InvalidConfig("cluster indices must be 0..K".into()));
        }
        Ok(models)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveModelFile {
    pub feature_dim: usize,
    pub w: Vec<f64>,
}

impl From<&NaiveModel> for NaiveModelFile {
    fn from(m: &NaiveModel) -> Self {
        Self {
            feature_dim: m.w.len(),
            w: m.w.clone(),
        }
    }
}

impl NaiveModelFile {
    pub fn model(&self) -> Result<NaiveModel> {
        if self.w.len() != self.feature_dim {
            return Err(Error::dim("naive model file", self.feature_dim, self.w.len()));
        }
        Ok(NaiveModel { w: self.w.clone() })
    }
}
