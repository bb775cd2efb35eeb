//! Alternating maximization over cluster parameters and the worker → cluster
//! map (hard EM).
//!
//! Each round fits `θ_k` by projected gradient ascent on the records of the
//! workers currently in cluster `k` (warm-started from the previous round),
//! then reassigns every worker to the cluster under which its records are
//! most likely. Both steps never lower the total log-likelihood, so the trace
//! is non-decreasing. The loop stops at the first round that moves no worker.

use serde::Serialize;

use super::{argmax_lowest, spherical_kmeans, ClusterAssignment};
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::linalg::project_l2_ball;
use crate::par;
use crate::reward::{fit_theta_design, ClusterModel, SharedBackbone, ThetaDesign, TrainConfig, WorkerEmbedding};
use crate::seed;

/// Starting point for [`run_algorithm1`].
#[derive(Debug, Clone)]
pub enum Init<'a> {
    /// Explicit initial map; cluster parameters start at zero.
    Assignment(ClusterAssignment),
    /// Seeded random balanced map; cluster parameters start at zero.
    Random { seed: u64 },
    /// Spherical k-means on worker embeddings; each cluster parameter starts
    /// at the mean embedding of its members, projected onto the norm ball.
    KMeans {
        embeddings: &'a [WorkerEmbedding],
        seed: u64,
        max_iters: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub round: usize,
    pub total_loglik: f64,
    pub n_reassigned: usize,
    pub cluster_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AlternationTrace {
    pub rows: Vec<TraceRow>,
}

impl AlternationTrace {
    /// Non-decreasing up to summation-order rounding (relative 1e-12).
    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| {
            let slack = 1e-12 * w[0].total_loglik.abs().max(1.0);
            w[1].total_loglik >= w[0].total_loglik - slack
        })
    }

    /// CSV with columns `round,total_loglik,n_reassigned,sizes`; sizes are
    /// `;`-separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,total_loglik,n_reassigned,sizes\n");
        for r in &self.rows {
            let sizes: Vec<String> = r.cluster_sizes.iter().map(usize::to_string).collect();
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.round,
                r.total_loglik,
                r.n_reassigned,
                sizes.join(";")
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alg1Result {
    pub models: Vec<ClusterModel>,
    pub assignment: ClusterAssignment,
    pub trace: AlternationTrace,
    /// True when the loop stopped because no worker moved.
    pub converged: bool,
}

fn worker_designs(corpus: &Corpus, backbone: &SharedBackbone) -> Result<Vec<ThetaDesign>> {
    if corpus.feature_dim() != backbone.feature_dim() {
        return Err(Error::dim("corpus vs backbone", backbone.feature_dim(), corpus.feature_dim()));
    }
    par::map(corpus.workers(), |w| ThetaDesign::new(w.records(), backbone))
        .into_iter()
        .collect()
}

fn check_models(models: &[ClusterModel], backbone: &SharedBackbone) -> Result<()> {
    if models.is_empty() {
        return Err(Error::InvalidConfig("at least one cluster model is required".into()));
    }
    for m in models {
        if m.theta.len() != backbone.embedding_dim() {
            return Err(Error::dim(
                format!("theta of cluster {}", m.index),
                backbone.embedding_dim(),
                m.theta.len(),
            ));
        }
    }
    Ok(())
}

/// `scores[i][k]`: log-likelihood of worker i's records under `θ_k`.
fn score_matrix(designs: &[ThetaDesign], thetas: &[Vec<f64>]) -> Vec<Vec<f64>> {
    par::map(designs, |d| thetas.iter().map(|t| d.log_likelihood(t)).collect())
}

/// Per-worker log-likelihood under each cluster model, in corpus worker
/// order.
pub fn worker_log_likelihoods(
    corpus: &Corpus,
    backbone: &SharedBackbone,
    models: &[ClusterModel],
) -> Result<Vec<Vec<f64>>> {
    check_models(models, backbone)?;
    let designs = worker_designs(corpus, backbone)?;
    let thetas: Vec<Vec<f64>> = models.iter().map(|m| m.theta.clone()).collect();
    Ok(score_matrix(&designs, &thetas))
}

/// Assigns every worker to the cluster maximizing its records'
/// log-likelihood; ties go to the lowest cluster index.
pub fn assign_workers(
    corpus: &Corpus,
    backbone: &SharedBackbone,
    models: &[ClusterModel],
) -> Result<ClusterAssignment> {
    let scores = worker_log_likelihoods(corpus, backbone, models)?;
    let labels: Vec<usize> = scores.iter().map(|s| argmax_lowest(s)).collect();
    ClusterAssignment::from_labels(models.len(), &corpus.worker_ids(), &labels)
}

fn initial_state(
    corpus: &Corpus,
    backbone: &SharedBackbone,
    k: usize,
    init: &Init<'_>,
    bound: f64,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let ids = corpus.worker_ids();
    let n = ids.len();
    let m = backbone.embedding_dim();
    let zeros = vec![vec![0.0; m]; k];
    match init {
        Init::Assignment(a) => {
            if a.k() != k {
                return Err(Error::InvalidConfig(format!("initial assignment has K={}, expected {k}", a.k())));
            }
            let labels = ids
                .iter()
                .map(|id| a.get(id).ok_or_else(|| Error::UnknownWorker(id.to_string())))
                .collect::<Result<Vec<_>>>()?;
            Ok((labels, zeros))
        }
        Init::Random { seed: s } => {
            use rand::seq::SliceRandom;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut seed::rng(*s, 0x5241_4e44));
            let mut labels = vec![0; n];
            for (pos, &i) in order.iter().enumerate() {
                labels[i] = pos % k;
            }
            Ok((labels, zeros))
        }
        Init::KMeans {
            embeddings,
            seed: s,
            max_iters,
        } => {
            for e in embeddings.iter() {
                if e.e.len() != m {
                    return Err(Error::dim(format!("embedding of {}", e.worker_id), m, e.e.len()));
                }
            }
            let km = spherical_kmeans(embeddings, k, *s, *max_iters)?;
            let labels = ids
                .iter()
                .map(|id| km.assignment.get(id).ok_or_else(|| Error::UnknownWorker(id.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let mut thetas = zeros;
            let mut counts = vec![0usize; k];
            for e in embeddings.iter() {
                if let Some(c) = km.assignment.get(&e.worker_id) {
                    crate::linalg::axpy(1.0, &e.e, &mut thetas[c]);
                    counts[c] += 1;
                }
            }
            for (t, &c) in thetas.iter_mut().zip(&counts) {
                if c > 0 {
                    t.iter_mut().for_each(|x| *x /= c as f64);
                }
                project_l2_ball(t, bound);
            }
            Ok((labels, thetas))
        }
    }
}

fn sizes(labels: &[usize], k: usize) -> Vec<usize> {
    let mut s = vec![0; k];
    for &l in labels {
        s[l] += 1;
    }
    s
}

fn cluster_design(designs: &[ThetaDesign], labels: &[usize], cluster: usize) -> ThetaDesign {
    let mut out = ThetaDesign::default();
    for (d, &l) in designs.iter().zip(labels) {
        if l == cluster {
            out.extend(d);
        }
    }
    out
}

/// Alternates per-cluster fits and likelihood-argmax reassignment until no
/// worker moves or `max_rounds` rounds have run.
///
/// A cluster left empty by reassignment is repaired by moving in the worker
/// whose records are least likely under its current cluster. The emptied
/// cluster's parameter is first copied from that worker's old cluster and
/// refitted on the worker alone, which keeps the total non-decreasing.
pub fn run_algorithm1(
    corpus: &Corpus,
    backbone: &SharedBackbone,
    k: usize,
    config: &TrainConfig,
    init: Init<'_>,
    max_rounds: usize,
) -> Result<Alg1Result> {
    config.validate()?;
    let n = corpus.n_workers();
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidConfig(format!("K={k} exceeds the number of workers N={n}")));
    }
    if max_rounds == 0 {
        return Err(Error::InvalidConfig("max_rounds must be at least 1".into()));
    }
    let designs = worker_designs(corpus, backbone)?;
    let (mut labels, mut thetas) = initial_state(corpus, backbone, k, &init, config.norm_bound)?;

    // the initial map may leave clusters empty; seed them with a worker taken
    // from the largest cluster so every fit has data
    while let Some(empty) = sizes(&labels, k).iter().position(|&s| s == 0) {
        let s = sizes(&labels, k);
        let donor = argmax_lowest(&s.iter().map(|&x| x as f64).collect::<Vec<_>>());
        let moved = labels.iter().rposition(|&l| l == donor).expect("donor cluster is non-empty");
        labels[moved] = empty;
    }

    let mut trace = AlternationTrace::default();
    let mut converged = false;
    for round in 1..=max_rounds {
        let clusters: Vec<usize> = (0..k).collect();
        let fits = par::map(&clusters, |&c| {
            let design = cluster_design(&designs, &labels, c);
            let cfg = TrainConfig {
                seed: seed::derive(config.seed, (round * k + c) as u64),
                ..*config
            };
            fit_theta_design(&design, &thetas[c], &cfg)
        });
        for (c, fit) in fits.into_iter().enumerate() {
            thetas[c] = fit?.theta;
        }

        let mut scores = score_matrix(&designs, &thetas);
        let mut new_labels: Vec<usize> = scores.iter().map(|s| argmax_lowest(s)).collect();

        while let Some(empty) = sizes(&new_labels, k).iter().position(|&s| s == 0) {
            let s = sizes(&new_labels, k);
            let mut worst: Option<usize> = None;
            for i in 0..n {
                if s[new_labels[i]] < 2 {
                    continue;
                }
                let own = scores[i][new_labels[i]];
                if worst.is_none_or(|w| own < scores[w][new_labels[w]]) {
                    worst = Some(i);
                }
            }
            let i = worst.expect("K <= N guarantees a cluster with two members");
            let cfg = TrainConfig {
                seed: seed::derive(config.seed, (round * k + empty) as u64 ^ 0xE3A7),
                ..*config
            };
            let fit = fit_theta_design(&designs[i], &thetas[new_labels[i]], &cfg)?;
            thetas[empty] = fit.theta;
            new_labels[i] = empty;
            for (row, d) in scores.iter_mut().zip(&designs) {
                row[empty] = d.log_likelihood(&thetas[empty]);
            }
        }

        let n_reassigned = labels.iter().zip(&new_labels).filter(|(a, b)| a != b).count();
        labels = new_labels;
        let total_loglik = labels.iter().enumerate().map(|(i, &l)| scores[i][l]).sum();
        trace.rows.push(TraceRow {
            round,
            total_loglik,
            n_reassigned,
            cluster_sizes: sizes(&labels, k),
        });
        if n_reassigned == 0 {
            converged = true;
            break;
        }
    }

    let models = thetas
        .into_iter()
        .enumerate()
        .map(|(index, theta)| ClusterModel {
            index,
            theta,
            norm_bound: config.norm_bound,
        })
        .collect();
    let assignment = ClusterAssignment::from_labels(k, &corpus.worker_ids(), &labels)?;
    Ok(Alg1Result {
        models,
        assignment,
        trace,
        converged,
    })
}
