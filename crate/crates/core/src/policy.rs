//! KL-regularized policy extraction over finite candidate sets.
//!
//! For a prompt with candidates `a`, reference probabilities `π_ref(a)` and
//! rewards `r(a)`, the regularized objective is
//!
//! ```text
//! J(π) = Σ_a π(a) [ r(a) − β log(π(a) / π_ref(a)) ]
//! ```
//!
//! whose maximizer on the simplex is the Gibbs distribution
//! `π*(a) ∝ π_ref(a) exp(r(a) / β)`. The per-cluster variant adds
//! `Σ_a μ(a) log π(a)` for a reference distribution `μ`; it has no closed
//! form and is solved by exponentiated gradient.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::FeatureVector;
use crate::error::{Error, Result};
use crate::reward::{ClusterModel, SharedBackbone};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub action_id: String,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCandidateSet")]
pub struct CandidateSet {
    pub prompt_id: String,
    pub candidates: Vec<Candidate>,
    pub sft_probs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawCandidateSet {
    prompt_id: String,
    candidates: Vec<Candidate>,
    sft_probs: Vec<f64>,
}

impl TryFrom<RawCandidateSet> for CandidateSet {
    type Error = Error;

    fn try_from(raw: RawCandidateSet) -> Result<Self> {
        CandidateSet::new(raw.prompt_id, raw.candidates, raw.sft_probs)
    }
}

fn check_distribution(p: &[f64], what: &str, strictly_positive: bool) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0 || (strictly_positive && *x == 0.0)) {
        return Err(Error::InvalidConfig(format!("{what} has invalid entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

impl CandidateSet {
    pub fn new(prompt_id: impl Into<String>, candidates: Vec<Candidate>, sft_probs: Vec<f64>) -> Result<Self> {
        if candidates.len() < 2 {
            return Err(Error::InvalidConfig("a candidate set needs at least two candidates".into()));
        }
        if sft_probs.len() != candidates.len() {
            return Err(Error::dim("sft_probs", candidates.len(), sft_probs.len()));
        }
        let d = candidates[0].features.len();
        if let Some(c) = candidates.iter().find(|c| c.features.len() != d) {
            return Err(Error::dim(format!("candidate {}", c.action_id), d, c.features.len()));
        }
        check_distribution(&sft_probs, "sft_probs", true)?;
        Ok(Self {
            prompt_id: prompt_id.into(),
            candidates,
            sft_probs,
        })
    }

    /// Candidate set with uniform reference probabilities.
    pub fn uniform(prompt_id: impl Into<String>, candidates: Vec<Candidate>) -> Result<Self> {
        let n = candidates.len().max(1);
        Self::new(prompt_id, candidates, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDistribution {
    pub prompt_id: String,
    pub probs: Vec<f64>,
}

impl PolicyDistribution {
    pub fn total_variation(&self, other: &PolicyDistribution) -> f64 {
        total_variation(&self.probs, &other.probs)
    }
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Reward minus β·KL to the reference policy.
    Eq31,
    /// The same plus the `μ`-weighted log-probability term.
    #[default]
    Alg1Line3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum UniformKeyword {
    Uniform,
}

/// Reference distribution of the extra term: `"uniform"` or explicit
/// probabilities aligned with the candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(untagged, from = "Mu1Repr", into = "Mu1Repr")]
pub enum Mu1 {
    #[default]
    Uniform,
    Probs(Vec<f64>),
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Mu1Repr {
    Keyword(UniformKeyword),
    Probs(Vec<f64>),
}

impl From<Mu1Repr> for Mu1 {
    fn from(r: Mu1Repr) -> Self {
        match r {
            Mu1Repr::Keyword(_) => Mu1::Uniform,
            Mu1Repr::Probs(p) => Mu1::Probs(p),
        }
    }
}

impl From<Mu1> for Mu1Repr {
    fn from(m: Mu1) -> Self {
        match m {
            Mu1::Uniform => Mu1Repr::Keyword(UniformKeyword::Uniform),
            Mu1::Probs(p) => Mu1Repr::Probs(p),
        }
    }
}

impl Mu1 {
    fn resolve(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            Mu1::Uniform => Ok(vec![1.0 / n as f64; n]),
            Mu1::Probs(p) => {
                if p.len() != n {
                    return Err(Error::dim("mu1", n, p.len()));
                }
                check_distribution(p, "mu1", false)?;
                Ok(p.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub beta: f64,
    pub mu1: Mu1,
    pub solver_tol: f64,
    pub solver_max_iters: usize,
    /// Objective used by [`per_cluster_policies`].
    pub variant: Variant,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            mu1: Mu1::Uniform,
            solver_tol: 1e-15,
            solver_max_iters: 100_000,
            variant: Variant::Alg1Line3,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig("beta must be positive".into()));
        }
        if self.solver_tol.is_nan() || self.solver_tol <= 0.0 {
            return Err(Error::InvalidConfig("solver_tol must be positive".into()));
        }
        if self.solver_max_iters == 0 {
            return Err(Error::InvalidConfig("solver_max_iters must be positive".into()));
        }
        if let Mu1::Probs(p) = &self.mu1 {
            check_distribution(p, "mu1", false)?;
        }
        Ok(())
    }
}

/// Objective on raw slices. `mu = None` gives the plain KL-regularized
/// value; with `Some(μ)` the term `Σ μ(a) log π(a)` is added and the result
/// is `−∞` when π puts zero mass where μ does not. `0 · log 0` is 0.
pub fn objective_raw(pi: &[f64], rewards: &[f64], sft: &[f64], beta: f64, mu: Option<&[f64]>) -> f64 {
    let mut total = 0.0;
    for ((&p, &r), &q) in pi.iter().zip(rewards).zip(sft) {
        if p > 0.0 {
            total += p * (r - beta * (p / q).ln());
        }
    }
    if let Some(mu) = mu {
        for (&p, &w) in pi.iter().zip(mu) {
            if w > 0.0 {
                if p <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                total += w * p.ln();
            }
        }
    }
    total
}

fn check_lengths(cs: &CandidateSet, len: usize, what: &str) -> Result<()> {
    if len != cs.len() {
        return Err(Error::dim(what, cs.len(), len));
    }
    Ok(())
}

pub fn objective_value(
    cs: &CandidateSet,
    pi: &PolicyDistribution,
    rewards: &[f64],
    config: &PolicyConfig,
    variant: Variant,
) -> Result<f64> {
    check_lengths(cs, pi.probs.len(), "policy")?;
    check_lengths(cs, rewards.len(), "rewards")?;
    check_distribution(&pi.probs, "policy", false)?;
    let mu = match variant {
        Variant::Eq31 => None,
        Variant::Alg1Line3 => Some(config.mu1.resolve(cs.len())?),
    };
    Ok(objective_raw(&pi.probs, rewards, &cs.sft_probs, config.beta, mu.as_deref()))
}

fn normalize_log(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits.iter_mut().for_each(|x| *x -= lse);
}

/// Gibbs policy `π ∝ π_ref · exp(r / β)`, normalized in log space.
pub fn optimal_policy_closed_form(cs: &CandidateSet, rewards: &[f64], beta: f64) -> Result<PolicyDistribution> {
    check_lengths(cs, rewards.len(), "rewards")?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidConfig("beta must be positive".into()));
    }
    let mut logits: Vec<f64> = cs
        .sft_probs
        .iter()
        .zip(rewards)
        .map(|(q, r)| q.ln() + r / beta)
        .collect();
    normalize_log(&mut logits);
    Ok(PolicyDistribution {
        prompt_id: cs.prompt_id.clone(),
        probs: logits.into_iter().map(f64::exp).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericSolution {
    pub policy: PolicyDistribution,
    pub objective: f64,
    pub iterations: usize,
    /// False when `solver_max_iters` ran out before the improvement fell
    /// below `solver_tol`; the policy is then the best iterate seen.
    pub converged: bool,
}

const MAX_HALVINGS: usize = 60;

/// Exponentiated-gradient ascent from the reference policy. The base step
/// is `0.5 / (β + 1)`; a step that would lower the objective is halved until
/// it does not, so every accepted iterate improves on the previous one.
pub fn optimal_policy_numeric(
    cs: &CandidateSet,
    rewards: &[f64],
    config: &PolicyConfig,
    variant: Variant,
) -> Result<NumericSolution> {
    config.validate()?;
    check_lengths(cs, rewards.len(), "rewards")?;
    let mu = match variant {
        Variant::Eq31 => None,
        Variant::Alg1Line3 => Some(config.mu1.resolve(cs.len())?),
    };
    let beta = config.beta;
    let sft = &cs.sft_probs;
    let log_sft: Vec<f64> = sft.iter().map(|q| q.ln()).collect();
    let base_step = 0.5 / (beta + 1.0);

    let mut log_pi = log_sft.clone();
    let mut pi: Vec<f64> = sft.clone();
    let mut value = objective_raw(&pi, rewards, sft, beta, mu.as_deref());
    let mut converged = false;
    let mut iterations = 0;
    let mut grad = vec![0.0; cs.len()];
    let mut trial = vec![0.0; cs.len()];

    while iterations < config.solver_max_iters {
        iterations += 1;
        for a in 0..cs.len() {
            grad[a] = rewards[a] - beta * (log_pi[a] - log_sft[a] + 1.0);
            if let Some(mu) = &mu {
                grad[a] += mu[a] / pi[a];
            }
        }
        let mut step = base_step;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            for a in 0..cs.len() {
                trial[a] = log_pi[a] + step * grad[a];
            }
            normalize_log(&mut trial);
            let trial_pi: Vec<f64> = trial.iter().map(|x| x.exp()).collect();
            let trial_value = objective_raw(&trial_pi, rewards, sft, beta, mu.as_deref());
            if trial_value >= value {
                accepted = Some((trial_pi, trial_value));
                break;
            }
            step *= 0.5;
        }
        let Some((new_pi, new_value)) = accepted else {
            converged = true;
            break;
        };
        let improvement = new_value - value;
        log_pi.copy_from_slice(&trial);
        pi = new_pi;
        value = new_value;
        if improvement < config.solver_tol {
            converged = true;
            break;
        }
    }

    Ok(NumericSolution {
        policy: PolicyDistribution {
            prompt_id: cs.prompt_id.clone(),
            probs: pi,
        },
        objective: value,
        iterations,
        converged,
    })
}

/// Candidate rewards under one cluster's preference vector.
pub fn candidate_rewards(cs: &CandidateSet, backbone: &SharedBackbone, theta: &[f64]) -> Result<Vec<f64>> {
    cs.candidates
        .iter()
        .map(|c| crate::reward::reward_personal(backbone, theta, c.features.as_slice()))
        .collect()
}

/// One policy per (cluster, candidate set), using `config.variant`.
pub fn per_cluster_policies(
    clusters: &[ClusterModel],
    backbone: &SharedBackbone,
    candidate_sets: &[CandidateSet],
    config: &PolicyConfig,
) -> Result<BTreeMap<usize, Vec<PolicyDistribution>>> {
    config.validate()?;
    let mut out = BTreeMap::new();
    for cluster in clusters {
        let policies = crate::par::map(candidate_sets, |cs| {
            let rewards = candidate_rewards(cs, backbone, &cluster.theta)?;
            Ok(optimal_policy_numeric(cs, &rewards, config, config.variant)?.policy)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        out.insert(cluster.index, policies);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

pub fn read_candidate_sets(path: impl AsRef<Path>) -> Result<Vec<CandidateSet>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sets = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cs: CandidateSet = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        sets.push(cs);
    }
    Ok(sets)
}

pub fn write_candidate_sets<W: Write>(sets: &[CandidateSet], mut out: W) -> Result<()> {
    for cs in sets {
        serde_json::to_writer(&mut out, cs)?;
        out.write_all(b"\n").map_err(|e| Error::io("<candidate writer>", e))?;
    }
    Ok(())
}

/// One exported policy: `{"prompt_id", "cluster", "probs": {action_id: p}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub prompt_id: String,
    pub cluster: usize,
    pub probs: IndexMap<String, f64>,
}

pub fn policy_records(
    policies: &BTreeMap<usize, Vec<PolicyDistribution>>,
    candidate_sets: &[CandidateSet],
) -> Vec<PolicyRecord> {
    let mut out = Vec::new();
    for (&cluster, dists) in policies {
        for (cs, dist) in candidate_sets.iter().zip(dists) {
            out.push(PolicyRecord {
                prompt_id: dist.prompt_id.clone(),
                cluster,
                probs: cs
                    .candidates
                    .iter()
                    .zip(&dist.probs)
                    .map(|(c, &p)| (c.action_id.clone(), p))
                    .collect(),
            });
        }
    }
    out
}
