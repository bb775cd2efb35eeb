//! Synthetic preference corpora with known latent worker groups.
//!
//! All groups share a backbone `(u*, V*)`; group `g` has a unit preference
//! vector `θ*_g`. Group 0 points along a random axis `a`; every other group
//! sits at angle `group_separation` from it (`cos φ · a + sin φ · b_g` with
//! `b_g` orthogonal to `a`). Worker `i` belongs to group `i mod K*` and
//! labels pairs with `e*_i = θ*_g + noise`. Candidate features are standard
//! normal. A pair's preferred side is sampled from `σ(Δr / temperature)`;
//! temperature 0 selects the higher-reward side deterministically.

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::btl::sigmoid;
use crate::data::{Corpus, FeatureVector, PreferenceRecord, SplitTag, WorkerDataset};
use crate::error::{Error, Result};
use crate::eval::WinRateReport;
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::policy::{Candidate, CandidateSet};
use crate::reward::SharedBackbone;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_workers: usize,
    pub n_latent_groups: usize,
    pub feature_dim: usize,
    pub embedding_dim: usize,
    pub pairs_per_worker: usize,
    /// Angle in radians between group 0 and every other group, in `[0, π]`.
    pub group_separation: f64,
    pub worker_noise: f64,
    /// Divides reward margins before BTL sampling; 0 means argmax labels.
    pub preference_temperature: f64,
    /// Standard deviation of the shared reward `⟨u*, x⟩`; 0 makes groups
    /// differ only through `θ*`.
    pub shared_reward_scale: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_workers: 30,
            n_latent_groups: 2,
            feature_dim: 16,
            embedding_dim: 8,
            pairs_per_worker: 200,
            group_separation: std::f64::consts::PI,
            worker_noise: 0.1,
            preference_temperature: 1.0,
            shared_reward_scale: 0.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_workers == 0 || self.n_latent_groups == 0 {
            return bad("n_workers and n_latent_groups must be positive".into());
        }
        if self.n_latent_groups > self.n_workers {
            return bad(format!(
                "n_latent_groups ({}) exceeds n_workers ({})",
                self.n_latent_groups, self.n_workers
            ));
        }
        if self.feature_dim == 0 || self.embedding_dim == 0 || self.pairs_per_worker == 0 {
            return bad("feature_dim, embedding_dim and pairs_per_worker must be positive".into());
        }
        if self.n_latent_groups > 1 && self.embedding_dim < 2 {
            return bad("separating groups needs embedding_dim >= 2".into());
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.group_separation) {
            return bad("group_separation must lie in [0, π]".into());
        }
        for (name, v) in [
            ("worker_noise", self.worker_noise),
            ("preference_temperature", self.preference_temperature),
            ("shared_reward_scale", self.shared_reward_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Stable tag identifying corpora generated from this configuration.
    pub fn provenance(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        format!("sim:{:016x}", seed::hash_str(&text))
    }
}

/// The latent model that generated a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub provenance: String,
    pub feature_dim: usize,
    pub embedding_dim: usize,
    pub u: Vec<f64>,
    /// Row-major `m × d`.
    #[serde(rename = "V")]
    pub v: Vec<f64>,
    pub group_thetas: Vec<Vec<f64>>,
    pub latent_group_of: IndexMap<String, usize>,
    pub worker_embeddings: IndexMap<String, Vec<f64>>,
}

impl GroundTruth {
    pub fn backbone(&self) -> SharedBackbone {
        SharedBackbone::new(
            self.u.clone(),
            Matrix::from_row_major(self.embedding_dim, self.feature_dim, self.v.clone()),
        )
        .expect("ground truth shapes are consistent")
    }

    pub fn n_groups(&self) -> usize {
        self.group_thetas.len()
    }

    /// Latent labels in corpus worker order.
    pub fn labels(&self) -> Vec<usize> {
        self.latent_group_of.values().copied().collect()
    }

    fn check(&self, corpus: &Corpus) -> Result<()> {
        if corpus.provenance.as_deref() != Some(self.provenance.as_str()) {
            return Err(Error::Provenance {
                expected: self.provenance.clone(),
                found: corpus.provenance.clone(),
            });
        }
        Ok(())
    }

    /// Win-rate of group `model_group`'s true reward on the records of each
    /// latent group (index = data group). Ties count one half.
    pub fn cross_group_win_rate(&self, corpus: &Corpus, model_group: usize) -> Result<Vec<WinRateReport>> {
        self.check(corpus)?;
        if model_group >= self.n_groups() {
            return Err(Error::InvalidConfig(format!("no latent group {model_group}")));
        }
        let bb = self.backbone();
        let theta = &self.group_thetas[model_group];
        let mut reports = Vec::with_capacity(self.n_groups());
        for g in 0..self.n_groups() {
            let records: Vec<&PreferenceRecord> = corpus
                .workers()
                .iter()
                .filter(|w| self.latent_group_of.get(w.worker_id()) == Some(&g))
                .flat_map(|w| w.records())
                .collect();
            reports.push(WinRateReport::from_pairs(
                format!("true group {model_group} on group {g}"),
                records
                    .iter()
                    .map(|r| (bb.score(theta, r.chosen.as_slice()), bb.score(theta, r.rejected.as_slice()))),
            ));
        }
        Ok(reports)
    }
}

/// Win-rate of each latent group's true reward on that group's records.
pub fn bayes_win_rate(gt: &GroundTruth, corpus: &Corpus) -> Result<Vec<WinRateReport>> {
    (0..gt.n_groups())
        .map(|g| {
            let mut r = gt.cross_group_win_rate(corpus, g)?.swap_remove(g);
            r.model_label = format!("bayes group {g}");
            Ok(r)
        })
        .collect()
}

fn normal_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Unit vectors `a, b_1, …, b_{K-1}`; each `b_g` is orthogonal to `a`, and
/// mutually orthogonal while the dimension allows.
fn group_axes<R: Rng>(rng: &mut R, m: usize, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let orthonormal = |mut v: Vec<f64>, basis: &[Vec<f64>]| {
        for b in basis {
            let c = dot(&v, b);
            axpy(-c, b, &mut v);
        }
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        v
    };
    let a = orthonormal(normal_vec(rng, m, 1.0), &[]);
    basis.push(a.clone());
    let mut bs = Vec::new();
    for _ in 1..k {
        let against: Vec<Vec<f64>> = if basis.len() < m { basis.clone() } else { vec![a.clone()] };
        let b = orthonormal(normal_vec(rng, m, 1.0), &against);
        if basis.len() < m {
            basis.push(b.clone());
        }
        bs.push(b);
    }
    (a, bs)
}

pub fn generate(config: &SimConfig) -> Result<(Corpus, GroundTruth)> {
    config.validate()?;
    let (d, m, k) = (config.feature_dim, config.embedding_dim, config.n_latent_groups);
    let mut global = seed::rng(config.seed, 0x5349_4d00);
    let v = Matrix::from_row_major(m, d, normal_vec(&mut global, m * d, 1.0 / (d as f64).sqrt()));
    let u = normal_vec(&mut global, d, config.shared_reward_scale / (d as f64).sqrt());
    let (a, bs) = group_axes(&mut global, m, k);
    let phi = config.group_separation;
    let mut group_thetas = vec![a.clone()];
    for b in &bs {
        group_thetas.push(a.iter().zip(b).map(|(x, y)| phi.cos() * x + phi.sin() * y).collect());
    }
    let backbone = SharedBackbone::new(u.clone(), v.clone())?;

    let mut workers = Vec::with_capacity(config.n_workers);
    let mut latent_group_of = IndexMap::new();
    let mut worker_embeddings = IndexMap::new();
    for i in 0..config.n_workers {
        let id = format!("w{i:03}");
        let g = i % k;
        let mut rng = seed::rng(config.seed, 0x1000 + i as u64);
        let mut e = group_thetas[g].clone();
        axpy(1.0, &normal_vec(&mut rng, m, config.worker_noise / (m as f64).sqrt()), &mut e);

        let mut records = Vec::with_capacity(config.pairs_per_worker);
        for j in 0..config.pairs_per_worker {
            let x1 = normal_vec(&mut rng, d, 1.0);
            let x2 = normal_vec(&mut rng, d, 1.0);
            let delta = backbone.score(&e, &x1) - backbone.score(&e, &x2);
            let first_wins = if config.preference_temperature == 0.0 {
                delta >= 0.0
            } else {
                let draw: f64 = rng.random();
                draw < sigmoid(delta / config.preference_temperature)
            };
            let (c, r) = if first_wins { (x1, x2) } else { (x2, x1) };
            records.push(PreferenceRecord::new(
                format!("{id}-p{j:04}"),
                id.clone(),
                FeatureVector::new(c)?,
                FeatureVector::new(r)?,
            )?);
        }
        workers.push(WorkerDataset::new(id.clone(), records)?);
        latent_group_of.insert(id.clone(), g);
        worker_embeddings.insert(id, e);
    }

    let provenance = config.provenance();
    let corpus = Corpus::new(workers, d, SplitTag::Unsplit)?.with_provenance(Some(provenance.clone()));
    let gt = GroundTruth {
        provenance,
        feature_dim: d,
        embedding_dim: m,
        u,
        v: v.as_slice().to_vec(),
        group_thetas,
        latent_group_of,
        worker_embeddings,
    };
    Ok((corpus, gt))
}

/// Random candidate sets with standard-normal features and reference
/// probabilities drawn uniformly on `[0.5, 1.5]` and normalized.
pub fn generate_candidate_sets(
    n_sets: usize,
    n_candidates: usize,
    feature_dim: usize,
    seed_value: u64,
) -> Result<Vec<CandidateSet>> {
    if n_candidates < 2 || feature_dim == 0 {
        return Err(Error::InvalidConfig("candidate sets need >= 2 candidates and feature_dim >= 1".into()));
    }
    let mut rng = seed::rng(seed_value, 0x4341_4e44);
    (0..n_sets)
        .map(|s| {
            let candidates = (0..n_candidates)
                .map(|c| {
                    Ok(Candidate {
                        action_id: format!("a{c}"),
                        features: FeatureVector::new(normal_vec(&mut rng, feature_dim, 1.0))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let raw: Vec<f64> = (0..n_candidates).map(|_| rng.random_range(0.5..1.5)).collect();
            let total: f64 = raw.iter().sum();
            let mut probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
            // absorb rounding so the vector sums to 1 as closely as possible
            let rest: f64 = probs[1..].iter().sum();
            probs[0] = 1.0 - rest;
            CandidateSet::new(format!("prompt-{s:03}"), candidates, probs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed_value: u64) -> SimConfig {
        SimConfig {
            n_workers: 6,
            pairs_per_worker: 50,
            seed: seed_value,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_shaped() {
        let (c1, g1) = generate(&small(3)).unwrap();
        let (c2, g2) = generate(&small(3)).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(g1, g2);
        assert_eq!(c1.n_workers(), 6);
        assert_eq!(c1.n_records(), 300);
        assert_eq!(g1.labels(), vec![0, 1, 0, 1, 0, 1]);
        let (c3, _) = generate(&small(4)).unwrap();
        assert_ne!(c1, c3);
        assert_ne!(c1.provenance, c3.provenance);
    }

    #[test]
    fn group_angle_is_the_separation() {
        for phi in [0.0, 1.0, std::f64::consts::PI] {
            let (_, gt) = generate(&SimConfig { group_separation: phi, ..small(1) }).unwrap();
            let c = dot(&gt.group_thetas[0], &gt.group_thetas[1]);
            assert!((c - phi.cos()).abs() < 1e-12);
            assert!((norm(&gt.group_thetas[1]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_mode_labels_are_noiseless() {
        let cfg = SimConfig { preference_temperature: 0.0, ..small(2) };
        let (corpus, gt) = generate(&cfg).unwrap();
        let bb = gt.backbone();
        for w in corpus.workers() {
            let e = &gt.worker_embeddings[w.worker_id()];
            for r in w.records() {
                assert!(bb.score(e, r.chosen.as_slice()) > bb.score(e, r.rejected.as_slice()));
            }
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&SimConfig { n_latent_groups: 7, ..small(0) }).is_err());
        assert!(generate(&SimConfig { group_separation: 4.0, ..small(0) }).is_err());
        assert!(generate(&SimConfig { preference_temperature: -1.0, ..small(0) }).is_err());
    }

    #[test]
    fn provenance_is_checked() {
        let (corpus, gt) = generate(&small(5)).unwrap();
        let stranger = corpus.clone().with_provenance(None);
        assert!(matches!(bayes_win_rate(&gt, &stranger), Err(Error::Provenance { .. })));
        assert!(bayes_win_rate(&gt, &corpus).is_ok());
    }

    #[test]
    fn candidate_sets_are_valid() {
        let sets = generate_candidate_sets(4, 3, 5, 9).unwrap();
        assert_eq!(sets.len(), 4);
        for s in &sets {
            assert_eq!(s.len(), 3);
            assert!((s.sft_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
