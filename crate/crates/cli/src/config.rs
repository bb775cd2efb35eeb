use std::path::{Path, PathBuf};

use hetero_rlhf::data::FeaturizerConfig;
use hetero_rlhf::eval::EvalScope;
use hetero_rlhf::policy::PolicyConfig;
use hetero_rlhf::reward::TrainConfig;
use hetero_rlhf::seed;
use hetero_rlhf::sim::SimConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    Simulate,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: Source,
    /// Training JSONL (or the whole corpus when `test_path` is absent).
    pub train_path: Option<PathBuf>,
    /// Separate test JSONL; when given, both files are restricted to their
    /// shared workers instead of being split.
    pub test_path: Option<PathBuf>,
    pub featurizer: FeaturizerConfig,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: Source::Simulate,
            train_path: None,
            test_path: None,
            featurizer: FeaturizerConfig::default(),
            train_fraction: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Kmeans,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub init: InitKind,
    pub max_rounds: usize,
    pub kmeans_max_iters: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 2,
            init: InitKind::Kmeans,
            max_rounds: 20,
            kmeans_max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyStage {
    pub enabled: bool,
    /// Candidate-set JSONL; random sets are generated when absent.
    pub candidates: Option<PathBuf>,
    pub n_sets: usize,
    pub n_candidates: usize,
    pub solver: PolicyConfig,
}

impl Default for PolicyStage {
    fn default() -> Self {
        Self {
            enabled: true,
            candidates: None,
            n_sets: 16,
            n_candidates: 4,
            solver: PolicyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Every stage seed is derived from this one.
    pub seed: u64,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub embedding_dim: usize,
    pub data: DataConfig,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub cluster: ClusterConfig,
    pub policy: PolicyStage,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub scope: EvalScope,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            embedding_dim: 16,
            data: DataConfig::default(),
            sim: SimConfig::default(),
            train: TrainConfig::default(),
            cluster: ClusterConfig::default(),
            policy: PolicyStage::default(),
            eval: EvalConfig::default(),
        }
    }
}

// stream tags for per-stage seeds
const SIM: u64 = 0x51;
const SPLIT: u64 = 0x5b;
const TRAIN: u64 = 0x7a;
const KMEANS: u64 = 0x4b;
const CANDIDATES: u64 = 0xca;

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        // relative data paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.train_path, &mut cfg.data.test_path, &mut cfg.policy.candidates]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Applies command-line overrides and derives the per-stage seeds.
    pub fn resolve(mut self, seed_flag: Option<u64>, out: Option<PathBuf>, k: Option<usize>) -> Result<Self, CliError> {
        if let Some(s) = seed_flag {
            self.seed = s;
        }
        if let Some(o) = out {
            self.out = Some(o);
        }
        if let Some(k) = k {
            self.cluster.k = k;
        }
        self.sim.seed = seed::derive(self.seed, SIM);
        self.train.seed = seed::derive(self.seed, TRAIN);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be at least 1".into());
        }
        if self.cluster.k == 0 {
            return bad("cluster.k must be at least 1".into());
        }
        if self.cluster.max_rounds == 0 {
            return bad("cluster.max_rounds must be at least 1".into());
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return bad(format!("data.train_fraction must lie in (0, 1), got {}", self.data.train_fraction));
        }
        if self.data.featurizer.dim == 0 {
            return bad("data.featurizer.dim must be at least 1".into());
        }
        if self.policy.n_candidates < 2 {
            return bad("policy.n_candidates must be at least 2".into());
        }
        if self.data.source == Source::Jsonl && self.data.train_path.is_none() {
            return bad("data.source = jsonl needs data.train_path".into());
        }
        self.sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.policy.solver.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn split_seed(&self) -> u64 {
        seed::derive(self.seed, SPLIT)
    }

    pub fn kmeans_seed(&self) -> u64 {
        seed::derive(self.seed, KMEANS)
    }

    pub fn candidate_seed(&self) -> u64 {
        seed::derive(self.seed, CANDIDATES)
    }
}
