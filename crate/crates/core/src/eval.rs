//! Win-rates and the pooled-versus-clustered comparison table.

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::data::{Corpus, FeatureVector, PreferenceRecord};
use crate::error::{Error, Result};
use crate::reward::{ClusterModel, NaiveModel, SharedBackbone};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateReport {
    pub model_label: String,
    pub n_pairs: usize,
    /// Correct orderings, with exact ties counted as one half.
    pub wins: f64,
    /// `wins / n_pairs`; `None` when there were no pairs.
    pub win_rate: Option<f64>,
}

impl WinRateReport {
    /// Builds a report from `(reward_chosen, reward_rejected)` pairs.
    pub fn from_pairs(label: impl Into<String>, pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut n = 0usize;
        let mut wins = 0.0;
        for (c, r) in pairs {
            n += 1;
            if c > r {
                wins += 1.0;
            } else if c == r {
                wins += 0.5;
            }
        }
        Self {
            model_label: label.into(),
            n_pairs: n,
            wins,
            win_rate: (n > 0).then(|| wins / n as f64),
        }
    }
}

pub fn win_rate<'a, I, F>(label: impl Into<String>, records: I, mut reward_fn: F) -> WinRateReport
where
    I: IntoIterator<Item = &'a PreferenceRecord>,
    F: FnMut(&FeatureVector) -> f64,
{
    WinRateReport::from_pairs(
        label,
        records
            .into_iter()
            .map(|r| (reward_fn(&r.chosen), reward_fn(&r.rejected))),
    )
}

/// Which test records a cluster model is scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalScope {
    /// Only the records of workers assigned to that cluster.
    #[default]
    GroupRestricted,
    /// Every test record.
    FullData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub naive: WinRateReport,
    pub clusters: Vec<WinRateReport>,
    /// The pooled model scored on exactly the records behind each entry of
    /// `clusters`, for a like-for-like comparison.
    pub naive_by_cluster: Vec<WinRateReport>,
}

pub const NAIVE_LABEL: &str = "Naive RLHF";

pub fn cluster_label(k: usize) -> String {
    format!("Group {} Model", k + 1)
}

impl ComparisonTable {
    pub fn rows(&self) -> impl Iterator<Item = &WinRateReport> {
        std::iter::once(&self.naive).chain(self.clusters.iter())
    }

    /// CSV `model_label,win_rate_pct`, percentages with three decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model_label,win_rate_pct\n");
        for row in self.rows() {
            let pct = row
                .win_rate
                .map(|w| format!("{:.3}", 100.0 * w))
                .unwrap_or_else(|| "NA".into());
            out.push_str(&format!("{},{}\n", row.model_label, pct));
        }
        out
    }
}

/// Scores the pooled model on every test record and each cluster model on
/// its own cluster's workers (or on everything with [`EvalScope::FullData`]).
pub fn compare_models(
    test: &Corpus,
    naive: &NaiveModel,
    backbone: &SharedBackbone,
    clusters: &[ClusterModel],
    assignment: &ClusterAssignment,
    scope: EvalScope,
) -> Result<ComparisonTable> {
    if naive.w.len() != test.feature_dim() {
        return Err(Error::dim("naive model", test.feature_dim(), naive.w.len()));
    }
    if backbone.feature_dim() != test.feature_dim() {
        return Err(Error::dim("backbone", test.feature_dim(), backbone.feature_dim()));
    }
    if assignment.k() != clusters.len() {
        return Err(Error::dim("cluster models vs assignment K", assignment.k(), clusters.len()));
    }
    let mut labels = Vec::with_capacity(test.n_workers());
    for w in test.workers() {
        labels.push(
            assignment
                .get(w.worker_id())
                .ok_or_else(|| Error::Unassigned(w.worker_id().to_string()))?,
        );
    }
    for c in clusters {
        if c.theta.len() != backbone.embedding_dim() {
            return Err(Error::dim(format!("theta of cluster {}", c.index), backbone.embedding_dim(), c.theta.len()));
        }
    }

    let pooled = |x: &FeatureVector| crate::linalg::dot(&naive.w, x.as_slice());
    let naive_report = win_rate(NAIVE_LABEL, test.records(), pooled);
    let scoped = |k: usize| {
        test.workers()
            .iter()
            .zip(&labels)
            .filter(move |&(_, &l)| scope == EvalScope::FullData || l == k)
            .flat_map(|(w, _)| w.records())
    };
    let mut cluster_reports = Vec::with_capacity(clusters.len());
    let mut naive_by_cluster = Vec::with_capacity(clusters.len());
    for (k, model) in clusters.iter().enumerate() {
        cluster_reports.push(win_rate(cluster_label(k), scoped(k), |x| {
            backbone.score(&model.theta, x.as_slice())
        }));
        naive_by_cluster.push(win_rate(format!("{NAIVE_LABEL} on group {}", k + 1), scoped(k), pooled));
    }
    Ok(ComparisonTable {
        naive: naive_report,
        clusters: cluster_reports,
        naive_by_cluster,
    })
}
