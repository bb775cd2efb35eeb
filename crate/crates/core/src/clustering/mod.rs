//! Worker clustering: the alternating fit/assign procedure over cluster
//! parameters, plus embedding-space analysis (cosine similarity, spherical
//! k-means, PCA projection) and the adjusted Rand index.

mod alternation;
mod ari;
mod kmeans;
mod pca;
mod similarity;

pub use alternation::{
    assign_workers, run_algorithm1, worker_log_likelihoods, Alg1Result, AlternationTrace, Init, TraceRow,
};
pub use ari::adjusted_rand_index;
pub use kmeans::{spherical_kmeans, KMeansResult};
pub use pca::{pca_project, PcaProjection};
pub use similarity::{cosine_similarity_matrix, SimilarityMatrix};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The map from worker id to cluster index in `0..K`. Iteration follows
/// insertion order, which is the corpus worker order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawAssignment")]
pub struct ClusterAssignment {
    #[serde(rename = "K")]
    k: usize,
    assignment: IndexMap<String, usize>,
}

#[derive(Deserialize)]
struct RawAssignment {
    #[serde(rename = "K")]
    k: usize,
    assignment: IndexMap<String, usize>,
}

impl TryFrom<RawAssignment> for ClusterAssignment {
    type Error = Error;

    fn try_from(raw: RawAssignment) -> Result<Self> {
        Self::new(raw.k, raw.assignment)
    }
}

impl ClusterAssignment {
    pub fn new(k: usize, assignment: IndexMap<String, usize>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        if let Some((w, &c)) = assignment.iter().find(|(_, &c)| c >= k) {
            return Err(Error::InvalidConfig(format!("worker {w} assigned to cluster {c} >= K={k}")));
        }
        Ok(Self { k, assignment })
    }

    pub fn from_labels<S: AsRef<str>>(k: usize, workers: &[S], labels: &[usize]) -> Result<Self> {
        if workers.len() != labels.len() {
            return Err(Error::dim("assignment labels", workers.len(), labels.len()));
        }
        let map = workers
            .iter()
            .zip(labels)
            .map(|(w, &l)| (w.as_ref().to_string(), l))
            .collect();
        Self::new(k, map)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, worker: &str) -> Option<usize> {
        self.assignment.get(worker).copied()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.assignment.iter().map(|(w, &c)| (w.as_str(), c))
    }

    pub fn labels(&self) -> Vec<usize> {
        self.assignment.values().copied().collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in self.assignment.values() {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.iter().filter(|&(_, c)| c == cluster).map(|(w, _)| w).collect()
    }
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_json_shape() {
        let a = ClusterAssignment::from_labels(2, &["w1", "w0"], &[1, 0]).unwrap();
        let text = serde_json::to_string(&a).unwrap();
        assert_eq!(text, r#"{"K":2,"assignment":{"w1":1,"w0":0}}"#);
        let back: ClusterAssignment = serde_json::from_str(&text).unwrap();
        assert_eq!(back, a);
        assert_eq!(a.cluster_sizes(), vec![1, 1]);
        assert!(ClusterAssignment::from_labels(2, &["w"], &[2]).is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax_lowest(&[2.0, 2.0]), 0);
        assert_eq!(argmax_lowest(&[-1.0]), 0);
    }
}
