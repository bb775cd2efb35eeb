use rand::Rng;

use super::{argmax_lowest, ClusterAssignment};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};
use crate::reward::WorkerEmbedding;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: ClusterAssignment,
    /// Unit-norm centroids, one per cluster.
    pub centroids: Vec<Vec<f64>>,
    /// Σ cos(x_i, centroid of x_i) after each assignment step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

/// k-means under cosine similarity. Inputs are L2-normalized first; initial
/// centers are a seeded first pick followed by greedy farthest-point picks
/// (lowest maximum cosine to the centers chosen so far).
pub fn spherical_kmeans(
    embeddings: &[WorkerEmbedding],
    k: usize,
    seed_value: u64,
    max_iters: usize,
) -> Result<KMeansResult> {
    let n = embeddings.len();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k-means needs 1 <= K <= N, got K={k}, N={n}")));
    }
    let points = embeddings
        .iter()
        .map(|e| unit(&e.e).ok_or_else(|| Error::ZeroNormEmbedding(e.worker_id.clone())))
        .collect::<Result<Vec<_>>>()?;
    let dim = points[0].len();
    if let Some(e) = embeddings.iter().find(|e| e.e.len() != dim) {
        return Err(Error::dim(format!("embedding of {}", e.worker_id), dim, e.e.len()));
    }

    let mut rng = seed::rng(seed_value, 0x4b4d);
    let mut chosen = vec![rng.random_range(0..n)];
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let closeness = chosen
                .iter()
                .map(|&c| dot(p, &points[c]))
                .fold(f64::NEG_INFINITY, f64::max);
            if best.is_none_or(|(_, b)| closeness < b) {
                best = Some((i, closeness));
            }
        }
        chosen.push(best.expect("k <= n leaves an unchosen point").0);
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].clone()).collect();

    let mut labels: Vec<usize> = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut sims: Vec<Vec<f64>> = points
            .iter()
            .map(|p| centroids.iter().map(|c| dot(p, c)).collect())
            .collect();
        let mut new_labels: Vec<usize> = sims.iter().map(|s| argmax_lowest(s)).collect();

        // repair empty clusters with the point least similar to its centroid
        loop {
            let mut sizes = vec![0usize; k];
            new_labels.iter().for_each(|&l| sizes[l] += 1);
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                break;
            };
            let worst = (0..n)
                .filter(|&i| sizes[new_labels[i]] >= 2)
                .min_by(|&a, &b| sims[a][new_labels[a]].total_cmp(&sims[b][new_labels[b]]))
                .expect("k <= n leaves a cluster with two members");
            centroids[empty] = points[worst].clone();
            for (s, p) in sims.iter_mut().zip(&points) {
                s[empty] = dot(p, &centroids[empty]);
            }
            new_labels[worst] = empty;
        }

        trace.push(new_labels.iter().enumerate().map(|(i, &l)| sims[i][l]).sum());
        let changed = new_labels != labels;
        labels = new_labels;
        if !changed {
            break;
        }

        for (c, centroid) in centroids.iter_mut().enumerate() {
            let mut sum = vec![0.0; dim];
            for (p, _) in points.iter().zip(&labels).filter(|(_, &l)| l == c) {
                axpy(1.0, p, &mut sum);
            }
            // members that cancel exactly keep the previous direction
            if let Some(u) = unit(&sum) {
                *centroid = u;
            }
        }
    }

    let ids: Vec<&str> = embeddings.iter().map(|e| e.worker_id.as_str()).collect();
    Ok(KMeansResult {
        assignment: ClusterAssignment::from_labels(k, &ids, &labels)?,
        centroids,
        objective_trace: trace,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::adjusted_rand_index;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn clouds(n_per: usize, dim: usize, spread: f64, seed_value: u64) -> (Vec<WorkerEmbedding>, ClusterAssignment) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
        let axis: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut embs = Vec::new();
        let mut labels = Vec::new();
        for g in 0..2 {
            let sign = if g == 0 { 1.0 } else { -1.0 };
            for i in 0..n_per {
                let e = axis
                    .iter()
                    .map(|a| sign * a + spread * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                embs.push(WorkerEmbedding {
                    worker_id: format!("g{g}-{i}"),
                    e,
                });
                labels.push(g);
            }
        }
        let ids: Vec<String> = embs.iter().map(|e| e.worker_id.clone()).collect();
        (embs, ClusterAssignment::from_labels(2, &ids, &labels).unwrap())
    }

    #[test]
    fn antipodal_clouds_separate() {
        let (embs, truth) = clouds(12, 8, 0.2, 3);
        let res = spherical_kmeans(&embs, 2, 7, 50).unwrap();
        assert_eq!(adjusted_rand_index(&res.assignment, &truth).unwrap(), 1.0);
        assert!(res.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let (embs, _) = clouds(3, 4, 0.5, 1);
        let res = spherical_kmeans(&embs, 6, 0, 10).unwrap();
        let mut labels = res.assignment.labels();
        labels.sort_unstable();
        assert_eq!(labels, (0..6).collect::<Vec<_>>());
        assert!(spherical_kmeans(&embs, 7, 0, 10).is_err());
    }

    #[test]
    fn deterministic() {
        let (embs, _) = clouds(10, 5, 1.5, 9);
        let a = spherical_kmeans(&embs, 3, 11, 100).unwrap();
        let b = spherical_kmeans(&embs, 3, 11, 100).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn objective_monotone_and_scale_invariant(seed_value in 0u64..1000, k in 1usize..5, scale_pow in -4i32..5) {
            let (embs, _) = clouds(8, 4, 1.0, seed_value);
            let res = spherical_kmeans(&embs, k, seed_value, 100).unwrap();
            prop_assert!(res.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));

            let scale = 2f64.powi(scale_pow);
            let scaled: Vec<_> = embs
                .iter()
                .enumerate()
                .map(|(i, e)| WorkerEmbedding {
                    worker_id: e.worker_id.clone(),
                    e: e.e.iter().map(|x| if i % 2 == 0 { x * scale } else { *x }).collect(),
                })
                .collect();
            let res2 = spherical_kmeans(&scaled, k, seed_value, 100).unwrap();
            prop_assert_eq!(res.assignment, res2.assignment);
        }
    }
}
