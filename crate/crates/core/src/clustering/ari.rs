use std::collections::HashMap;

use super::ClusterAssignment;
use crate::error::{Error, Result};

fn comb2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index between two partitions of the same worker set.
///
/// When both partitions are trivial in the same way (all singletons or a
/// single block) the chance-corrected denominator vanishes; the index is
/// then 1 for identical partitions and 0 otherwise.
pub fn adjusted_rand_index(a: &ClusterAssignment, b: &ClusterAssignment) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::MismatchedWorkers);
    }
    let mut pairs = Vec::with_capacity(a.len());
    for (w, la) in a.iter() {
        let lb = b.get(w).ok_or(Error::MismatchedWorkers)?;
        pairs.push((la, lb));
    }
    Ok(ari_from_labels(&pairs))
}

pub(crate) fn ari_from_labels(pairs: &[(usize, usize)]) -> f64 {
    let n = pairs.len();
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for &(x, y) in pairs {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    // sum in a fixed order so the value is reproducible
    fn sorted_sum<'a>(counts: impl Iterator<Item = &'a usize>) -> f64 {
        let mut v: Vec<f64> = counts.map(|&c| comb2(c)).collect();
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>()
    }
    let index = sorted_sum(table.values());
    let sum_rows = sorted_sum(rows.values());
    let sum_cols = sorted_sum(cols.values());
    let total = comb2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom == 0.0 {
        let identical = index == sum_rows && index == sum_cols;
        return if identical { 1.0 } else { 0.0 };
    }
    (index - expected) / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assign(labels: &[usize]) -> ClusterAssignment {
        let ids: Vec<String> = (0..labels.len()).map(|i| format!("w{i}")).collect();
        let k = labels.iter().max().unwrap() + 1;
        ClusterAssignment::from_labels(k, &ids, labels).unwrap()
    }

    #[test]
    fn identical_and_permuted() {
        let a = assign(&[0, 0, 1, 1, 2, 2, 2]);
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        let b = assign(&[2, 2, 0, 0, 1, 1, 1]);
        assert!((adjusted_rand_index(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reference_value() {
        // sklearn.metrics.adjusted_rand_score([0,0,1,1],[0,0,1,2]) = 0.5714285714285715
        let a = assign(&[0, 0, 1, 1]);
        let b = assign(&[0, 0, 1, 2]);
        assert!((adjusted_rand_index(&a, &b).unwrap() - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_partitions() {
        let one = assign(&[0, 0, 0]);
        let singles = assign(&[0, 1, 2]);
        assert_eq!(adjusted_rand_index(&one, &one).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&singles, &singles).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&one, &singles).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_workers() {
        let a = assign(&[0, 1]);
        let b = ClusterAssignment::from_labels(2, &["x", "y"], &[0, 1]).unwrap();
        assert!(matches!(adjusted_rand_index(&a, &b), Err(Error::MismatchedWorkers)));
    }

    #[test]
    fn random_partitions_average_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let fixed: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let a = assign(&fixed);
        let mean: f64 = (0..100)
            .map(|_| {
                let labels: Vec<usize> = (0..60).map(|_| rng.random_range(0..3)).collect();
                adjusted_rand_index(&a, &assign(&labels)).unwrap()
            })
            .sum::<f64>()
            / 100.0;
        assert!(mean.abs() <= 0.05, "mean ARI {mean}");
    }
}
