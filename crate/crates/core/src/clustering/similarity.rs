use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::reward::WorkerEmbedding;

/// Pairwise cosine similarities between worker embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub worker_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

pub fn cosine_similarity_matrix(embeddings: &[WorkerEmbedding]) -> Result<SimilarityMatrix> {
    if embeddings.len() < 2 {
        return Err(Error::InvalidConfig("similarity needs at least two embeddings".into()));
    }
    let dim = embeddings[0].e.len();
    let mut norms = Vec::with_capacity(embeddings.len());
    for e in embeddings {
        if e.e.len() != dim {
            return Err(Error::dim(format!("embedding of {}", e.worker_id), dim, e.e.len()));
        }
        let n = norm(&e.e);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNormEmbedding(e.worker_id.clone()));
        }
        norms.push(n);
    }
    let n = embeddings.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        values[i][i] = 1.0;
        for j in i + 1..n {
            let c = (dot(&embeddings[i].e, &embeddings[j].e) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    Ok(SimilarityMatrix {
        worker_ids: embeddings.iter().map(|e| e.worker_id.clone()).collect(),
        values,
    })
}

impl SimilarityMatrix {
    /// Heatmap-style CSV: a header row and a leading column of worker ids,
    /// cells with six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("worker_id");
        for id in &self.worker_ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (id, row) in self.worker_ids.iter().zip(&self.values) {
            out.push_str(id);
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }

    /// Mean similarity over distinct pairs `(i, j)` selected by `pick`.
    pub fn mean_where(&self, mut pick: impl FnMut(usize, usize) -> bool) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..self.values.len() {
            for j in i + 1..self.values.len() {
                if pick(i, j) {
                    sum += self.values[i][j];
                    count += 1;
                }
            }
        }
        (count > 0).then(|| sum / count as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(id: &str, e: Vec<f64>) -> WorkerEmbedding {
        WorkerEmbedding {
            worker_id: id.into(),
            e,
        }
    }

    #[test]
    fn basic_values() {
        let s = cosine_similarity_matrix(&[
            emb("a", vec![1.0, 2.0]),
            emb("b", vec![1.0, 2.0]),
            emb("c", vec![-1.0, -2.0]),
            emb("d", vec![2.0, -1.0]),
        ])
        .unwrap();
        assert!((s.values[0][1] - 1.0).abs() < 1e-15);
        assert!((s.values[0][2] + 1.0).abs() < 1e-15);
        assert!(s.values[0][3].abs() < 1e-12);
        let csv = s.to_csv();
        assert!(csv.starts_with("worker_id,a,b,c,d\na,1.000000,1.000000,-1.000000,0.000000\n"));
    }

    #[test]
    fn zero_norm_is_named() {
        let err = cosine_similarity_matrix(&[emb("a", vec![1.0]), emb("ghost", vec![0.0])]).unwrap_err();
        assert!(matches!(err, Error::ZeroNormEmbedding(ref w) if w == "ghost"));
        assert!(cosine_similarity_matrix(&[emb("a", vec![1.0])]).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_unit_diagonal(raw in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 4), 2..8)) {
            let embs: Vec<_> = raw
                .into_iter()
                .enumerate()
                .filter(|(_, e)| norm(e) > 1e-6)
                .map(|(i, e)| emb(&format!("w{i}"), e))
                .collect();
            prop_assume!(embs.len() >= 2);
            let s = cosine_similarity_matrix(&embs).unwrap();
            for i in 0..embs.len() {
                prop_assert_eq!(s.values[i][i], 1.0);
                for j in 0..embs.len() {
                    prop_assert!((s.values[i][j] - s.values[j][i]).abs() <= 1e-12);
                    prop_assert!((-1.0..=1.0).contains(&s.values[i][j]));
                }
            }
        }
    }
}
