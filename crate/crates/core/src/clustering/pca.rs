use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::reward::WorkerEmbedding;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub coords: Vec<(String, Vec<f64>)>,
    /// Eigenvalues of the (1/N-normalized) covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// Principal axes used for the projection, one row per output dimension.
    pub components: Vec<Vec<f64>>,
    /// Set when all embeddings coincide; coordinates are then all zero.
    pub degenerate: bool,
}

impl PcaProjection {
    /// CSV `worker_id,x,y[,z]`.
    pub fn to_csv(&self) -> String {
        let axes = ["x", "y", "z"];
        let dim = self.components.len();
        let mut out = String::from("worker_id");
        for a in axes.iter().take(dim) {
            out.push(',');
            out.push_str(a);
        }
        out.push('\n');
        for (id, c) in &self.coords {
            out.push_str(id);
            for v in c {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Projects mean-centered embeddings onto their top `out_dim` principal
/// axes. Each axis is oriented so that its largest-magnitude loading is
/// positive.
pub fn pca_project(embeddings: &[WorkerEmbedding], out_dim: usize) -> Result<PcaProjection> {
    let n = embeddings.len();
    if out_dim == 0 || n <= out_dim {
        return Err(Error::InvalidConfig(format!(
            "projection to {out_dim} dimensions needs more than {out_dim} embeddings, got {n}"
        )));
    }
    let m = embeddings[0].e.len();
    if out_dim > m {
        return Err(Error::InvalidConfig(format!(
            "cannot project {m}-dimensional embeddings to {out_dim} dimensions"
        )));
    }
    if let Some(e) = embeddings.iter().find(|e| e.e.len() != m) {
        return Err(Error::dim(format!("embedding of {}", e.worker_id), m, e.e.len()));
    }

    let mut mean = vec![0.0; m];
    for e in embeddings {
        crate::linalg::axpy(1.0 / n as f64, &e.e, &mut mean);
    }
    let centered = DMatrix::from_fn(n, m, |i, j| embeddings[i].e[j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let total_var = cov.trace();
    let scale = embeddings
        .iter()
        .flat_map(|e| e.e.iter())
        .fold(0.0f64, |a, x| a.max(x.abs()));

    if total_var <= 1e-24 * scale.max(1.0).powi(2) {
        return Ok(PcaProjection {
            coords: embeddings.iter().map(|e| (e.worker_id.clone(), vec![0.0; out_dim])).collect(),
            eigenvalues: vec![0.0; m],
            components: vec![vec![0.0; m]; out_dim],
            degenerate: true,
        });
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let components: Vec<Vec<f64>> = order
        .iter()
        .take(out_dim)
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = v
                .iter()
                .enumerate()
                .fold(0, |best, (j, x)| if x.abs() > v[best].abs() { j } else { best });
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();

    let coords = embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let row: Vec<f64> = centered.row(i).iter().copied().collect();
            (
                e.worker_id.clone(),
                components.iter().map(|c| crate::linalg::dot(c, &row)).collect(),
            )
        })
        .collect();

    Ok(PcaProjection {
        coords,
        eigenvalues,
        components,
        degenerate: false,
    })
}
