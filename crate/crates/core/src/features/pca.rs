use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix};

/// Projection onto the leading principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaTransform {
    pub mean: Vec<f64>,
    /// `out_dim × D`, orthonormal rows ordered by decreasing eigenvalue.
    pub basis: Matrix,
    pub explained_variance_ratio: f64,
    /// Full descending eigen-spectrum of the sample covariance.
    pub eigenvalues: Vec<f64>,
}

impl PcaTransform {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        if v.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: v.len() });
        }
        for (r, o) in out.iter_mut().enumerate().take(self.output_dim()) {
            *o = self.basis.row(r).iter().zip(v.iter().zip(&self.mean)).map(|(b, (x, m))| b * (x - m)).sum();
        }
        Ok(())
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    /// Row-wise application; bit-identical to calling [`apply`](Self::apply) per row.
    pub fn apply_batch(&self, rows: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(rows.rows(), self.output_dim());
        for r in 0..rows.rows() {
            self.apply_into(rows.row(r), out.row_mut(r))?;
        }
        Ok(out)
    }

    pub fn reconstruct(&self, code: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (r, c) in code.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.basis.row(r)) {
                *o += c * b;
            }
        }
        out
    }
}

/// Fits the top `out_dim` principal directions of `samples` (`n × D`).
pub fn pca_fit(samples: &Matrix, out_dim: usize) -> Result<PcaTransform> {
    let (n, d) = samples.shape();
    if out_dim == 0 || out_dim > d {
        return Err(Error::DimensionMismatch { expected: d, got: out_dim });
    }
    if n < 2 {
        return Err(Error::RankDeficient { rank: 0, requested: out_dim });
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(samples.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = Matrix::from_fn(n, d, |r, c| samples.get(r, c) - mean[c]);
    let mut cov = Matrix::zeros(d, d);
    gemm(1.0 / (n as f64 - 1.0), &centered, true, &centered, false, 0.0, &mut cov);

    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov.as_slice()));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let top = eigenvalues[0];
    let tol = top * 1e-10 * d as f64;
    let rank = eigenvalues.iter().filter(|&&e| e > tol).count();
    if rank < out_dim {
        log::warn!("PCA: covariance rank {rank} < requested {out_dim}");
        return Err(Error::RankDeficient { rank, requested: out_dim });
    }
    let basis = Matrix::from_fn(out_dim, d, |r, c| eig.eigenvectors[(c, order[r])]);
    let total: f64 = eigenvalues.iter().sum();
    let kept: f64 = eigenvalues[..out_dim].iter().sum();
    Ok(PcaTransform {
        mean,
        basis,
        explained_variance_ratio: if total > 0.0 { (kept / total).clamp(0.0, 1.0) } else { 0.0 },
        eigenvalues,
    })
}

/// Fits on at most `max_samples` rows drawn uniformly without replacement.
pub fn pca_fit_sampled(rows: &Matrix, out_dim: usize, max_samples: usize, rng: &mut impl Rng) -> Result<PcaTransform> {
    if rows.rows() <= max_samples {
        return pca_fit(rows, out_dim);
    }
    let mut idx = sample(rng, rows.rows(), max_samples).into_vec();
    idx.sort_unstable();
    let sub = Matrix::from_fn(idx.len(), rows.cols(), |r, c| rows.get(idx[r], c));
    pca_fit(&sub, out_dim)
}
