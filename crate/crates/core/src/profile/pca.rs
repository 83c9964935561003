//! Principal subspace model for per-service metric vectors.
//!
//! Fitting eigendecomposes the sample covariance of the fault-free window
//! vectors. Components are ordered by descending eigenvalue and sign-fixed so
//! that each component's largest-magnitude entry is positive.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PcaError {
    #[error("need at least 2 training vectors, got {0}")]
    InsufficientData(usize),
    #[error("training vectors have inconsistent dimensionality")]
    RaggedData,
    #[error("all training vectors are identical")]
    DegenerateData,
    #[error("expected {expected} dimensions, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// How many components to retain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentRule {
    /// Smallest k whose cumulative explained variance reaches the fraction.
    VarianceTarget(f64),
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// Training mean.
    pub mean: Vec<f64>,
    /// Retained components, each a unit vector of length D.
    pub components: Vec<Vec<f64>>,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub threshold: f64,
}

impl PcaModel {
    /// Model for constant training data: no components, every deviation from
    /// the mean counts fully.
    pub fn degenerate(mean: Vec<f64>, threshold: f64) -> PcaModel {
        let d = mean.len();
        PcaModel {
            mean,
            components: Vec::new(),
            eigenvalues: vec![0.0; d],
            threshold,
        }
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Keeps only the first `k` components.
    pub fn truncated(&self, k: usize) -> PcaModel {
        PcaModel {
            components: self.components.iter().take(k).cloned().collect(),
            ..self.clone()
        }
    }

    fn check_dims(&self, v: &[f64]) -> Result<(), PcaError> {
        if v.len() != self.dims() {
            return Err(PcaError::DimensionMismatch {
                expected: self.dims(),
                actual: v.len(),
            });
        }
        Ok(())
    }

    /// Projection of the centered vector onto the principal subspace,
    /// `m_c U U^T`, still centered.
    pub fn reconstruct_centered(&self, v: &[f64]) -> Result<Vec<f64>, PcaError> {
        self.check_dims(v)?;
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        let mut recon = vec![0.0; v.len()];
        for u in &self.components {
            let coef: f64 = u.iter().zip(&centered).map(|(a, b)| a * b).sum();
            for (r, ui) in recon.iter_mut().zip(u) {
                *r += coef * ui;
            }
        }
        Ok(recon)
    }

    /// `||m_c - m_c U U^T||^2`
    pub fn reconstruction_error(&self, v: &[f64]) -> Result<f64, PcaError> {
        let recon = self.reconstruct_centered(v)?;
        Ok(v.iter()
            .zip(&self.mean)
            .zip(&recon)
            .map(|((x, m), r)| {
                let e = (x - m) - r;
                e * e
            })
            .sum())
    }

    /// `||m - (m_c U U^T + mu)||^2`, the uncentered form of the same error.
    pub fn reconstruction_error_uncentered(&self, v: &[f64]) -> Result<f64, PcaError> {
        let recon = self.reconstruct_centered(v)?;
        Ok(v.iter()
            .zip(&self.mean)
            .zip(&recon)
            .map(|((x, m), r)| {
                let e = x - (r + m);
                e * e
            })
            .sum())
    }

    pub fn is_anomalous(&self, v: &[f64]) -> Result<bool, PcaError> {
        Ok(self.reconstruction_error(v)? > self.threshold)
    }
}

/// Fits the subspace and sets `threshold = mean + rho_sigma * std` of the
/// training reconstruction errors, floored at `rho_floor`.
pub fn fit_pca(
    vectors: &[Vec<f64>],
    rule: ComponentRule,
    rho_sigma: f64,
    rho_floor: f64,
) -> Result<PcaModel, PcaError> {
    let n = vectors.len();
    if n < 2 {
        return Err(PcaError::InsufficientData(n));
    }
    let d = vectors[0].len();
    if d == 0 || vectors.iter().any(|v| v.len() != d) {
        return Err(PcaError::RaggedData);
    }
    if vectors.iter().all(|v| v == &vectors[0]) {
        return Err(PcaError::DegenerateData);
    }

    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(PcaError::DegenerateData);
    }

    let k = match rule {
        ComponentRule::Fixed(k) => k.min(d),
        ComponentRule::VarianceTarget(target) => {
            let mut cum = 0.0;
            let mut k = d;
            for (i, ev) in eigenvalues.iter().enumerate() {
                cum += ev;
                if cum / total >= target - 1e-12 {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };

    let components = order
        .iter()
        .take(k)
        .map(|&col| {
            let mut u: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
            let lead = u
                .iter()
                .enumerate()
                .fold(0, |best, (i, x)| if x.abs() > u[best].abs() { i } else { best });
            if u[lead] < 0.0 {
                u.iter_mut().for_each(|x| *x = -*x);
            }
            u
        })
        .collect();

    let mut model = PcaModel {
        mean,
        components,
        eigenvalues,
        threshold: rho_floor,
    };
    let errors: Vec<f64> = vectors
        .iter()
        .map(|v| model.reconstruction_error(v).expect("dims checked"))
        .collect();
    let mu = errors.iter().sum::<f64>() / n as f64;
    let var = errors.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / n as f64;
    model.threshold = (mu + rho_sigma * var.sqrt()).max(rho_floor);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data() -> Vec<Vec<f64>> {
        (0..10).map(|i| vec![i as f64, i as f64]).collect()
    }

    #[test]
    fn constant_data_is_degenerate() {
        let data = vec![vec![1.0, 2.0]; 5];
        assert_eq!(
            fit_pca(&data, ComponentRule::VarianceTarget(0.95), 3.0, 1e-9),
            Err(PcaError::DegenerateData)
        );
        let m = PcaModel::degenerate(vec![1.0, 2.0], 1e-9);
        assert_eq!(m.k(), 0);
        assert_eq!(m.reconstruction_error(&[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn line_model_projects_orthogonal_offset() {
        let m = fit_pca(&line_data(), ComponentRule::Fixed(1), 3.0, 1e-9).unwrap();
        assert!((m.reconstruction_error(&[3.0, 3.0]).unwrap()).abs() < 1e-12);
        let off = [m.mean[0] + 1.0, m.mean[1] - 1.0];
        assert!((m.reconstruction_error(&off).unwrap() - 2.0).abs() < 1e-12);
        // The line's direction, sign-fixed.
        let u = &m.components[0];
        assert!((u[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((u[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn variance_target_picks_one_component_for_a_line() {
        let m = fit_pca(&line_data(), ComponentRule::VarianceTarget(0.95), 3.0, 1e-9).unwrap();
        assert_eq!(m.k(), 1);
        assert_eq!(m.threshold, 1e-9);
    }

    #[test]
    fn full_rank_reconstructs_training_data() {
        let data = vec![
            vec![1.0, 5.0, -2.0],
            vec![0.5, 2.0, 7.0],
            vec![3.0, -1.0, 0.0],
            vec![2.0, 2.0, 2.0],
        ];
        let m = fit_pca(&data, ComponentRule::Fixed(3), 3.0, 1e-9).unwrap();
        for v in &data {
            assert!(m.reconstruction_error(v).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = fit_pca(&line_data(), ComponentRule::Fixed(1), 3.0, 1e-9).unwrap();
        assert!(matches!(
            m.reconstruction_error(&[1.0]),
            Err(PcaError::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn too_few_vectors() {
        assert_eq!(
            fit_pca(&[vec![1.0]], ComponentRule::Fixed(1), 3.0, 1e-9),
            Err(PcaError::InsufficientData(1))
        );
    }
}
