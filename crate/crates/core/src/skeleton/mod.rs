//! The skeleton ODE `dφ = Σᵢ Vᵢ(φ) dhⁱ` driven by Cameron–Martin paths,
//! its Jacobian `J` and inverse Jacobian `K`, the Fréchet derivative of the
//! endpoint map and the deterministic Malliavin covariance.

mod cmpath;
mod solver;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

pub use cmpath::CMPath;
pub use solver::{
    endpoint, frechet_derivative, qw_path, rk4_generic, rk4_state, solve_skeleton, solve_skeleton_from,
    SkeletonTrajectory, StateScratch, DEFAULT_SUBSTEPS,
};

use crate::linalg::{symmetric_eigenvalues, symmetrize, Projection};
use crate::vectorfields::VectorFieldSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("invalid Cameron–Martin path: {0}")]
    InvalidPath(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("skeleton solution left the finite range at t = {time}")]
    BlowUp { time: f64 },
}

/// Deterministic Malliavin covariance of the endpoint.
#[derive(Clone, Debug, Serialize)]
pub struct CovarianceReport {
    /// `C(h) = Σᵢ ∫ Q^{Vᵢ}_s (Q^{Vᵢ}_s)ᵀ ds`.
    #[serde(serialize_with = "ser_matrix")]
    pub c: DMatrix<f64>,
    /// `σ = J_T C J_Tᵀ`.
    #[serde(serialize_with = "ser_matrix")]
    pub sigma: DMatrix<f64>,
    /// Eigenvalues of `σ`, ascending.
    pub eigenvalues: Vec<f64>,
    pub min_eig: f64,
    /// `P σ Pᵀ` on the subspace when a projection was supplied.
    #[serde(serialize_with = "ser_opt_matrix")]
    pub sigma_projected: Option<DMatrix<f64>>,
    pub projected_min_eig: Option<f64>,
}

impl CovarianceReport {
    pub fn trace(&self) -> f64 {
        self.sigma.trace()
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    rows(m).serialize(s)
}

fn ser_opt_matrix<S: serde::Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
    m.as_ref().map(rows).serialize(s)
}

/// Covariance of `φ_T` by trapezoidal quadrature on the trajectory grid.
pub fn covariance(
    sys: &VectorFieldSystem,
    traj: &SkeletonTrajectory,
    projection: Option<&Projection>,
) -> Result<CovarianceReport, SkeletonError> {
    let n = sys.n();
    if let Some(p) = projection {
        if p.ambient_dim() != n {
            return Err(SkeletonError::DimensionMismatch { expected: n, got: p.ambient_dim() });
        }
    }
    let qs: Vec<_> = sys.fields().iter().map(|f| qw_path(traj, f)).collect();
    let times = traj.times();
    let mut c = DMatrix::zeros(n, n);
    for step in 0..times.len().saturating_sub(1) {
        let w = 0.5 * (times[step + 1] - times[step]);
        for q in &qs {
            c += (&q[step] * q[step].transpose() + &q[step + 1] * q[step + 1].transpose()) * w;
        }
    }
    let c = symmetrize(&c);
    let j = traj.final_jac();
    let sigma = symmetrize(&(j * &c * j.transpose()));
    let eigenvalues = symmetric_eigenvalues(&sigma);
    let min_eig = eigenvalues[0];
    let (sigma_projected, projected_min_eig) = match projection {
        Some(p) => {
            let b = p.basis();
            let sp = symmetrize(&(b * &sigma * b.transpose()));
            let e = symmetric_eigenvalues(&sp)[0];
            (Some(sp), Some(e))
        }
        None => (None, None),
    };
    Ok(CovarianceReport { c, sigma, eigenvalues, min_eig, sigma_projected, projected_min_eig })
}
