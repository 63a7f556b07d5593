//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthogonal projection onto an `l`-dimensional subspace of ℝⁿ.
///
/// Stored as an `l × n` matrix `P` with orthonormal rows; the projector on ℝⁿ
/// is `PᵀP` and coordinates in the subspace are `P x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    basis: DMatrix<f64>,
}

impl Projection {
    /// Projection onto the span of the given coordinate axes (0-based).
    pub fn coordinates(n: usize, axes: &[usize]) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidArgument("projection needs at least one axis".into()));
        }
        let mut basis = DMatrix::zeros(axes.len(), n);
        for (row, &axis) in axes.iter().enumerate() {
            if axis >= n {
                return Err(Error::InvalidArgument(format!(
                    "projection axis {axis} out of range for dimension {n}"
                )));
            }
            if axes[..row].contains(&axis) {
                return Err(Error::InvalidArgument(format!("projection axis {axis} repeated")));
            }
            basis[(row, axis)] = 1.0;
        }
        Ok(Self { basis })
    }

    /// Projection with the given orthonormal basis rows. Rejects bases that
    /// are not orthonormal to 1e-12.
    pub fn from_basis(basis: DMatrix<f64>) -> Result<Self> {
        let l = basis.nrows();
        if l == 0 || l > basis.ncols() {
            return Err(Error::InvalidArgument(format!(
                "projection basis must have 1..=n rows, got {l} for n = {}",
                basis.ncols()
            )));
        }
        let gram = &basis * basis.transpose();
        let err = (gram - DMatrix::identity(l, l)).amax();
        if err > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "projection basis rows are not orthonormal (deviation {err:.3e})"
            )));
        }
        Ok(Self { basis })
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Coordinates of `Π x` in the subspace basis.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.basis * x
    }

    pub fn apply_slice(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for r in 0..self.dim() {
            out[r] = (0..x.len()).map(|c| self.basis[(r, c)] * x[c]).sum();
        }
        out
    }

    /// The `n × n` orthogonal projector `PᵀP`.
    pub fn projector(&self) -> DMatrix<f64> {
        self.basis.transpose() * &self.basis
    }
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = symmetrize(m);
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Numerical rank of the matrix whose columns are `cols`, with singular values
/// below `rel_tol × σ_max` treated as zero. Returns `(rank, σ_max)`.
pub fn numerical_rank(cols: &[DVector<f64>], dim: usize, rel_tol: f64) -> (usize, f64) {
    if cols.is_empty() {
        return (0, 0.0);
    }
    let m = DMatrix::from_columns(cols);
    debug_assert_eq!(m.nrows(), dim);
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return (0, 0.0);
    }
    (sv.iter().filter(|&&s| s > rel_tol * smax).count(), smax)
}

pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Deterministic, roughly uniform points on the unit sphere `S^{n-1}`.
///
/// Equally spaced angles for n = 2, a Fibonacci lattice for n = 3 and
/// normalised Halton–Box–Muller points above that.
pub fn sphere_points(n: usize, count: usize) -> Vec<DVector<f64>> {
    match n {
        0 => Vec::new(),
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..count)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / count as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let a = golden * k as f64;
                    DVector::from_vec(vec![rho * a.cos(), rho * a.sin(), z])
                })
                .collect()
        }
        _ => {
            let primes = first_primes(2 * n);
            (1..=count)
                .filter_map(|k| {
                    let mut v = DVector::zeros(n);
                    for c in 0..n {
                        let u1 = radical_inverse(k, primes[2 * c]).max(1e-12);
                        let u2 = radical_inverse(k, primes[2 * c + 1]);
                        v[c] = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                    }
                    let norm = v.norm();
                    (norm > 1e-12).then(|| v / norm)
                })
                .collect()
        }
    }
}

fn radical_inverse(mut k: usize, base: usize) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while k > 0 {
        out += (k % base) as f64 * inv;
        k /= base;
        inv /= base as f64;
    }
    out
}

fn first_primes(count: usize) -> Vec<usize> {
    let mut primes = Vec::with_capacity(count);
    let mut cand = 2;
    while primes.len() < count {
        if primes.iter().all(|p| cand % p != 0) {
            primes.push(cand);
        }
        cand += 1;
    }
    primes
}

/// Uniformly distributed unit vector.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Uniformly distributed point in the open ball of radius `r` around `center`.
pub fn random_in_ball<R: Rng + ?Sized>(rng: &mut R, center: &DVector<f64>, r: f64) -> DVector<f64> {
    let n = center.len();
    let dir = random_unit(rng, n);
    let u: f64 = rng.random();
    center + dir * (r * u.powf(1.0 / n as f64))
}

/// Pairwise (cascade) summation; the reduction order depends only on the
/// length of the input.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinate_projection_is_orthogonal() {
        let p = Projection::coordinates(3, &[0, 2]).unwrap();
        let pi = p.projector();
        assert!((&pi * &pi - &pi).amax() < 1e-15);
        assert!((&pi - pi.transpose()).amax() < 1e-15);
        assert_eq!(p.apply_slice(&[1.0, 2.0, 3.0]).as_slice(), &[1.0, 3.0]);
    }

    #[test]
    fn rejects_bad_projections() {
        assert!(Projection::coordinates(2, &[2]).is_err());
        assert!(Projection::coordinates(2, &[1, 1]).is_err());
        let skew = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(Projection::from_basis(skew).is_err());
    }

    #[test]
    fn sphere_points_are_unit() {
        for n in 1..6 {
            let pts = sphere_points(n, 300);
            assert!(!pts.is_empty());
            for p in pts {
                assert!((p.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rank_of_dependent_columns() {
        let a = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let b = DVector::from_vec(vec![2.0, 0.0, 0.0]);
        let c = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        assert_eq!(numerical_rank(&[a, b, c], 3, 1e-9).0, 2);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|k| k as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }
}
