//! Minimal-energy controls for endpoint and projected-endpoint constraints,
//! and the rate functions built from them.
//!
//! Controls are piecewise constant on `K` uniform segments and the variables
//! are `z_k = u_k √Δt`, so the energy is `½|z|²`. Each start runs an
//! augmented-Lagrangian loop with L-BFGS inner solves on exact discrete
//! gradients, followed by a minimum-norm Gauss–Newton projection onto the
//! constraint.

mod discrete;
mod lbfgs;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use discrete::{DiscreteProblem, Penalty, States, Tracking};
pub use lbfgs::{minimize as lbfgs_minimize, LbfgsOptions, LbfgsOutcome};

use crate::excitation::{build_ktau, perturb};
use crate::linalg::Projection;
use crate::skeleton::{covariance, solve_skeleton, CMPath, SkeletonError};
use crate::vectorfields::{estimate_constants, hormander_degree, FieldError, HormanderOptions, VectorFieldSystem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Target set: `{h : φ(1,x,h) = x′}` or `{h : P φ(1,x,h) = a}`.
#[derive(Clone, Debug, Serialize)]
pub struct EndpointConstraint {
    pub start: Vec<f64>,
    pub kind: ConstraintKind,
}

#[derive(Clone, Debug, Serialize)]
pub enum ConstraintKind {
    Point { target: Vec<f64> },
    Projected { projection: Projection, target: Vec<f64> },
}

impl EndpointConstraint {
    pub fn point(start: Vec<f64>, target: Vec<f64>) -> Result<Self, RateError> {
        if start.len() != target.len() {
            return Err(RateError::InvalidConstraint(format!(
                "start has dimension {}, target {}",
                start.len(),
                target.len()
            )));
        }
        Ok(Self { start, kind: ConstraintKind::Point { target } })
    }

    pub fn projected(start: Vec<f64>, projection: Projection, target: Vec<f64>) -> Result<Self, RateError> {
        if projection.ambient_dim() != start.len() {
            return Err(RateError::InvalidConstraint(format!(
                "projection acts on dimension {}, start has {}",
                projection.ambient_dim(),
                start.len()
            )));
        }
        if projection.dim() != target.len() {
            return Err(RateError::InvalidConstraint(format!(
                "projection has rank {}, target has dimension {}",
                projection.dim(),
                target.len()
            )));
        }
        Ok(Self { start, kind: ConstraintKind::Projected { projection, target } })
    }

    pub fn projection(&self) -> Option<&Projection> {
        match &self.kind {
            ConstraintKind::Point { .. } => None,
            ConstraintKind::Projected { projection, .. } => Some(projection),
        }
    }

    pub fn target(&self) -> &[f64] {
        match &self.kind {
            ConstraintKind::Point { target } | ConstraintKind::Projected { target, .. } => target,
        }
    }

    /// `(P row-major, m)`; the identity for point constraints.
    fn matrix(&self) -> (Vec<f64>, usize) {
        let n = self.start.len();
        match &self.kind {
            ConstraintKind::Point { .. } => {
                let mut p = vec![0.0; n * n];
                for i in 0..n {
                    p[i * n + i] = 1.0;
                }
                (p, n)
            }
            ConstraintKind::Projected { projection, .. } => {
                let b = projection.basis();
                let m = b.nrows();
                let mut p = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        p[r * n + c] = b[(r, c)];
                    }
                }
                (p, m)
            }
        }
    }

    /// `P φ − a` (or `φ − x′`).
    pub fn residual(&self, end: &[f64]) -> Vec<f64> {
        let n = self.start.len();
        let (p, m) = self.matrix();
        let t = self.target();
        (0..m).map(|r| (0..n).map(|c| p[r * n + c] * end[c]).sum::<f64>() - t[r]).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OptimizerOptions {
    pub segments: usize,
    /// RK4 steps per control segment.
    pub substeps: usize,
    pub random_restarts: usize,
    pub excitation_restarts: usize,
    pub seed: u64,
    /// Standard deviation of the random initial slopes.
    pub init_scale: f64,
    pub rho0: f64,
    pub rho_factor: f64,
    pub max_outer: usize,
    pub grad_tol: f64,
    pub max_inner_iters: usize,
    pub lbfgs_memory: usize,
    pub endpoint_tol: f64,
    /// Worker cap; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            segments: 64,
            substeps: 2,
            random_restarts: 16,
            excitation_restarts: 4,
            seed: 0,
            init_scale: 1.0,
            rho0: 10.0,
            rho_factor: 10.0,
            max_outer: 6,
            grad_tol: 1e-10,
            max_inner_iters: 400,
            lbfgs_memory: 10,
            endpoint_tol: 1e-8,
            threads: None,
        }
    }
}

impl OptimizerOptions {
    fn validate(&self) -> Result<(), RateError> {
        if self.segments == 0 || self.substeps == 0 {
            return Err(RateError::InvalidOption("segments and substeps must be positive".into()));
        }
        if self.random_restarts + self.excitation_restarts == 0 {
            return Err(RateError::InvalidOption("at least one restart is required".into()));
        }
        if !(self.endpoint_tol > 0.0) {
            return Err(RateError::InvalidOption("endpoint_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Random,
    Excitation,
}

#[derive(Clone, Debug, Serialize)]
pub struct Candidate {
    pub index: usize,
    pub start: StartKind,
    pub energy: f64,
    pub residual: f64,
    pub tracking_error: f64,
    pub converged: bool,
    #[serde(skip)]
    pub z: Vec<f64>,
}

/// Best control found and its diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct RateResult {
    pub h_star: CMPath,
    /// `½‖h*‖²`.
    pub energy: f64,
    /// Endpoint residual norm.
    pub residual: f64,
    /// Smallest eigenvalue of `σ_{φ₁}(h*)`.
    pub min_eig: f64,
    /// Smallest eigenvalue of the projected covariance, for projected targets.
    pub projected_min_eig: Option<f64>,
    pub restarts_used: usize,
    pub restart_index: usize,
    pub converged: bool,
    pub candidates: Vec<Candidate>,
}

fn run_in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, RateError> {
    crate::parallel::run_in_pool(threads, f).map_err(|e| RateError::ThreadPool(e.to_string()))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One start: augmented-Lagrangian outer loop, then the feasibility
/// projection.
fn solve_from(prob: &DiscreteProblem, z0: Vec<f64>, opts: &OptimizerOptions, tracking0: f64) -> (Vec<f64>, f64, f64) {
    let lopts = LbfgsOptions { memory: opts.lbfgs_memory, max_iters: opts.max_inner_iters, grad_tol: opts.grad_tol };
    let mut z = z0;
    project(prob, &mut z, 1e-3 * opts.endpoint_tol);
    let mu = multiplier_estimate(prob, &z).unwrap_or_else(|| vec![0.0; prob.m]);
    let mut pen = Penalty { mu, rho: opts.rho0, tracking_weight: tracking0 };
    for _ in 0..opts.max_outer {
        let out = lbfgs::minimize(|x, g| prob.lagrangian(x, &pen, g), z.clone(), lopts);
        if out.x.iter().all(|v| v.is_finite()) {
            z = out.x;
        }
        let states = prob.forward(&z);
        let c = prob.residual(states.last().expect("nonempty"));
        if !c.iter().all(|v| v.is_finite()) {
            break;
        }
        for (m, ci) in pen.mu.iter_mut().zip(&c) {
            *m += pen.rho * ci;
        }
        if norm(&c) <= 0.1 * opts.endpoint_tol {
            break;
        }
        pen.rho *= opts.rho_factor;
        pen.tracking_weight *= opts.rho_factor;
    }
    project(prob, &mut z, 1e-3 * opts.endpoint_tol);
    let states = prob.forward(&z);
    let residual = norm(&prob.residual(states.last().expect("nonempty")));
    (z, if residual.is_finite() { residual } else { f64::INFINITY }, prob.tracking_error(&states))
}

/// First-order multiplier `μ = −(JJᵀ)⁻¹Jz` (least-squares fit of
/// `z + Jᵀμ = 0`); `None` when `JJᵀ` is singular or the result is not finite.
fn multiplier_estimate(prob: &DiscreteProblem, z: &[f64]) -> Option<Vec<f64>> {
    let states = prob.forward(z);
    let jac = prob.constraint_jacobian(z, &states);
    let j = DMatrix::from_row_slice(prob.m, prob.dim(), &jac);
    let g = &j * j.transpose();
    let rhs = -(&j * DVector::from_column_slice(z));
    let mu = g.lu().solve(&rhs)?;
    mu.iter().all(|v| v.is_finite()).then(|| mu.iter().copied().collect())
}

/// Minimum-norm Gauss–Newton steps `z ← z − Jᵀ(JJᵀ)⁻¹c`; keeps the best
/// iterate.
fn project(prob: &DiscreteProblem, z: &mut Vec<f64>, tol: f64) {
    let dim = prob.dim();
    let mut states = prob.forward(z);
    let mut c = prob.residual(states.last().expect("nonempty"));
    let mut best = norm(&c);
    if !best.is_finite() {
        return;
    }
    for _ in 0..8 {
        if best <= tol {
            break;
        }
        let jac = prob.constraint_jacobian(z, &states);
        let j = DMatrix::from_row_slice(prob.m, dim, &jac);
        let g = &j * j.transpose();
        let Some(y) = g.lu().solve(&DVector::from_column_slice(&c)) else { break };
        let step = j.transpose() * y;
        let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a - b).collect();
        let trial_states = prob.forward(&trial);
        let trial_c = prob.residual(trial_states.last().expect("nonempty"));
        let r = norm(&trial_c);
        if !(r < best) {
            break;
        }
        *z = trial;
        states = trial_states;
        c = trial_c;
        best = r;
    }
}

fn random_start(dim: usize, dt: f64, opts: &OptimizerOptions, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index as u64);
    let s = opts.init_scale * dt.sqrt();
    (0..dim).map(|_| { let g: f64 = StandardNormal.sample(&mut rng); s * g }).collect()
}

/// Scaled variables of `h` averaged onto the uniform grid.
fn resample(h: &CMPath, prob: &DiscreteProblem) -> Vec<f64> {
    let d = prob.sys.d();
    let dt = prob.dt();
    let mut z = Vec::with_capacity(prob.dim());
    let mut prev = vec![0.0; d];
    for k in 0..prob.segments {
        let next = h.value_at((k + 1) as f64 * dt);
        for i in 0..d {
            z.push((next[i] - prev[i]) / dt * dt.sqrt());
        }
        prev = next;
    }
    z
}

fn path_of(z: &[f64], prob: &DiscreteProblem) -> CMPath {
    let d = prob.sys.d();
    let u = prob.controls(z);
    CMPath::uniform(prob.horizon, u.chunks(d).map(<[f64]>::to_vec).collect()).expect("valid control")
}

/// Candidate order: converged before not, then lower energy (or residual),
/// then lower index.
fn better(a: &Candidate, b: &Candidate) -> bool {
    match (a.converged, b.converged) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.energy < b.energy || (a.energy == b.energy && a.index < b.index),
        (false, false) => a.residual < b.residual || (a.residual == b.residual && a.index < b.index),
    }
}

fn run_starts(
    prob: &DiscreteProblem,
    starts: Vec<(usize, StartKind, Vec<f64>)>,
    opts: &OptimizerOptions,
    tracking0: f64,
    tracking_tol: f64,
) -> Vec<Candidate> {
    starts
        .into_par_iter()
        .map(|(index, start, z0)| {
            let (z, residual, tracking_error) = solve_from(prob, z0, opts, tracking0);
            let energy = 0.5 * z.iter().map(|v| v * v).sum::<f64>();
            let converged = residual <= opts.endpoint_tol && tracking_error <= tracking_tol && energy.is_finite();
            Candidate { index, start, energy, residual, tracking_error, converged, z }
        })
        .collect()
}

/// Excitation seeds: `h^β` built from the excitation path at the start
/// point, prepended to the zero control and to the least infeasible
/// non-converged candidates.
fn excitation_starts(
    sys: &VectorFieldSystem,
    x0: &[f64],
    prob: &DiscreteProblem,
    candidates: &[Candidate],
    opts: &OptimizerOptions,
    first_index: usize,
) -> Vec<(usize, StartKind, Vec<f64>)> {
    if opts.excitation_restarts == 0 {
        return Vec::new();
    }
    let Ok(cert) = hormander_degree(sys, x0, HormanderOptions::default()).and_then(|c| estimate_constants(sys, &c))
    else {
        return Vec::new();
    };
    let Ok(c) = cert.constants() else { return Vec::new() };
    let tau = 0.02f64.min(c.horizon / (2.0 * cert.degree as f64)) * crate::excitation::TAU_SAFETY;
    let Ok((ktau, _)) = build_ktau(&cert, sys.d(), tau) else { return Vec::new() };
    let mut bases = vec![CMPath::zero(sys.d(), prob.horizon, prob.segments)];
    let mut failed: Vec<&Candidate> = candidates.iter().filter(|c| !c.converged).collect();
    failed.sort_by(|a, b| a.residual.total_cmp(&b.residual).then(a.index.cmp(&b.index)));
    bases.extend(failed.iter().map(|c| path_of(&c.z, prob)));
    bases
        .iter()
        .take(opts.excitation_restarts)
        .enumerate()
        .filter_map(|(k, h)| perturb(h, &ktau).ok().map(|hb| (first_index + k, StartKind::Excitation, resample(&hb, prob))))
        .collect()
}

fn finish(
    sys: &VectorFieldSystem,
    constraint: &EndpointConstraint,
    prob: &DiscreteProblem,
    candidates: Vec<Candidate>,
    opts: &OptimizerOptions,
) -> Result<RateResult, RateError> {
    let best = candidates
        .iter()
        .fold(None::<&Candidate>, |acc, c| match acc {
            Some(b) if !better(c, b) => Some(b),
            _ => Some(c),
        })
        .expect("at least one candidate");
    let main_sys_path = path_of(&best.z, prob);
    let traj = solve_skeleton(sys, &constraint.start, &main_sys_path, opts.substeps)?;
    let cov = covariance(sys, &traj, constraint.projection())?;
    Ok(RateResult {
        h_star: main_sys_path,
        energy: best.energy,
        residual: best.residual,
        min_eig: cov.min_eig,
        projected_min_eig: cov.projected_min_eig,
        restarts_used: candidates.len(),
        restart_index: best.index,
        converged: best.converged,
        candidates,
    })
}

fn endpoint_problem(
    sys: &VectorFieldSystem,
    constraint: &EndpointConstraint,
    opts: &OptimizerOptions,
) -> Result<DiscreteProblem, RateError> {
    let n = sys.n();
    if constraint.start.len() != n {
        return Err(RateError::InvalidConstraint(format!("start has dimension {}, system has {n}", constraint.start.len())));
    }
    let (p, m) = constraint.matrix();
    Ok(DiscreteProblem {
        sys: sys.clone(),
        x0: constraint.start.clone(),
        segments: opts.segments,
        substeps: opts.substeps,
        horizon: 1.0,
        p,
        m,
        n_main: n,
        target: constraint.target().to_vec(),
        tracking: None,
    })
}

/// `min ½‖h‖²_H` over controls meeting the endpoint constraint.
pub fn minimize_energy(
    sys: &VectorFieldSystem,
    constraint: &EndpointConstraint,
    opts: &OptimizerOptions,
) -> Result<RateResult, RateError> {
    opts.validate()?;
    let prob = endpoint_problem(sys, constraint, opts)?;
    run_in_pool(opts.threads, || {
        let starts: Vec<_> = (0..opts.random_restarts)
            .map(|i| (i, StartKind::Random, random_start(prob.dim(), prob.dt(), opts, i)))
            .collect();
        let mut candidates = run_starts(&prob, starts, opts, 0.0, f64::INFINITY);
        let seeds = excitation_starts(sys, &constraint.start, &prob, &candidates, opts, opts.random_restarts);
        candidates.extend(run_starts(&prob, seeds, opts, 0.0, f64::INFINITY));
        finish(sys, constraint, &prob, candidates, opts)
    })?
}

/// A rate value: finite energy or `∞` with the reason.
#[derive(Clone, Debug, Serialize)]
pub struct RateValue {
    #[serde(serialize_with = "ser_rate")]
    pub value: f64,
    pub reason: Option<String>,
    pub result: Option<RateResult>,
}

fn ser_rate<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

impl RateValue {
    fn infinite(reason: String, result: Option<RateResult>) -> Self {
        Self { value: f64::INFINITY, reason: Some(reason), result }
    }
}

/// `I₁`: the minimal energy, or `∞` when the Hörmander condition cannot be
/// verified at the start point or no start reaches the target.
pub fn rate_i1(
    sys: &VectorFieldSystem,
    constraint: &EndpointConstraint,
    opts: &OptimizerOptions,
    hormander: HormanderOptions,
) -> Result<RateValue, RateError> {
    if let Err(e) = hormander_degree(sys, &constraint.start, hormander) {
        return Ok(RateValue::infinite(e.to_string(), None));
    }
    let r = minimize_energy(sys, constraint, opts)?;
    if r.converged {
        Ok(RateValue { value: r.energy, reason: None, result: Some(r) })
    } else {
        Ok(RateValue::infinite(format!("no start converged (best residual {:e})", r.residual), Some(r)))
    }
}

/// `Î = I − min I`; infinite values stay infinite.
pub fn rate_hat(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    values.iter().map(|v| if v.is_finite() { v - min } else { f64::INFINITY }).collect()
}

/// A path `b` sampled at increasing times, linearly interpolated.
#[derive(Clone, Debug, Serialize)]
pub struct TargetPath {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl TargetPath {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, RateError> {
        if times.is_empty() || times.len() != values.len() || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(RateError::InvalidConstraint("target path needs increasing times, one value each".into()));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(RateError::InvalidConstraint("target path values differ in dimension".into()));
        }
        Ok(Self { times, values })
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.values[0].clone();
        }
        if k == self.times.len() {
            return self.values[k - 1].clone();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        self.values[k - 1].iter().zip(&self.values[k]).map(|(a, b)| a + w * (b - a)).collect()
    }
}

/// `I₂(b) = inf{½‖h‖² : h meets the constraint, ζ(·, z, h) = b}`, where `ζ`
/// solves `dζ = Σᵢ Aᵢ(ζ) dhⁱ` from `z`. The path condition is enforced by a
/// tracking penalty `w Σ_k Δt |ζ(t_k) − b(t_k)|²` whose weight grows with the
/// constraint penalty; the value is `∞` when `b(0) ≠ z` or the sup tracking
/// error at the segment ends stays above `tol`.
pub fn rate_i2(
    sys_v: &VectorFieldSystem,
    sys_a: &VectorFieldSystem,
    constraint: &EndpointConstraint,
    z: &[f64],
    b: &TargetPath,
    tol: f64,
    opts: &OptimizerOptions,
) -> Result<RateValue, RateError> {
    opts.validate()?;
    if z.len() != sys_a.n() || b.dim() != sys_a.n() {
        return Err(RateError::InvalidConstraint(format!(
            "path system has dimension {}, z has {}, b has {}",
            sys_a.n(),
            z.len(),
            b.dim()
        )));
    }
    if norm(&b.at(0.0).iter().zip(z).map(|(p, q)| p - q).collect::<Vec<_>>()) > tol {
        return Ok(RateValue::infinite("target path does not start at z".into(), None));
    }
    let base = endpoint_problem(sys_v, constraint, opts)?;
    let stacked = sys_v.stack(sys_a)?;
    let n = sys_v.n();
    let dt = base.dt();
    let values = (0..opts.segments).map(|k| b.at((k + 1) as f64 * dt)).collect();
    let mut x0 = constraint.start.clone();
    x0.extend_from_slice(z);
    let prob = DiscreteProblem { sys: stacked, x0, tracking: Some(Tracking { offset: n, values }), ..base };
    let tracking0 = opts.rho0;
    let candidates = run_in_pool(opts.threads, || {
        let starts: Vec<_> = (0..opts.random_restarts.max(1))
            .map(|i| (i, StartKind::Random, random_start(prob.dim(), prob.dt(), opts, i)))
            .collect();
        run_starts(&prob, starts, opts, tracking0, tol)
    })?;
    let best = candidates
        .iter()
        .fold(None::<&Candidate>, |acc, c| match acc {
            Some(b) if !better(c, b) => Some(b),
            _ => Some(c),
        })
        .expect("at least one start");
    let h_star = path_of(&best.z, &prob);
    let traj = solve_skeleton(sys_v, &constraint.start, &h_star, opts.substeps)?;
    let cov = covariance(sys_v, &traj, constraint.projection())?;
    let result = RateResult {
        h_star,
        energy: best.energy,
        residual: best.residual,
        min_eig: cov.min_eig,
        projected_min_eig: cov.projected_min_eig,
        restarts_used: candidates.len(),
        restart_index: best.index,
        converged: best.converged,
        candidates: candidates.clone(),
    };
    if best.converged {
        Ok(RateValue { value: best.energy, reason: None, result: Some(result) })
    } else {
        Ok(RateValue::infinite(
            format!("tracking error {:e} / endpoint residual {:e} above tolerance", best.tracking_error, best.residual),
            Some(result),
        ))
    }
}

/// `I₂′(b)` for the pinned diffusion: `A = V`, `z = x`, point constraint,
/// shifted by the minimal energy over the same constraint.
pub fn rate_i2_prime(
    sys: &VectorFieldSystem,
    constraint: &EndpointConstraint,
    b: &TargetPath,
    tol: f64,
    opts: &OptimizerOptions,
) -> Result<RateValue, RateError> {
    let mut v = rate_i2(sys, sys, constraint, &constraint.start.clone(), b, tol, opts)?;
    if v.value.is_finite() {
        let min = minimize_energy(sys, constraint, opts)?;
        if min.converged {
            v.value = (v.value - min.energy).max(0.0);
        } else {
            return Ok(RateValue::infinite("minimal energy not found".into(), v.result));
        }
    }
    Ok(v)
}
