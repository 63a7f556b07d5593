//! Small-noise simulation by Wong–Zakai integration, kernel density
//! estimates of heat kernels, rejection conditioning on the endpoint, and
//! the large-deviation comparison tables.
//!
//! Every path `i` draws its Brownian increments from its own ChaCha8 stream
//! (`seed`, stream `i`), so statistics are bit-identical for any worker
//! count. The same streams are reused across noise levels.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{pairwise_sum, Projection};
use crate::ratefn::{EndpointConstraint, RateResult};
use crate::roughpath::{besov_homogeneous_norm, BesovParams, RoughPath, RoughPathError};
use crate::vectorfields::VectorFieldSystem;

/// Endpoints with a coordinate beyond this magnitude count as blow-ups.
pub const BLOWUP_THRESHOLD: f64 = 1e6;
/// Smallest sample accepted by the density estimator.
pub const MIN_SAMPLES: usize = 1000;
/// Number of contiguous batches behind every standard error.
pub const BATCHES: usize = 10;
/// Conditioning radii are doubled until this many paths are accepted.
pub const MIN_ACCEPTED: usize = 50;
/// Upper bound on radius doublings.
const MAX_WIDENINGS: u32 = 30;

#[derive(Debug, Error)]
pub enum MonteCarloError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("sample spread is degenerate (covariance is not positive definite)")]
    DegenerateSpread,
    #[error("no path accepted within radius {delta}")]
    NoAcceptance { delta: f64 },
    #[error("path blew up at step {step}")]
    BlowUp { step: usize },
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    RoughPath(#[from] RoughPathError),
}

/// Kernel bandwidth rule. All rules use a Gaussian kernel with bandwidth
/// matrix `H`, i.e. `K_H(y) = (2π)^{-l/2} |det H|^{-1} exp(-½|H⁻¹y|²)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Bandwidth {
    /// `H = n^{-1/(l+4)} Σ̂^{1/2}` with the Cholesky factor of the full
    /// sample covariance. Handles strongly correlated coordinates.
    #[default]
    Scott,
    /// Product kernel, `h_j = n^{-1/(l+4)} ŝ_j` per coordinate.
    Silverman,
    /// `H = factor · Σ̂^{1/2}` with a fixed factor.
    Whitened { factor: f64 },
}

fn default_ball_norm_radius() -> f64 {
    2.0
}

fn default_max_ball_paths() -> usize {
    2000
}

fn default_substeps() -> usize {
    1
}

/// Simulation parameters shared by every stochastic entry point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub epsilons: Vec<f64>,
    pub n_paths: usize,
    /// Dyadic level k: `2^k` Brownian increments on `[0, 1]`.
    pub level: u32,
    pub seed: u64,
    #[serde(default)]
    pub bandwidth: Bandwidth,
    /// Conditioning radius δ; `None` means `0.1 ε`.
    #[serde(default)]
    pub ball_radius: Option<f64>,
    /// Radius R of the translated Besov ball used for ball weights.
    #[serde(default = "default_ball_norm_radius")]
    pub ball_norm_radius: f64,
    #[serde(default = "default_max_ball_paths")]
    pub max_ball_paths: usize,
    /// Integrator substeps per Brownian increment.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Worker count; `None` uses the global rayon pool. Not part of any
    /// result, so outputs do not depend on it.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl SimConfig {
    pub fn new(epsilons: Vec<f64>, n_paths: usize, level: u32, seed: u64) -> Self {
        Self {
            epsilons,
            n_paths,
            level,
            seed,
            bandwidth: Bandwidth::default(),
            ball_radius: None,
            ball_norm_radius: default_ball_norm_radius(),
            max_ball_paths: default_max_ball_paths(),
            substeps: default_substeps(),
            threads: None,
        }
    }

    pub fn steps(&self) -> usize {
        1usize << self.level
    }

    pub fn validate(&self) -> Result<(), MonteCarloError> {
        let bad = |m: &str| Err(MonteCarloError::InvalidConfig(m.to_string()));
        if self.n_paths == 0 {
            return bad("n_paths must be at least 1");
        }
        if self.level < 2 || self.level > 24 {
            return bad("level must lie in 2..=24 (at least 4 steps)");
        }
        if self.epsilons.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return bad("epsilons must be finite and non-negative");
        }
        if let Some(d) = self.ball_radius {
            if !(d > 0.0) {
                return bad("ball_radius must be positive");
            }
        }
        if !(self.ball_norm_radius > 0.0) {
            return bad("ball_norm_radius must be positive");
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1");
        }
        if let Bandwidth::Whitened { factor } = self.bandwidth {
            if !(factor > 0.0 && factor.is_finite()) {
                return bad("bandwidth factor must be positive");
            }
        }
        Ok(())
    }
}

/// Per-path random stream: `seed` keys the generator, the path index picks
/// the stream.
pub fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Sparse form of a system for the inner loop. Term sources `0..d` are the
/// control fields and source `d` is the drift.
struct Compiled {
    d: usize,
    terms: Vec<SparseTerm>,
}

struct SparseTerm {
    source: usize,
    powers: Vec<(usize, u32)>,
    coeffs: Vec<(usize, f64)>,
}

impl Compiled {
    fn new(sys: &VectorFieldSystem) -> Self {
        let d = sys.d();
        let mut terms = Vec::new();
        for (source, f) in sys.fields().iter().chain(std::iter::once(sys.drift())).enumerate() {
            for t in f.terms() {
                terms.push(SparseTerm {
                    source,
                    powers: t.exponents.iter().enumerate().filter(|(_, &e)| e > 0).map(|(i, &e)| (i, e)).collect(),
                    coeffs: t.coeffs.iter().enumerate().filter(|(_, &c)| c != 0.0).map(|(i, &c)| (i, c)).collect(),
                });
            }
        }
        Self { d, terms }
    }

    /// `out = Σ_s scale[s] V_s(x)`.
    #[inline]
    fn eval(&self, scale: &[f64], x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for t in &self.terms {
            let mut m = scale[t.source];
            if m == 0.0 {
                continue;
            }
            for &(i, e) in &t.powers {
                m *= match e {
                    1 => x[i],
                    2 => x[i] * x[i],
                    _ => x[i].powi(e as i32),
                };
            }
            for &(c, v) in &t.coeffs {
                out[c] += m * v;
            }
        }
    }
}

struct Integrator<'a> {
    sys: &'a Compiled,
    /// Control values followed by the drift scale ε².
    u: Vec<f64>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl<'a> Integrator<'a> {
    fn new(sys: &'a Compiled, n: usize, eps: f64) -> Self {
        let mut u = vec![0.0; sys.d + 1];
        u[sys.d] = eps * eps;
        Self { sys, u, k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]], tmp: vec![0.0; n] }
    }

    /// One RK4 step of length `h` for `ż = Σ uᵢVᵢ(z) + ε²V₀(z)`.
    fn step(&mut self, x: &mut [f64], h: f64) {
        let (sys, u) = (self.sys, &self.u);
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        sys.eval(u, x, k1);
        for (t, (a, b)) in tmp.iter_mut().zip(x.iter().zip(k1.iter())) {
            *t = a + 0.5 * h * b;
        }
        sys.eval(u, tmp, k2);
        for (t, (a, b)) in tmp.iter_mut().zip(x.iter().zip(k2.iter())) {
            *t = a + 0.5 * h * b;
        }
        sys.eval(u, tmp, k3);
        for (t, (a, b)) in tmp.iter_mut().zip(x.iter().zip(k3.iter())) {
            *t = a + h * b;
        }
        sys.eval(u, tmp, k4);
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// Samples recorded along one path at the dyadic times.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathRecord {
    /// Brownian samples `w(t_j)` (unscaled), `2^k + 1` rows of length d.
    pub driver: Vec<Vec<f64>>,
    /// States `X^ε(t_j)`, `2^k + 1` rows of length n.
    pub states: Vec<Vec<f64>>,
}

fn integrate<R: rand::Rng + ?Sized>(
    integ: &mut Integrator<'_>,
    x: &mut [f64],
    eps: f64,
    level: u32,
    substeps: usize,
    rng: &mut R,
    mut record: Option<&mut PathRecord>,
) -> Result<(), MonteCarloError> {
    let steps = 1usize << level;
    let dt = 1.0 / steps as f64;
    let sqdt = dt.sqrt();
    let d = integ.sys.d;
    let mut w = vec![0.0; d];
    if let Some(r) = record.as_deref_mut() {
        r.driver.push(w.clone());
        r.states.push(x.to_vec());
    }
    let h = dt / substeps as f64;
    for step in 0..steps {
        for (wi, ui) in w.iter_mut().zip(&mut integ.u[..d]) {
            let g: f64 = StandardNormal.sample(rng);
            let dw = sqdt * g;
            *wi += dw;
            *ui = eps * dw / dt;
        }
        for _ in 0..substeps {
            integ.step(x, h);
        }
        if x.iter().any(|v| !(v.abs() <= BLOWUP_THRESHOLD)) {
            return Err(MonteCarloError::BlowUp { step });
        }
        if let Some(r) = record.as_deref_mut() {
            r.driver.push(w.clone());
            r.states.push(x.to_vec());
        }
    }
    Ok(())
}

/// Endpoint `X^ε(1)` of `dX = ε Σ Vᵢ(X)∘dWᵢ + ε² V₀(X) dt` along the
/// dyadic polygonal Brownian path with `2^level` increments drawn from
/// `rng`. Each increment is integrated by one RK4 step.
pub fn simulate_endpoint<R: rand::Rng + ?Sized>(
    sys: &VectorFieldSystem,
    x0: &[f64],
    eps: f64,
    level: u32,
    rng: &mut R,
) -> Result<Vec<f64>, MonteCarloError> {
    check_dim(sys.n(), x0.len())?;
    let compiled = Compiled::new(sys);
    let mut integ = Integrator::new(&compiled, sys.n(), eps);
    let mut x = x0.to_vec();
    integrate(&mut integ, &mut x, eps, level, 1, rng, None)?;
    Ok(x)
}

/// Full path of the simulation with index `index`, reproducing exactly the
/// endpoint produced by [`simulate_endpoints`].
pub fn simulate_path(
    sys: &VectorFieldSystem,
    x0: &[f64],
    eps: f64,
    cfg: &SimConfig,
    index: usize,
) -> Result<PathRecord, MonteCarloError> {
    check_dim(sys.n(), x0.len())?;
    let compiled = Compiled::new(sys);
    let mut integ = Integrator::new(&compiled, sys.n(), eps);
    let mut x = x0.to_vec();
    let mut rec = PathRecord { driver: Vec::new(), states: Vec::new() };
    let mut rng = path_rng(cfg.seed, index);
    integrate(&mut integ, &mut x, eps, cfg.level, cfg.substeps, &mut rng, Some(&mut rec))?;
    Ok(rec)
}

fn check_dim(expected: usize, got: usize) -> Result<(), MonteCarloError> {
    if expected == got {
        Ok(())
    } else {
        Err(MonteCarloError::DimensionMismatch { expected, got })
    }
}

fn run_in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, MonteCarloError> {
    crate::parallel::run_in_pool(threads, f).map_err(|e| MonteCarloError::ThreadPool(e.to_string()))
}

/// Endpoints of `n_paths` simulations, stored row-major. Paths that blew up
/// are excluded and their indices recorded.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Endpoints {
    dim: usize,
    data: Vec<f64>,
    indices: Vec<usize>,
    blowups: Vec<usize>,
}

impl Endpoints {
    /// Wraps rows that all have length `dim`.
    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self, MonteCarloError> {
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            check_dim(dim, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self { dim, data, indices: (0..rows.len()).collect(), blowups: Vec::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Path index of row `i`.
    pub fn path_index(&self, i: usize) -> usize {
        self.indices[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Indices of paths rejected by the blow-up guard.
    pub fn blowups(&self) -> &[usize] {
        &self.blowups
    }

    /// Sample mean with batch standard errors, per coordinate.
    pub fn mean(&self) -> Vec<(f64, f64)> {
        (0..self.dim).map(|c| batch_mean(&self.rows().map(|r| r[c]).collect::<Vec<_>>())).collect()
    }

    /// Sample covariance entry `(a, b)` with its batch standard error.
    pub fn covariance(&self, a: usize, b: usize) -> (f64, f64) {
        let mean = self.mean();
        let (ma, mb) = (mean[a].0, mean[b].0);
        let prods: Vec<f64> = self.rows().map(|r| (r[a] - ma) * (r[b] - mb)).collect();
        let n = prods.len() as f64;
        let (m, se) = batch_mean(&prods);
        (m * n / (n - 1.0).max(1.0), se)
    }

    /// CSV with columns `path,x1,..,xn`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path");
        for c in 0..self.dim {
            s.push_str(&format!(",x{}", c + 1));
        }
        s.push('\n');
        for (i, r) in self.rows().enumerate() {
            s.push_str(&self.indices[i].to_string());
            for v in r {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Mean of `xs` and the standard error from [`BATCHES`] contiguous batches.
pub fn batch_mean(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n < BATCHES {
        return (mean, f64::NAN);
    }
    let means: Vec<f64> = batch_bounds(n)
        .map(|(a, b)| pairwise_sum(&xs[a..b]) / (b - a) as f64)
        .collect();
    (mean, batch_stderr(&means))
}

fn batch_bounds(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..BATCHES).map(move |b| (b * n / BATCHES, (b + 1) * n / BATCHES))
}

fn batch_stderr(means: &[f64]) -> f64 {
    let k = means.len() as f64;
    let m = pairwise_sum(means) / k;
    let var = pairwise_sum(&means.iter().map(|x| (x - m) * (x - m)).collect::<Vec<_>>()) / (k - 1.0);
    (var / k).sqrt()
}

/// Simulates `cfg.n_paths` endpoints at noise level `eps`.
pub fn simulate_endpoints(
    sys: &VectorFieldSystem,
    x0: &[f64],
    eps: f64,
    cfg: &SimConfig,
) -> Result<Endpoints, MonteCarloError> {
    cfg.validate()?;
    check_dim(sys.n(), x0.len())?;
    let n = sys.n();
    let mut data = vec![0.0; n * cfg.n_paths];
    let mut ok = vec![true; cfg.n_paths];
    let base = ChaCha8Rng::seed_from_u64(cfg.seed);
    let compiled = Compiled::new(sys);
    run_in_pool(cfg.threads, || {
        data.par_chunks_mut(n).zip(ok.par_iter_mut()).enumerate().for_each_init(
            || Integrator::new(&compiled, n, eps),
            |integ, (i, (out, flag))| {
                let mut rng = base.clone();
                rng.set_stream(i as u64);
                out.copy_from_slice(x0);
                *flag = integrate(integ, out, eps, cfg.level, cfg.substeps, &mut rng, None).is_ok();
            },
        )
    })?;
    let mut kept = Vec::with_capacity(data.len());
    let mut indices = Vec::with_capacity(cfg.n_paths);
    let mut blowups = Vec::new();
    for (i, good) in ok.iter().enumerate() {
        if *good {
            kept.extend_from_slice(&data[i * n..(i + 1) * n]);
            indices.push(i);
        } else {
            blowups.push(i);
        }
    }
    if !blowups.is_empty() {
        log::warn!("{} of {} paths blew up at eps = {eps}", blowups.len(), cfg.n_paths);
    }
    Ok(Endpoints { dim: n, data: kept, indices, blowups })
}

/// Density estimate at a target point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatKernelEstimate {
    pub epsilon: f64,
    pub target: Vec<f64>,
    pub p_hat: f64,
    pub stderr: f64,
    /// Kish effective sample size `(Σk)²/Σk²` of the kernel weights.
    pub n_effective: f64,
    pub n_samples: usize,
    /// Lower-triangular bandwidth matrix, by rows.
    pub bandwidth: Vec<Vec<f64>>,
}

/// Gaussian kernel density estimate of the (projected) endpoint density at
/// `target`, with a standard error from [`BATCHES`] contiguous batches that
/// share the full-sample bandwidth.
pub fn estimate_density(
    samples: &Endpoints,
    target: &[f64],
    projection: Option<&Projection>,
    bandwidth: Bandwidth,
    epsilon: f64,
) -> Result<HeatKernelEstimate, MonteCarloError> {
    let n = samples.len();
    if n < MIN_SAMPLES {
        return Err(MonteCarloError::TooFewSamples { got: n, need: MIN_SAMPLES });
    }
    let l = match projection {
        Some(p) => {
            check_dim(p.ambient_dim(), samples.dim())?;
            p.dim()
        }
        None => samples.dim(),
    };
    check_dim(l, target.len())?;
    let ys: Vec<f64> = match projection {
        Some(p) => samples.rows().flat_map(|r| p.apply_slice(r).iter().copied().collect::<Vec<_>>()).collect(),
        None => samples.data.clone(),
    };
    let h = bandwidth_matrix(&ys, l, n, bandwidth)?;
    let log_det: f64 = (0..l).map(|i| h[(i, i)].ln()).sum();
    let log_norm = -0.5 * l as f64 * (2.0 * std::f64::consts::PI).ln() - log_det;
    let mut u = vec![0.0; l];
    let weights: Vec<f64> = ys
        .chunks_exact(l)
        .map(|y| {
            // Forward substitution H u = y − target.
            for i in 0..l {
                let mut acc = y[i] - target[i];
                for j in 0..i {
                    acc -= h[(i, j)] * u[j];
                }
                u[i] = acc / h[(i, i)];
            }
            let q: f64 = u.iter().map(|v| v * v).sum();
            (log_norm - 0.5 * q).exp()
        })
        .collect();
    let p_hat = pairwise_sum(&weights) / n as f64;
    let means: Vec<f64> = batch_bounds(n).map(|(a, b)| pairwise_sum(&weights[a..b]) / (b - a) as f64).collect();
    let sq = pairwise_sum(&weights.iter().map(|w| w * w).collect::<Vec<_>>());
    let sum = p_hat * n as f64;
    let n_effective = if sq > 0.0 { sum * sum / sq } else { 0.0 };
    Ok(HeatKernelEstimate {
        epsilon,
        target: target.to_vec(),
        p_hat,
        stderr: batch_stderr(&means),
        n_effective,
        n_samples: n,
        bandwidth: (0..l).map(|i| (0..l).map(|j| h[(i, j)]).collect()).collect(),
    })
}

fn bandwidth_matrix(ys: &[f64], l: usize, n: usize, rule: Bandwidth) -> Result<DMatrix<f64>, MonteCarloError> {
    let nf = n as f64;
    let mut mean = DVector::zeros(l);
    for c in 0..l {
        mean[c] = pairwise_sum(&ys.iter().skip(c).step_by(l).copied().collect::<Vec<_>>()) / nf;
    }
    let mut cov = DMatrix::zeros(l, l);
    for a in 0..l {
        for b in 0..=a {
            let prods: Vec<f64> = ys.chunks_exact(l).map(|y| (y[a] - mean[a]) * (y[b] - mean[b])).collect();
            let v = pairwise_sum(&prods) / (nf - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let scott = nf.powf(-1.0 / (l as f64 + 4.0));
    let h = match rule {
        Bandwidth::Silverman => {
            let mut h = DMatrix::zeros(l, l);
            for c in 0..l {
                h[(c, c)] = scott * cov[(c, c)].sqrt();
            }
            h
        }
        Bandwidth::Scott | Bandwidth::Whitened { .. } => {
            let factor = match rule {
                Bandwidth::Whitened { factor } => factor,
                _ => scott,
            };
            let chol = cov.clone().cholesky().ok_or(MonteCarloError::DegenerateSpread)?;
            chol.l() * factor
        }
    };
    let scale = (0..l).map(|c| cov[(c, c)]).fold(0.0, f64::max).sqrt();
    if (0..l).any(|c| !(h[(c, c)] > 1e-12 * scale) || !h[(c, c)].is_finite()) || scale == 0.0 {
        return Err(MonteCarloError::DegenerateSpread);
    }
    Ok(h)
}

/// Closed-form statistics of the weak-Hörmander counterexample
/// `V₁ = ∂₁`, `V₀ = x¹∂₂` started at the origin.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CounterexampleValue {
    pub epsilon: f64,
    pub x2: f64,
    /// Endpoint covariance `[[ε², ε⁴/2], [ε⁴/2, ε⁶/3]]`.
    pub covariance: [[f64; 2]; 2],
    /// `p = √3 (πε⁴)⁻¹ exp(−6 (x²)² / ε⁶)`.
    pub p: f64,
    /// `ε² log p`, computed from the logarithm directly.
    pub eps2_log_p: f64,
}

/// Heat kernel of the counterexample at `(0, x²)`.
///
/// `X¹ = εW₁` and `X² = ε³ ∫₀¹ W_t dt` form a centred Gaussian with the
/// covariance above, whose inverse has `(2,2)` entry `12/ε⁶`, hence the
/// exponent `−6 (x²)²/ε⁶`.
pub fn counterexample_exact(eps: f64, x2: f64) -> Result<CounterexampleValue, MonteCarloError> {
    if !(eps > 0.0 && eps.is_finite()) || !x2.is_finite() {
        return Err(MonteCarloError::InvalidConfig("counterexample needs eps > 0 and finite x2".into()));
    }
    let e2 = eps * eps;
    let log_p = (3f64.sqrt() / std::f64::consts::PI).ln() - 4.0 * eps.ln() - 6.0 * x2 * x2 / (e2 * e2 * e2);
    Ok(CounterexampleValue {
        epsilon: eps,
        x2,
        covariance: [[e2, e2 * e2 / 2.0], [e2 * e2 / 2.0, e2 * e2 * e2 / 3.0]],
        p: log_p.exp(),
        eps2_log_p: e2 * log_p,
    })
}

/// Counterexample density at an arbitrary point `(x¹, x²)`.
pub fn counterexample_density(eps: f64, x: [f64; 2]) -> Result<f64, MonteCarloError> {
    let v = counterexample_exact(eps, 0.0)?;
    let c = v.covariance;
    let det = c[0][0] * c[1][1] - c[0][1] * c[0][1];
    let q = (c[1][1] * x[0] * x[0] - 2.0 * c[0][1] * x[0] * x[1] + c[0][0] * x[1] * x[1]) / det;
    Ok((-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt()))
}

/// One path accepted by the endpoint condition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionedPath {
    pub index: usize,
    pub record: PathRecord,
    /// `|P X^ε(1) − a|`.
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionedSample {
    pub epsilon: f64,
    pub delta: f64,
    pub n_paths: usize,
    pub blowups: usize,
    pub acceptance_rate: f64,
    pub accepted: Vec<ConditionedPath>,
}

fn residual_norms(samples: &Endpoints, constraint: &EndpointConstraint) -> Vec<f64> {
    samples
        .rows()
        .map(|r| constraint.residual(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Rejection sampler for the pinned measure: simulates `cfg.n_paths` paths
/// and keeps those whose (projected) endpoint lies within `delta` of the
/// target. Accepted paths are re-simulated from their streams to record
/// them in full.
pub fn conditioned_paths(
    sys: &VectorFieldSystem,
    constraint: &EndpointConstraint,
    eps: f64,
    delta: f64,
    cfg: &SimConfig,
) -> Result<ConditionedSample, MonteCarloError> {
    if !(delta > 0.0) {
        return Err(MonteCarloError::InvalidConfig("conditioning radius must be positive".into()));
    }
    let x0 = &constraint.start;
    let ends = simulate_endpoints(sys, x0, eps, cfg)?;
    let dist = residual_norms(&ends, constraint);
    let chosen: Vec<(usize, f64)> = (0..ends.len())
        .filter(|&i| dist[i] <= delta)
        .map(|i| (ends.path_index(i), dist[i]))
        .collect();
    if chosen.is_empty() {
        return Err(MonteCarloError::NoAcceptance { delta });
    }
    let accepted = record_paths(sys, x0, eps, cfg, &chosen)?;
    Ok(ConditionedSample {
        epsilon: eps,
        delta,
        n_paths: cfg.n_paths,
        blowups: ends.blowups().len(),
        acceptance_rate: accepted.len() as f64 / cfg.n_paths as f64,
        accepted,
    })
}

fn record_paths(
    sys: &VectorFieldSystem,
    x0: &[f64],
    eps: f64,
    cfg: &SimConfig,
    chosen: &[(usize, f64)],
) -> Result<Vec<ConditionedPath>, MonteCarloError> {
    run_in_pool(cfg.threads, || {
        chosen
            .par_iter()
            .map(|&(index, distance)| {
                Ok(ConditionedPath { index, record: simulate_path(sys, x0, eps, cfg, index)?, distance })
            })
            .collect::<Result<Vec<_>, MonteCarloError>>()
    })?
}

/// Weight of the translated Besov ball around the minimiser.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BallWeight {
    /// Conditioning radius actually used.
    pub delta: f64,
    /// Number of times δ was doubled to reach [`MIN_ACCEPTED`] paths.
    pub widened: u32,
    pub accepted: usize,
    /// Accepted paths whose lift was examined (capped by `max_ball_paths`).
    pub examined: usize,
    pub inside: usize,
    /// Fraction of examined paths with `‖τ_{−h*}(ε L(w))‖ < R`.
    pub fraction: f64,
    /// `ε² log(fraction)`, the normalised (pinned) ball weight.
    pub eps2_log_fraction: f64,
    /// `ε² log(p̂ · fraction)`, the unnormalised weight.
    pub eps2_log_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LdpRow {
    pub epsilon: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub eps2_log_p: f64,
    pub minus_rate: f64,
    /// `|ε² log p̂ + energy|`.
    pub gap: f64,
    pub n_samples: usize,
    pub n_effective: f64,
    pub blowups: usize,
    pub ball: Option<BallWeight>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LdpReport {
    pub energy: f64,
    pub seed: u64,
    pub rows: Vec<LdpRow>,
}

impl LdpReport {
    /// CSV with columns `epsilon,p_hat,stderr,eps2_log_p,minus_rate,gap`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,p_hat,stderr,eps2_log_p,minus_rate,gap\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:e},{:e},{},{},{}\n",
                r.epsilon, r.p_hat, r.stderr, r.eps2_log_p, r.minus_rate, r.gap
            ));
        }
        s
    }
}

/// Compares `ε² log p̂^ε` at the constraint target with `−energy` of the
/// minimiser for every `ε` in the configuration. When `ball_weights` is
/// set, also estimates the weight of the Besov ball of radius
/// `cfg.ball_norm_radius` around the Young translate by `h*`.
pub fn ldp_verify(
    sys: &VectorFieldSystem,
    constraint: &EndpointConstraint,
    cfg: &SimConfig,
    rate: &RateResult,
    ball_weights: bool,
) -> Result<LdpReport, MonteCarloError> {
    cfg.validate()?;
    let besov = BesovParams::default();
    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    for &eps in &cfg.epsilons {
        let ends = simulate_endpoints(sys, &constraint.start, eps, cfg)?;
        let est = estimate_density(&ends, constraint.target(), constraint.projection(), cfg.bandwidth, eps)?;
        let eps2_log_p = eps * eps * est.p_hat.ln();
        let ball = if ball_weights {
            Some(ball_weight(sys, constraint, cfg, rate, &ends, eps, est.p_hat, &besov)?)
        } else {
            None
        };
        rows.push(LdpRow {
            epsilon: eps,
            p_hat: est.p_hat,
            stderr: est.stderr,
            eps2_log_p,
            minus_rate: -rate.energy,
            gap: (eps2_log_p + rate.energy).abs(),
            n_samples: est.n_samples,
            n_effective: est.n_effective,
            blowups: ends.blowups().len(),
            ball,
        });
    }
    Ok(LdpReport { energy: rate.energy, seed: cfg.seed, rows })
}

#[allow(clippy::too_many_arguments)]
fn ball_weight(
    sys: &VectorFieldSystem,
    constraint: &EndpointConstraint,
    cfg: &SimConfig,
    rate: &RateResult,
    ends: &Endpoints,
    eps: f64,
    p_hat: f64,
    besov: &BesovParams,
) -> Result<BallWeight, MonteCarloError> {
    let dist = residual_norms(ends, constraint);
    let mut delta = cfg.ball_radius.unwrap_or(0.1 * eps);
    let mut widened = 0;
    let count = |delta: f64| dist.iter().filter(|&&r| r <= delta).count();
    while count(delta) < MIN_ACCEPTED.min(ends.len()) && widened < MAX_WIDENINGS {
        delta *= 2.0;
        widened += 1;
    }
    if widened > 0 {
        log::warn!("eps = {eps}: widened the conditioning radius {widened} times to {delta}");
    }
    let chosen: Vec<(usize, f64)> = (0..ends.len())
        .filter(|&i| dist[i] <= delta)
        .map(|i| (ends.path_index(i), dist[i]))
        .collect();
    if chosen.is_empty() {
        return Err(MonteCarloError::NoAcceptance { delta });
    }
    let examined = &chosen[..chosen.len().min(cfg.max_ball_paths.max(1))];
    let paths = record_paths(sys, &constraint.start, eps, cfg, examined)?;
    let steps = cfg.steps();
    let shift: Vec<Vec<f64>> = (0..=steps)
        .map(|j| rate.h_star.value_at(j as f64 / steps as f64).iter().map(|v| -v).collect())
        .collect();
    let inside = run_in_pool(cfg.threads, || {
        paths
            .par_iter()
            .map(|p| -> Result<bool, MonteCarloError> {
                let lift = RoughPath::lift_piecewise_linear(&p.record.driver, 1.0)?.dilate(eps);
                let centred = lift.young_translate_samples(&shift)?;
                Ok(besov_homogeneous_norm(&centred, besov) < cfg.ball_norm_radius)
            })
            .collect::<Result<Vec<bool>, MonteCarloError>>()
    })??
    .into_iter()
    .filter(|&b| b)
    .count();
    let fraction = inside as f64 / paths.len() as f64;
    Ok(BallWeight {
        delta,
        widened,
        accepted: chosen.len(),
        examined: paths.len(),
        inside,
        fraction,
        eps2_log_fraction: eps * eps * fraction.ln(),
        eps2_log_weight: eps * eps * (p_hat * fraction).ln(),
    })
}
