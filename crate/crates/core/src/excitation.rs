//! Excitation controls: short pulses along single fields and their reversals,
//! concatenated so that the skeleton returns to its starting point while the
//! Malliavin covariance becomes non-degenerate.

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::Projection;
use crate::skeleton::{covariance, solve_skeleton, CMPath, CovarianceReport, SkeletonError, DEFAULT_SUBSTEPS};
use crate::vectorfields::{
    estimate_constants, hormander_degree, BracketWord, FieldError, HormanderCertificate, HormanderOptions,
    VectorFieldSystem,
};

/// Relative eigenvalue floor used to call a covariance non-degenerate.
pub const RELATIVE_FLOOR: f64 = 1e-10;
/// Factor applied to the first trial `τ₀ = min(0.02, T / 2N)`.
pub const TAU_SAFETY: f64 = 0.9;
/// Maximum number of τ halvings during certification.
pub const MAX_HALVINGS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExcitationError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("tau = {tau} too large: {reason}")]
    TauTooLarge { tau: f64, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("covariance floor {floor:e} not reached after {attempts} attempts (best min eigenvalue {best:e})")]
    FloorNotReached { attempts: usize, best: f64, floor: f64 },
}

/// `τ₁ = τ`, `τ_l = 2(λτ/4M)^{2^{l−2}}` for `2 ≤ l ≤ N−1`, and the total length
/// `β = 2T_{N−1}(2d)^{N−1}` of the full excitation path.
#[derive(Clone, Debug, Serialize)]
pub struct ExcitationSchedule {
    pub tau: f64,
    pub degree: usize,
    pub d: usize,
    pub taus: Vec<f64>,
    pub lambda: f64,
    pub lipschitz: f64,
    pub horizon: f64,
    pub beta: f64,
}

impl ExcitationSchedule {
    pub fn new(cert: &HormanderCertificate, d: usize, tau: f64) -> Result<Self, ExcitationError> {
        let c = cert.constants()?;
        if !(tau > 0.0) {
            return Err(ExcitationError::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        let n_deg = cert.degree;
        let ratio = cert.lambda * tau / (4.0 * c.lipschitz);
        let taus: Vec<f64> = (1..n_deg)
            .map(|l| if l == 1 { tau } else { 2.0 * ratio.powi(1 << (l - 2)) })
            .collect();
        let t_sum: f64 = taus.iter().sum();
        let beta = if n_deg == 1 { 0.0 } else { 2.0 * t_sum * ((2 * d) as f64).powi(n_deg as i32 - 1) };
        if beta >= 1.0 {
            return Err(ExcitationError::TauTooLarge { tau, reason: format!("total length beta = {beta} is not below 1") });
        }
        if t_sum > c.horizon {
            return Err(ExcitationError::TauTooLarge {
                tau,
                reason: format!("pulse time {t_sum} exceeds the horizon T = {}", c.horizon),
            });
        }
        Ok(Self { tau, degree: n_deg, d, taus, lambda: cert.lambda, lipschitz: c.lipschitz, horizon: c.horizon, beta })
    }

    /// `T_l = τ₁ + … + τ_l` (`T_0 = 0`).
    pub fn cumulative(&self, l: usize) -> f64 {
        self.taus[..l].iter().sum()
    }

    /// Number of excursions `(2d)^{N−1}`.
    pub fn excursion_count(&self) -> usize {
        if self.degree <= 1 {
            0
        } else {
            (2 * self.d).pow(self.degree as u32 - 1)
        }
    }

    /// The pulse tuples `((i₁,κ₁),…,(i_{N−1},κ_{N−1}))` in concatenation
    /// order: lexicographic, with pairs ordered `(1,+1), (1,−1), (2,+1), …`.
    pub fn tuples(&self) -> Vec<Vec<(usize, f64)>> {
        let len = self.degree.saturating_sub(1);
        let base = 2 * self.d;
        (0..self.excursion_count())
            .map(|mut idx| {
                let mut digits = vec![0; len];
                for slot in digits.iter_mut().rev() {
                    *slot = idx % base;
                    idx /= base;
                }
                digits.into_iter().map(|p| (p / 2, if p % 2 == 0 { 1.0 } else { -1.0 })).collect()
            })
            .collect()
    }

    /// `ξ^{τ₁,i₁,κ₁} ∗ … ∗ ξ^{τ_{N−1},i_{N−1},κ_{N−1}}` for one tuple.
    pub fn pulse_train(&self, tuple: &[(usize, f64)]) -> CMPath {
        tuple
            .iter()
            .zip(&self.taus)
            .fold(CMPath::empty(self.d), |acc, (&(i, kappa), &tau)| acc.concat(&elementary_path(self.d, tau, i, kappa)))
    }
}

/// `ξ^{τ,i,κ}`: slope `κ eᵢ` on `[0, τ]` (`i` 0-based).
pub fn elementary_path(d: usize, tau: f64, i: usize, kappa: f64) -> CMPath {
    let mut slope = vec![0.0; d];
    slope[i] = kappa;
    CMPath::new(vec![0.0, tau], vec![slope]).expect("valid pulse")
}

/// `𝒜h = h ∗ h̄`.
pub fn excursion(h: &CMPath) -> CMPath {
    h.excursion()
}

/// The full excitation path `k^τ` of length β.
pub fn build_ktau(cert: &HormanderCertificate, d: usize, tau: f64) -> Result<(CMPath, ExcitationSchedule), ExcitationError> {
    let schedule = ExcitationSchedule::new(cert, d, tau)?;
    let path = schedule
        .tuples()
        .iter()
        .fold(CMPath::empty(d), |acc, t| acc.concat(&schedule.pulse_train(t).excursion()));
    Ok((path, schedule))
}

/// `h^β`: `k^τ` on `[0, β]`, then `h` run at speed `T/(T−β)` on `[β, T]`.
pub fn perturb(h: &CMPath, ktau: &CMPath) -> Result<CMPath, ExcitationError> {
    if ktau.is_empty() {
        return Ok(h.clone());
    }
    let beta = ktau.horizon();
    let t = h.horizon();
    if beta >= t {
        return Err(ExcitationError::InvalidArgument(format!("excitation length {beta} is not below the horizon {t}")));
    }
    Ok(ktau.concat(&h.time_scaled((t - beta) / t)))
}

/// Result of [`directional_excitation`].
#[derive(Clone, Debug, Serialize)]
pub struct DirectionalExcitation {
    pub eta: CMPath,
    /// Frame word `W_j` with the largest `|⟨v, W_j(x)⟩|`.
    pub word: BracketWord,
    pub frame_index: usize,
    pub kappas: Vec<f64>,
    /// `|⟨v, Q^{V_{j_last}}_{T_{N−1}}(η)⟩|`.
    pub achieved: f64,
    /// `4M(λτ/4M)^{2^{N−2}}` (`λτ` for N = 2, `λ` for N = 1).
    pub bound: f64,
}

impl DirectionalExcitation {
    pub fn satisfied(&self) -> bool {
        self.achieved >= self.bound
    }
}

/// The pulse train that pushes `⟨v, Q^{U_{l+1}}⟩` away from zero, where
/// `U_l` drops the outer `l−1` brackets of the frame word chosen for `v`.
///
/// On interval `l` the pulse runs along `V_{j_l}` with the sign that makes
/// the derivative of the running value `⟨v, Q^{U_{l+1}}⟩` have the running
/// value's sign (zero counts as non-negative). Words shorter than `N` are
/// padded with pulses along their innermost field, which leave the measured
/// value unchanged.
pub fn directional_excitation(
    sys: &VectorFieldSystem,
    cert: &HormanderCertificate,
    v: &[f64],
    tau: f64,
    substeps: usize,
) -> Result<DirectionalExcitation, ExcitationError> {
    let n = sys.n();
    let d = sys.d();
    if v.len() != n {
        return Err(ExcitationError::Field(FieldError::DimensionMismatch { expected: n, got: v.len() }));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(ExcitationError::InvalidArgument("direction must be nonzero".into()));
    }
    let v = DVector::from_iterator(n, v.iter().map(|x| x / norm));
    let schedule = ExcitationSchedule::new(cert, d, tau)?;
    let frame_index = cert.frame_index_for(&v);
    let word = cert.frame[frame_index].clone();
    let k = word.degree();
    let last = word.last();
    let x0 = &cert.point;

    let mut eta = CMPath::empty(d);
    let mut kappas = Vec::with_capacity(schedule.taus.len());
    for (l, &tau_l) in schedule.taus.iter().enumerate() {
        let (i, kappa) = if l + 1 < k {
            let u_l = word.suffix(l).field(sys);
            let u_next = word.suffix(l + 1).field(sys);
            let traj = solve_skeleton(sys, x0, &pad(&eta, d), substeps)?;
            let kinv = traj.final_kinv();
            let phi = traj.endpoint().as_slice();
            let q_l = kinv * u_l.evaluate(phi)?;
            let q_next = kinv * u_next.evaluate(phi)?;
            let running = v.dot(&q_next);
            let slope = v.dot(&q_l);
            let kappa = if (slope >= 0.0) == (running >= 0.0) { 1.0 } else { -1.0 };
            (word.indices()[l], kappa)
        } else {
            (last, 1.0)
        };
        kappas.push(kappa);
        eta = eta.concat(&elementary_path(d, tau_l, i, kappa));
    }

    let traj = solve_skeleton(sys, x0, &pad(&eta, d), substeps)?;
    let q = traj.final_kinv() * sys.field(last).evaluate(traj.endpoint().as_slice())?;
    let achieved = v.dot(&q).abs();
    let bound = induction_bound(&schedule);
    Ok(DirectionalExcitation { eta, word, frame_index, kappas, achieved, bound })
}

/// Skeleton solves need at least one segment; an empty path is replaced by a
/// zero control of negligible length.
fn pad(h: &CMPath, d: usize) -> CMPath {
    if h.is_empty() {
        CMPath::zero(d, f64::MIN_POSITIVE.sqrt(), 1)
    } else {
        h.clone()
    }
}

/// Lower bound on `|⟨v, Q^{V_{j_N}}_{T_{N−1}}⟩|` after the pulse train.
pub fn induction_bound(s: &ExcitationSchedule) -> f64 {
    match s.degree {
        0 | 1 => s.lambda,
        2 => s.lambda * s.tau,
        nd => 4.0 * s.lipschitz * (s.lambda * s.tau / (4.0 * s.lipschitz)).powi(1 << (nd - 2)),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CertifyOptions {
    pub substeps: usize,
    /// First trial τ; `None` uses `min(0.02, T/2N)·0.9`.
    pub tau0: Option<f64>,
    pub max_halvings: usize,
    pub relative_floor: f64,
    pub hormander: HormanderOptions,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            substeps: DEFAULT_SUBSTEPS,
            tau0: None,
            max_halvings: MAX_HALVINGS,
            relative_floor: RELATIVE_FLOOR,
            hormander: HormanderOptions::default(),
        }
    }
}

/// Outcome of [`certify_nondegenerate`].
#[derive(Clone, Debug, Serialize)]
pub struct NondegenerateCertificate {
    pub certificate: HormanderCertificate,
    pub h_beta: CMPath,
    /// `None` when `h` was already non-degenerate and is returned unchanged.
    pub schedule: Option<ExcitationSchedule>,
    pub before: CovarianceReport,
    pub after: CovarianceReport,
    pub floor: f64,
    /// `|φ(T, x, h^β) − φ(T, x, h)|`.
    pub endpoint_shift: f64,
    /// `‖h^β − h‖_H`.
    pub distance: f64,
    pub attempts: usize,
}

fn floor_for(report: &CovarianceReport, rel: f64, projected: bool) -> f64 {
    let (trace, dim) = match (&report.sigma_projected, projected) {
        (Some(sp), true) => (sp.trace(), sp.nrows()),
        _ => (report.sigma.trace(), report.sigma.nrows()),
    };
    rel * trace / dim as f64
}

fn min_eig(report: &CovarianceReport, projected: bool) -> f64 {
    match (report.projected_min_eig, projected) {
        (Some(e), true) => e,
        _ => report.min_eig,
    }
}

/// Prepends an excitation path to `h` so that the covariance of `φ_T`
/// (projected when `projection` is given) clears the relative floor, keeping
/// the endpoint. Returns `h` unchanged when it already does.
pub fn certify_nondegenerate(
    sys: &VectorFieldSystem,
    x0: &[f64],
    h: &CMPath,
    projection: Option<&Projection>,
    opts: CertifyOptions,
) -> Result<NondegenerateCertificate, ExcitationError> {
    let cert = estimate_constants(sys, &hormander_degree(sys, x0, opts.hormander)?)?;
    certify_with(sys, &cert, h, projection, opts)
}

/// As [`certify_nondegenerate`] with a precomputed certificate.
pub fn certify_with(
    sys: &VectorFieldSystem,
    cert: &HormanderCertificate,
    h: &CMPath,
    projection: Option<&Projection>,
    opts: CertifyOptions,
) -> Result<NondegenerateCertificate, ExcitationError> {
    let x0 = cert.point.as_slice();
    let projected = projection.is_some();
    let base_traj = solve_skeleton(sys, x0, h, opts.substeps)?;
    let before = covariance(sys, &base_traj, projection)?;
    let base_end = base_traj.endpoint().clone();
    let floor = floor_for(&before, opts.relative_floor, projected);
    if min_eig(&before, projected) > floor {
        return Ok(NondegenerateCertificate {
            certificate: cert.clone(),
            h_beta: h.clone(),
            schedule: None,
            after: before.clone(),
            before,
            floor,
            endpoint_shift: 0.0,
            distance: 0.0,
            attempts: 0,
        });
    }

    let c = cert.constants()?;
    let mut tau = opts
        .tau0
        .unwrap_or_else(|| 0.02f64.min(c.horizon / (2.0 * cert.degree as f64)) * TAU_SAFETY);
    let mut best = f64::NEG_INFINITY;
    let mut best_floor = floor;
    for attempt in 1..=opts.max_halvings + 1 {
        if let Ok((ktau, schedule)) = build_ktau(cert, sys.d(), tau) {
            let h_beta = perturb(h, &ktau)?;
            let traj = solve_skeleton(sys, x0, &h_beta, opts.substeps)?;
            let after = covariance(sys, &traj, projection)?;
            let floor = floor_for(&after, opts.relative_floor, projected);
            let e = min_eig(&after, projected);
            if e > floor {
                let endpoint_shift = (traj.endpoint() - &base_end).norm();
                let distance = h_beta.distance(h).unwrap_or(f64::NAN);
                return Ok(NondegenerateCertificate {
                    certificate: cert.clone(),
                    h_beta,
                    schedule: Some(schedule),
                    before,
                    after,
                    floor,
                    endpoint_shift,
                    distance,
                    attempts: attempt,
                });
            }
            if e - floor > best - best_floor {
                best = e;
                best_floor = floor;
            }
        }
        tau *= 0.5;
    }
    Err(ExcitationError::FloorNotReached { attempts: opts.max_halvings + 1, best, floor: best_floor })
}
