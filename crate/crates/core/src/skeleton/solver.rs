use nalgebra::{DMatrix, DVector};

use super::cmpath::CMPath;
use super::SkeletonError;
use crate::vectorfields::{VectorField, VectorFieldSystem};

pub const DEFAULT_SUBSTEPS: usize = 32;

/// `(φ_t, J_t, K_t = J_t⁻¹)` sampled at every integrator step.
#[derive(Clone, Debug)]
pub struct SkeletonTrajectory {
    x0: Vec<f64>,
    control: CMPath,
    times: Vec<f64>,
    phi: Vec<DVector<f64>>,
    jac: Vec<DMatrix<f64>>,
    kinv: Vec<DMatrix<f64>>,
    /// Control segment of the step ending at `times[i + 1]`.
    step_segment: Vec<usize>,
}

impl SkeletonTrajectory {
    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn control(&self) -> &CMPath {
        &self.control
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn phi(&self) -> &[DVector<f64>] {
        &self.phi
    }

    pub fn jac(&self) -> &[DMatrix<f64>] {
        &self.jac
    }

    pub fn kinv(&self) -> &[DMatrix<f64>] {
        &self.kinv
    }

    pub fn step_segment(&self) -> &[usize] {
        &self.step_segment
    }

    pub fn endpoint(&self) -> &DVector<f64> {
        self.phi.last().expect("trajectory is nonempty")
    }

    pub fn final_jac(&self) -> &DMatrix<f64> {
        self.jac.last().expect("trajectory is nonempty")
    }

    pub fn final_kinv(&self) -> &DMatrix<f64> {
        self.kinv.last().expect("trajectory is nonempty")
    }

    /// `max_t ‖J_t K_t − I‖_max`.
    pub fn inverse_defect(&self) -> f64 {
        let n = self.x0.len();
        let id = DMatrix::<f64>::identity(n, n);
        self.jac
            .iter()
            .zip(&self.kinv)
            .map(|(j, k)| (j * k - &id).amax())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t, phi1..phin, J11, J12, …` (J row-major).
    pub fn to_csv(&self) -> String {
        let n = self.x0.len();
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",phi{i}"));
        }
        for r in 1..=n {
            for c in 1..=n {
                out.push_str(&format!(",J{r}{c}"));
            }
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t}"));
            for x in self.phi[i].iter() {
                out.push_str(&format!(",{x}"));
            }
            let j = &self.jac[i];
            for r in 0..n {
                for c in 0..n {
                    out.push_str(&format!(",{}", j[(r, c)]));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Solves `dφ = Σᵢ Vᵢ(φ) dhⁱ`, `dJ = Σᵢ ∇Vᵢ(φ) J dhⁱ`, `dK = −Σᵢ K ∇Vᵢ(φ) dhⁱ`
/// from `(x0, I, I)` with `substeps` classical RK4 steps per control segment.
/// The drift plays no part.
pub fn solve_skeleton(
    sys: &VectorFieldSystem,
    x0: &[f64],
    h: &CMPath,
    substeps: usize,
) -> Result<SkeletonTrajectory, SkeletonError> {
    let n = sys.n();
    let id = DMatrix::identity(n, n);
    solve_skeleton_from(sys, x0, &id, &id, h, substeps)
}

/// As [`solve_skeleton`] but from an arbitrary initial `(φ₀, J₀, K₀)`.
pub fn solve_skeleton_from(
    sys: &VectorFieldSystem,
    x0: &[f64],
    j0: &DMatrix<f64>,
    k0: &DMatrix<f64>,
    h: &CMPath,
    substeps: usize,
) -> Result<SkeletonTrajectory, SkeletonError> {
    let n = sys.n();
    if x0.len() != n {
        return Err(SkeletonError::DimensionMismatch { expected: n, got: x0.len() });
    }
    if !h.is_empty() && h.d() != sys.d() {
        return Err(SkeletonError::DimensionMismatch { expected: sys.d(), got: h.d() });
    }
    if substeps == 0 {
        return Err(SkeletonError::InvalidPath("substeps must be at least 1".into()));
    }
    let steps = h.segments() * substeps;
    let mut times = Vec::with_capacity(steps + 1);
    let mut phi = Vec::with_capacity(steps + 1);
    let mut jac = Vec::with_capacity(steps + 1);
    let mut kinv = Vec::with_capacity(steps + 1);
    let mut step_segment = Vec::with_capacity(steps);
    times.push(0.0);
    phi.push(DVector::from_column_slice(x0));
    jac.push(j0.clone());
    kinv.push(k0.clone());

    let mut ws = Workspace::new(n);
    for (seg, u) in h.slopes().iter().enumerate() {
        let (a, b) = (h.grid()[seg], h.grid()[seg + 1]);
        let dt = (b - a) / substeps as f64;
        for s in 1..=substeps {
            let (p, j, k) = rk4_full(sys, u, &phi[phi.len() - 1], &jac[jac.len() - 1], &kinv[kinv.len() - 1], dt, &mut ws);
            let t = if s == substeps { b } else { a + dt * s as f64 };
            if !(p.iter().all(|x| x.is_finite()) && j.iter().all(|x| x.is_finite()) && k.iter().all(|x| x.is_finite())) {
                return Err(SkeletonError::BlowUp { time: t });
            }
            times.push(t);
            phi.push(p);
            jac.push(j);
            kinv.push(k);
            step_segment.push(seg);
        }
    }
    Ok(SkeletonTrajectory { x0: x0.to_vec(), control: h.clone(), times, phi, jac, kinv, step_segment })
}

/// `φ(T, x0, h)` without the Jacobians.
pub fn endpoint(sys: &VectorFieldSystem, x0: &[f64], h: &CMPath, substeps: usize) -> Result<Vec<f64>, SkeletonError> {
    let n = sys.n();
    if x0.len() != n {
        return Err(SkeletonError::DimensionMismatch { expected: n, got: x0.len() });
    }
    let mut x = x0.to_vec();
    let mut scratch = StateScratch::new(n);
    for (seg, u) in h.slopes().iter().enumerate() {
        let dt = h.dt(seg) / substeps as f64;
        for s in 0..substeps {
            rk4_state(sys, u, &mut x, dt, &mut scratch);
            if !x.iter().all(|v| v.is_finite()) {
                return Err(SkeletonError::BlowUp { time: h.grid()[seg] + dt * (s + 1) as f64 });
            }
        }
    }
    Ok(x)
}

/// Scratch buffers for [`rk4_state`].
pub struct StateScratch {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl StateScratch {
    pub fn new(n: usize) -> Self {
        Self { k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]], tmp: vec![0.0; n] }
    }
}

/// One classical RK4 step of `ẋ = Σᵢ uᵢ Vᵢ(x)` in place.
#[inline]
pub fn rk4_state(sys: &VectorFieldSystem, u: &[f64], x: &mut [f64], dt: f64, s: &mut StateScratch) {
    rk4_generic(|y, out| sys.controlled_into(y, u, out), x, dt, s);
}

/// One classical RK4 step of `ẋ = f(x)` in place.
#[inline]
pub fn rk4_generic<F: FnMut(&[f64], &mut [f64])>(mut f: F, x: &mut [f64], dt: f64, s: &mut StateScratch) {
    let n = x.len();
    let [k1, k2, k3, k4] = &mut s.k;
    let tmp = &mut s.tmp;
    f(x, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    f(tmp, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    f(tmp, k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    f(tmp, k4);
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

struct Workspace {
    a: Vec<f64>,
    v: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self { a: vec![0.0; n * n], v: vec![0.0; n] }
    }
}

fn rhs(
    sys: &VectorFieldSystem,
    u: &[f64],
    p: &DVector<f64>,
    j: &DMatrix<f64>,
    k: &DMatrix<f64>,
    ws: &mut Workspace,
) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = p.len();
    sys.controlled_into(p.as_slice(), u, &mut ws.v);
    sys.controlled_jacobian_into(p.as_slice(), u, &mut ws.a);
    let a = DMatrix::from_row_slice(n, n, &ws.a);
    let dp = DVector::from_column_slice(&ws.v);
    let dj = &a * j;
    let dk = -(k * &a);
    (dp, dj, dk)
}

fn rk4_full(
    sys: &VectorFieldSystem,
    u: &[f64],
    p: &DVector<f64>,
    j: &DMatrix<f64>,
    k: &DMatrix<f64>,
    dt: f64,
    ws: &mut Workspace,
) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (p1, j1, k1) = rhs(sys, u, p, j, k, ws);
    let (p2, j2, k2) = rhs(sys, u, &(p + &p1 * (0.5 * dt)), &(j + &j1 * (0.5 * dt)), &(k + &k1 * (0.5 * dt)), ws);
    let (p3, j3, k3) = rhs(sys, u, &(p + &p2 * (0.5 * dt)), &(j + &j2 * (0.5 * dt)), &(k + &k2 * (0.5 * dt)), ws);
    let (p4, j4, k4) = rhs(sys, u, &(p + &p3 * dt), &(j + &j3 * dt), &(k + &k3 * dt), ws);
    let c = dt / 6.0;
    (
        p + (p1 + p2 * 2.0 + p3 * 2.0 + p4) * c,
        j + (j1 + j2 * 2.0 + j3 * 2.0 + j4) * c,
        k + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * c,
    )
}

/// `Q^W_t = K_t W(φ_t)` at every trajectory time.
pub fn qw_path(traj: &SkeletonTrajectory, w: &VectorField) -> Vec<DVector<f64>> {
    let n = traj.x0.len();
    let mut buf = vec![0.0; n];
    traj.phi
        .iter()
        .zip(&traj.kinv)
        .map(|(p, k)| {
            w.eval_into(p.as_slice(), &mut buf);
            k * DVector::from_column_slice(&buf)
        })
        .collect()
}

/// `Dφ_T(h)⟨k⟩ = J_T Σᵢ ∫₀ᵀ K_s Vᵢ(φ_s) k̇ⁱ_s ds`, trapezoidal on the
/// trajectory grid. Breakpoints of `k` must be trajectory times.
pub fn frechet_derivative(
    sys: &VectorFieldSystem,
    traj: &SkeletonTrajectory,
    k: &CMPath,
) -> Result<DVector<f64>, SkeletonError> {
    let n = sys.n();
    let horizon = traj.control.horizon();
    if k.is_empty() {
        return Ok(DVector::zeros(n));
    }
    if k.d() != sys.d() {
        return Err(SkeletonError::DimensionMismatch { expected: sys.d(), got: k.d() });
    }
    if (k.horizon() - horizon).abs() > 1e-12 * horizon.max(1.0) {
        return Err(SkeletonError::GridMismatch(format!(
            "perturbation horizon {} differs from trajectory horizon {horizon}",
            k.horizon()
        )));
    }
    let tol = 1e-12 * horizon.max(1.0);
    for &g in &k.grid()[1..k.grid().len() - 1] {
        let idx = traj.times.partition_point(|&t| t < g - tol);
        if idx >= traj.times.len() || (traj.times[idx] - g).abs() > tol {
            return Err(SkeletonError::GridMismatch(format!("perturbation breakpoint {g} is not a trajectory time")));
        }
    }
    let qs: Vec<Vec<DVector<f64>>> = sys.fields().iter().map(|f| qw_path(traj, f)).collect();
    let mut acc = DVector::zeros(n);
    for step in 0..traj.times.len() - 1 {
        let (a, b) = (traj.times[step], traj.times[step + 1]);
        let kd = k.slope_at(0.5 * (a + b));
        for (i, q) in qs.iter().enumerate() {
            if kd[i] != 0.0 {
                acc += (&q[step] + &q[step + 1]) * (0.5 * (b - a) * kd[i]);
            }
        }
    }
    Ok(traj.final_jac() * acc)
}
