//! The discretised control problem: uniform piecewise-constant controls,
//! RK4 forward solves and exact reverse-mode gradients of the discrete
//! endpoint map.

use crate::skeleton::{rk4_state, StateScratch};
use crate::vectorfields::VectorFieldSystem;

/// Path-tracking data: target values of state components
/// `offset..offset + values[k].len()` at the segment ends `t_{k+1}`.
#[derive(Clone, Debug)]
pub struct Tracking {
    pub offset: usize,
    pub values: Vec<Vec<f64>>,
}

/// States at every substep, stored flat; row `j` is the state after `j`
/// steps.
#[derive(Clone, Debug)]
pub struct States {
    n: usize,
    data: Vec<f64>,
}

impl States {
    pub fn len(&self) -> usize {
        self.data.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.len().checked_sub(1).map(|j| &self[j])
    }
}

impl std::ops::Index<usize> for States {
    type Output = [f64];

    fn index(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }
}

/// Endpoint residual `c = P φ_T − a` on the first `n_main` state components.
#[derive(Clone, Debug)]
pub struct DiscreteProblem {
    pub sys: VectorFieldSystem,
    pub x0: Vec<f64>,
    pub segments: usize,
    pub substeps: usize,
    pub horizon: f64,
    /// `m × n_main`, row-major.
    pub p: Vec<f64>,
    pub m: usize,
    pub n_main: usize,
    pub target: Vec<f64>,
    pub tracking: Option<Tracking>,
}

/// Multipliers and weights of the augmented Lagrangian
/// `½|z|² + μᵀc + (ρ/2)|c|² + w Σ_k Δt |ζ_k − b_k|²`.
#[derive(Clone, Debug)]
pub struct Penalty {
    pub mu: Vec<f64>,
    pub rho: f64,
    pub tracking_weight: f64,
}

impl DiscreteProblem {
    pub fn dt(&self) -> f64 {
        self.horizon / self.segments as f64
    }

    pub fn dim(&self) -> usize {
        self.segments * self.sys.d()
    }

    /// Controls `u_k = z_k / √Δt` from the scaled variables.
    pub fn controls(&self, z: &[f64]) -> Vec<f64> {
        let s = 1.0 / self.dt().sqrt();
        z.iter().map(|v| v * s).collect()
    }

    /// State at every substep.
    pub fn forward(&self, z: &[f64]) -> States {
        let d = self.sys.d();
        let n = self.x0.len();
        let u = self.controls(z);
        let h = self.dt() / self.substeps as f64;
        let mut data = Vec::with_capacity((self.segments * self.substeps + 1) * n);
        let mut x = self.x0.clone();
        data.extend_from_slice(&x);
        let mut scratch = StateScratch::new(n);
        for k in 0..self.segments {
            let uk = &u[k * d..(k + 1) * d];
            for _ in 0..self.substeps {
                rk4_state(&self.sys, uk, &mut x, h, &mut scratch);
                data.extend_from_slice(&x);
            }
        }
        States { n, data }
    }

    pub fn residual(&self, end: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|r| {
                (0..self.n_main).map(|c| self.p[r * self.n_main + c] * end[c]).sum::<f64>() - self.target[r]
            })
            .collect()
    }

    /// `max_k |ζ(t_{k+1}) − b_{k+1}|`.
    pub fn tracking_error(&self, states: &States) -> f64 {
        match &self.tracking {
            None => 0.0,
            Some(tr) => (0..self.segments)
                .map(|k| {
                    let s = &states[(k + 1) * self.substeps];
                    tr.values[k]
                        .iter()
                        .enumerate()
                        .map(|(i, b)| (s[tr.offset + i] - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max),
        }
    }

    fn tracking_sum(&self, states: &States) -> f64 {
        match &self.tracking {
            None => 0.0,
            Some(tr) => {
                let dt = self.dt();
                (0..self.segments)
                    .map(|k| {
                        let s = &states[(k + 1) * self.substeps];
                        dt * tr.values[k].iter().enumerate().map(|(i, b)| (s[tr.offset + i] - b).powi(2)).sum::<f64>()
                    })
                    .sum()
            }
        }
    }

    /// Value of the augmented Lagrangian; the gradient with respect to `z`
    /// goes to `grad`.
    pub fn lagrangian(&self, z: &[f64], pen: &Penalty, grad: &mut [f64]) -> f64 {
        let states = self.forward(z);
        let end = states.last().expect("nonempty");
        let c = self.residual(end);
        if !c.iter().all(|v| v.is_finite()) {
            return f64::NAN;
        }
        let energy = 0.5 * z.iter().map(|v| v * v).sum::<f64>();
        let lin: f64 = pen.mu.iter().zip(&c).map(|(a, b)| a * b).sum();
        let quad = 0.5 * pen.rho * c.iter().map(|v| v * v).sum::<f64>();
        let track = pen.tracking_weight * self.tracking_sum(&states);
        let value = energy + lin + quad + track;

        // dL/dc = μ + ρc, pulled back to the final state by Pᵀ
        let lam: Vec<f64> = pen.mu.iter().zip(&c).map(|(a, b)| a + pen.rho * b).collect();
        let n = self.x0.len();
        let mut ybar = vec![0.0; n];
        for (col, yb) in ybar.iter_mut().enumerate().take(self.n_main) {
            *yb = (0..self.m).map(|r| self.p[r * self.n_main + col] * lam[r]).sum();
        }
        self.backward(z, &states, ybar, pen.tracking_weight, grad);
        for (g, zi) in grad.iter_mut().zip(z) {
            *g += zi;
        }
        value
    }

    /// Reverse pass: given `∂/∂x_T`, accumulates the tracking terms and
    /// writes `∂/∂z` (without the energy term) into `grad`.
    pub fn backward(&self, z: &[f64], states: &States, mut ybar: Vec<f64>, track_w: f64, grad: &mut [f64]) {
        let d = self.sys.d();
        let n = self.x0.len();
        let u = self.controls(z);
        let h = self.dt() / self.substeps as f64;
        let scale = 1.0 / self.dt().sqrt();
        let mut ws = AdjointScratch::new(n, d);
        let mut ubar = vec![0.0; d];
        grad.iter_mut().for_each(|g| *g = 0.0);
        for k in (0..self.segments).rev() {
            if let Some(tr) = &self.tracking {
                if track_w != 0.0 {
                    let s = &states[(k + 1) * self.substeps];
                    let w = 2.0 * track_w * self.dt();
                    for (i, b) in tr.values[k].iter().enumerate() {
                        ybar[tr.offset + i] += w * (s[tr.offset + i] - b);
                    }
                }
            }
            let uk = &u[k * d..(k + 1) * d];
            ubar.iter_mut().for_each(|v| *v = 0.0);
            for j in (0..self.substeps).rev() {
                let y = &states[k * self.substeps + j];
                rk4_vjp(&self.sys, uk, y, h, &mut ybar, &mut ubar, &mut ws);
            }
            for i in 0..d {
                grad[k * d + i] = ubar[i] * scale;
            }
        }
    }

    /// Jacobian `∂c/∂z` (`m × dim`, row-major).
    pub fn constraint_jacobian(&self, z: &[f64], states: &States) -> Vec<f64> {
        let n = self.x0.len();
        let dim = self.dim();
        let mut jac = vec![0.0; self.m * dim];
        for r in 0..self.m {
            let mut ybar = vec![0.0; n];
            ybar[..self.n_main].copy_from_slice(&self.p[r * self.n_main..(r + 1) * self.n_main]);
            self.backward(z, states, ybar, 0.0, &mut jac[r * dim..(r + 1) * dim]);
        }
        jac
    }
}

struct AdjointScratch {
    y2: Vec<f64>,
    y3: Vec<f64>,
    y4: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    kb1: Vec<f64>,
    kb2: Vec<f64>,
    kb3: Vec<f64>,
    kb4: Vec<f64>,
    a: Vec<f64>,
    v: Vec<f64>,
    yb: Vec<f64>,
}

impl AdjointScratch {
    fn new(n: usize, _d: usize) -> Self {
        let z = || vec![0.0; n];
        Self {
            y2: z(),
            y3: z(),
            y4: z(),
            k1: z(),
            k2: z(),
            k3: z(),
            kb1: z(),
            kb2: z(),
            kb3: z(),
            kb4: z(),
            a: vec![0.0; n * n],
            v: z(),
            yb: z(),
        }
    }
}

/// Pulls `f(y) = Σᵢ uᵢVᵢ(y)` back: `ybar += (∇f)ᵀ kbar`, `ubar_i += Vᵢ(y)·kbar`.
#[allow(clippy::too_many_arguments)]
fn stage_vjp(
    sys: &VectorFieldSystem,
    u: &[f64],
    y: &[f64],
    kbar: &[f64],
    ybar_out: &mut [f64],
    ubar: &mut [f64],
    a: &mut [f64],
    v: &mut [f64],
) {
    let n = y.len();
    sys.controlled_jacobian_into(y, u, a);
    for j in 0..n {
        let mut acc = 0.0;
        for c in 0..n {
            acc += a[c * n + j] * kbar[c];
        }
        ybar_out[j] = acc;
    }
    for (i, f) in sys.fields().iter().enumerate() {
        f.eval_into(y, v);
        ubar[i] += v.iter().zip(kbar).map(|(p, q)| p * q).sum::<f64>();
    }
}

/// Vector-Jacobian product of one RK4 step `y ↦ y'` with respect to `y`
/// (in place on `ybar`) and `u` (accumulated into `ubar`).
#[allow(clippy::needless_range_loop)]
fn rk4_vjp(
    sys: &VectorFieldSystem,
    u: &[f64],
    y: &[f64],
    h: f64,
    ybar: &mut [f64],
    ubar: &mut [f64],
    s: &mut AdjointScratch,
) {
    let n = y.len();
    // recompute the stages
    sys.controlled_into(y, u, &mut s.k1);
    for i in 0..n {
        s.y2[i] = y[i] + 0.5 * h * s.k1[i];
    }
    sys.controlled_into(&s.y2, u, &mut s.k2);
    for i in 0..n {
        s.y3[i] = y[i] + 0.5 * h * s.k2[i];
    }
    sys.controlled_into(&s.y3, u, &mut s.k3);
    for i in 0..n {
        s.y4[i] = y[i] + h * s.k3[i];
    }

    for i in 0..n {
        s.kb1[i] = h / 6.0 * ybar[i];
        s.kb2[i] = h / 3.0 * ybar[i];
        s.kb3[i] = h / 3.0 * ybar[i];
        s.kb4[i] = h / 6.0 * ybar[i];
    }
    stage_vjp(sys, u, &s.y4, &s.kb4, &mut s.yb, ubar, &mut s.a, &mut s.v);
    for i in 0..n {
        ybar[i] += s.yb[i];
        s.kb3[i] += h * s.yb[i];
    }
    stage_vjp(sys, u, &s.y3, &s.kb3, &mut s.yb, ubar, &mut s.a, &mut s.v);
    for i in 0..n {
        ybar[i] += s.yb[i];
        s.kb2[i] += 0.5 * h * s.yb[i];
    }
    stage_vjp(sys, u, &s.y2, &s.kb2, &mut s.yb, ubar, &mut s.a, &mut s.v);
    for i in 0..n {
        ybar[i] += s.yb[i];
        s.kb1[i] += 0.5 * h * s.yb[i];
    }
    stage_vjp(sys, u, y, &s.kb1, &mut s.yb, ubar, &mut s.a, &mut s.v);
    for i in 0..n {
        ybar[i] += s.yb[i];
    }
}
