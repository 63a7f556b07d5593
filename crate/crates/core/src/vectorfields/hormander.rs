use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::brackets::{bracket_sets, BracketEntry, BracketSets, BracketWord};
use super::system::VectorFieldSystem;
use super::FieldError;
use crate::linalg::{numerical_rank, random_in_ball, random_unit, sphere_points};
use crate::skeleton::{solve_skeleton, CMPath};

/// Default cap on the bracket depth searched for the Hörmander degree.
pub const DEFAULT_KMAX: usize = 6;
/// Default relative rank tolerance (times the largest singular value).
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

const LAMBDA_SPHERE_SAMPLES: usize = 4096;
const LAMBDA_REFINE_STEPS: usize = 20;
const RADIUS_CHECK_SAMPLES: usize = 512;
const SUP_SAMPLES: usize = 512;
const LIPSCHITZ_RANDOM_CONTROLS: usize = 32;
const LIPSCHITZ_SEGMENTS: usize = 16;
const LIPSCHITZ_SUBSTEPS: usize = 16;
/// Inflation applied to every sampled supremum or Lipschitz constant.
const SAMPLED_SAFETY: f64 = 1.1;
const CONSTANTS_SEED: u64 = 0x5eed_c0de_0f1a_3b00;

#[derive(Clone, Copy, Debug)]
pub struct HormanderOptions {
    pub kmax: usize,
    pub rank_tol: f64,
}

impl Default for HormanderOptions {
    fn default() -> Self {
        Self { kmax: DEFAULT_KMAX, rank_tol: DEFAULT_RANK_TOL }
    }
}

/// Local constants of the strong Hörmander condition around the base point.
#[derive(Clone, Debug, Serialize)]
pub struct LocalConstants {
    /// Radius r of the ball on which the frame keeps `|⟨v,W_j⟩| ≥ 2λ`.
    pub radius: f64,
    /// Horizon T on which `|⟨v,Q^{W_j}_t(h)⟩| ≥ λ` for unit-speed controls.
    pub horizon: f64,
    /// Lipschitz bound M for `t ↦ Q^W_t(h)` and `t ↦ J_t(h)⁻¹`.
    pub lipschitz: f64,
    /// Lipschitz bound L of the bracket fields on the ball.
    pub field_lipschitz: f64,
    /// Sampled `max_j sup_{B_r} |W_j|`.
    pub sup_frame: f64,
    /// Sampled `sup_{B_r} (Σᵢ|Vᵢ|²)^{1/2}`.
    pub sup_speed: f64,
}

/// Strong Hörmander certificate at a point.
#[derive(Clone, Debug, Serialize)]
pub struct HormanderCertificate {
    pub point: Vec<f64>,
    pub degree: usize,
    pub frame: Vec<BracketWord>,
    /// `W_j(x)` for the frame words, in frame order.
    pub frame_values: Vec<Vec<f64>>,
    /// `λ` with `3λ = inf_{|v|=1} max_j |⟨v, W_j(x)⟩|`.
    pub lambda: f64,
    pub rank_tol: f64,
    pub kmax: usize,
    pub constants: Option<LocalConstants>,
}

impl HormanderCertificate {
    pub fn constants(&self) -> Result<&LocalConstants, FieldError> {
        self.constants.as_ref().ok_or(FieldError::MissingConstants)
    }

    pub fn frame_matrix(&self) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> =
            self.frame_values.iter().map(|v| DVector::from_column_slice(v)).collect();
        DMatrix::from_columns(&cols)
    }

    /// Index of the frame word maximising `|⟨v, W_j(x)⟩|` (ties: lowest index).
    pub fn frame_index_for(&self, v: &DVector<f64>) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (j, w) in self.frame_values.iter().enumerate() {
            let ip = inner(v.as_slice(), w).abs();
            if ip > best.1 {
                best = (j, ip);
            }
        }
        best.0
    }
}

/// Smallest N such that the bracket values up to degree N span ℝⁿ at `x`,
/// together with a frame of n words and λ.
pub fn hormander_degree(
    sys: &VectorFieldSystem,
    x: &[f64],
    opts: HormanderOptions,
) -> Result<HormanderCertificate, FieldError> {
    let n = sys.n();
    if x.len() != n {
        return Err(FieldError::DimensionMismatch { expected: n, got: x.len() });
    }
    let sets = bracket_sets(sys, opts.kmax);
    let mut last_rank = 0;
    for degree in 1..=opts.kmax {
        let values = values_up_to(&sets, degree, x);
        let cols: Vec<DVector<f64>> = values.iter().map(|(_, v)| v.clone()).collect();
        let (rank, smax) = numerical_rank(&cols, n, opts.rank_tol);
        last_rank = rank;
        if rank == n {
            let frame = select_frame(&values, n, opts.rank_tol * smax)?;
            let frame_values: Vec<Vec<f64>> = frame.iter().map(|(_, v)| v.as_slice().to_vec()).collect();
            let lambda = estimate_lambda(&frame_values);
            return Ok(HormanderCertificate {
                point: x.to_vec(),
                degree,
                frame: frame.into_iter().map(|(w, _)| w).collect(),
                frame_values,
                lambda,
                rank_tol: opts.rank_tol,
                kmax: opts.kmax,
                constants: None,
            });
        }
    }
    Err(FieldError::DegreeCapExceeded { cap: opts.kmax, rank: last_rank, n })
}

/// Numerical rank of `∪_{k≤degree} Σ_k(x)`.
pub fn span_rank(sys: &VectorFieldSystem, x: &[f64], degree: usize, rank_tol: f64) -> usize {
    let sets = bracket_sets(sys, degree.max(1));
    let cols: Vec<DVector<f64>> = values_up_to(&sets, degree, x).into_iter().map(|(_, v)| v).collect();
    numerical_rank(&cols, sys.n(), rank_tol).0
}

fn values_up_to(sets: &BracketSets, degree: usize, x: &[f64]) -> Vec<(BracketWord, DVector<f64>)> {
    sets.nonzero_up_to(degree)
        .map(|e: &BracketEntry| {
            let mut v = DVector::zeros(x.len());
            e.field.eval_into(x, v.as_mut_slice());
            (e.word.clone(), v)
        })
        .collect()
}

/// Greedy pivoted Gram–Schmidt, lowest degrees first; within a degree the
/// candidate with the largest residual wins (ties: first in level order).
fn select_frame(
    values: &[(BracketWord, DVector<f64>)],
    n: usize,
    abs_tol: f64,
) -> Result<Vec<(BracketWord, DVector<f64>)>, FieldError> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut chosen: Vec<(BracketWord, DVector<f64>)> = Vec::with_capacity(n);
    let max_degree = values.iter().map(|(w, _)| w.degree()).max().unwrap_or(0);
    for degree in 1..=max_degree {
        loop {
            if chosen.len() == n {
                return Ok(chosen);
            }
            let mut best: Option<(usize, f64, DVector<f64>)> = None;
            for (idx, (w, v)) in values.iter().enumerate() {
                if w.degree() != degree || chosen.iter().any(|(c, _)| c == w) {
                    continue;
                }
                let mut r = v.clone();
                for q in &basis {
                    r -= q * q.dot(v);
                }
                for q in &basis {
                    let c = q.dot(&r);
                    r -= q * c;
                }
                let rn = r.norm();
                if best.as_ref().is_none_or(|b| rn > b.1) {
                    best = Some((idx, rn, r));
                }
            }
            match best {
                Some((idx, rn, r)) if rn > abs_tol => {
                    basis.push(r / rn);
                    chosen.push(values[idx].clone());
                }
                _ => break,
            }
        }
    }
    if chosen.len() == n {
        Ok(chosen)
    } else {
        Err(FieldError::FrameSelection { found: chosen.len(), n })
    }
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs_projection(v: &[f64], frame: &[Vec<f64>]) -> f64 {
    frame.iter().map(|w| inner(v, w).abs()).fold(0.0, f64::max)
}

/// `λ = (1/3) inf_{|v|=1} max_j |⟨v, W_j⟩|`.
///
/// The infimum is taken over quasi-uniform sphere samples, the ±frame
/// directions and the directions `F^{-T}s / |F^{-T}s|` for sign vectors `s`
/// (where the piecewise-linear objective has its vertices), followed by a
/// short pattern search from the best candidate.
pub fn estimate_lambda(frame: &[Vec<f64>]) -> f64 {
    let n = frame.len();
    let mut cands = sphere_points(n, LAMBDA_SPHERE_SAMPLES);
    for w in frame {
        let w = DVector::from_column_slice(w);
        let norm = w.norm();
        if norm > 0.0 {
            cands.push(&w / norm);
            cands.push(-&w / norm);
        }
    }
    if n <= 12 {
        let f = DMatrix::from_columns(&frame.iter().map(|w| DVector::from_column_slice(w)).collect::<Vec<_>>());
        if let Some(inv_t) = f.transpose().try_inverse() {
            for mask in 0..(1u32 << n) {
                let s = DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { -1.0 } else { 1.0 });
                let v = &inv_t * s;
                let norm = v.norm();
                if norm > 0.0 {
                    cands.push(v / norm);
                }
            }
        }
    }
    let (mut best_v, mut best) = cands
        .into_iter()
        .map(|v| {
            let f = max_abs_projection(v.as_slice(), frame);
            (v, f)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one candidate direction");

    let mut step = 0.05;
    for _ in 0..LAMBDA_REFINE_STEPS {
        let mut improved = false;
        for k in 0..n {
            for sign in [1.0, -1.0] {
                let mut v = best_v.clone();
                v[k] += sign * step;
                let norm = v.norm();
                if norm == 0.0 {
                    continue;
                }
                v /= norm;
                let f = max_abs_projection(v.as_slice(), frame);
                if f < best {
                    best = f;
                    best_v = v;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best / 3.0
}

/// Fills in r, T, M and L for a certificate.
///
/// * r: starting at 1, halved until 512 sampled pairs `(x′, v)` with
///   `x′ ∈ B_r(x)`, `v ∈ E_j` satisfy `|⟨v, W_j(x′)⟩| ≥ 2λ`.
/// * M: sampled Lipschitz constant of `t ↦ Q^W_t(h)` (all words up to the
///   degree) and of `t ↦ J_t(h)⁻¹`, over constant-direction and random
///   piecewise-constant unit-speed controls on [0, 1].
/// * T: `min(1, λ / (M · max_j sup_{B_r}|W_j|), r / sup_{B_r}|V|)`; the last
///   term keeps unit-speed trajectories inside `B_r(x)` and is dropped when
///   every field is constant.
pub fn estimate_constants(
    sys: &VectorFieldSystem,
    cert: &HormanderCertificate,
) -> Result<HormanderCertificate, FieldError> {
    let n = sys.n();
    let x = DVector::from_column_slice(&cert.point);
    let lambda = cert.lambda;
    let sets = bracket_sets(sys, cert.degree + 1);
    let frame_fields: Vec<_> = cert.frame.iter().map(|w| w.field(sys)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(CONSTANTS_SEED);

    // radius
    let mut radius = 1.0;
    for _ in 0..48 {
        if radius_condition_holds(&x, radius, lambda, &cert.frame_values, &frame_fields, &mut rng) {
            break;
        }
        radius *= 0.5;
    }

    // suprema over the ball
    let pts = ball_samples(&x, radius, &mut rng);
    let mut buf = vec![0.0; n];
    let mut jac = vec![0.0; n * n];
    let mut sup_frame: f64 = 0.0;
    let mut sup_speed: f64 = 0.0;
    let mut field_lipschitz: f64 = 0.0;
    let words_up_to_n: Vec<&BracketEntry> = sets.nonzero_up_to(cert.degree).collect();
    for p in &pts {
        for f in &frame_fields {
            f.eval_into(p.as_slice(), &mut buf);
            sup_frame = sup_frame.max(norm(&buf));
        }
        let mut speed2 = 0.0;
        for f in sys.fields() {
            f.eval_into(p.as_slice(), &mut buf);
            speed2 += buf.iter().map(|b| b * b).sum::<f64>();
        }
        sup_speed = sup_speed.max(speed2.sqrt());
        for e in &words_up_to_n {
            e.field.jacobian_into(p.as_slice(), &mut jac);
            let m = DMatrix::from_row_slice(n, n, &jac);
            let op = m.singular_values().iter().copied().fold(0.0, f64::max);
            field_lipschitz = field_lipschitz.max(op);
        }
    }
    sup_frame *= SAMPLED_SAFETY;
    sup_speed *= SAMPLED_SAFETY;
    field_lipschitz *= SAMPLED_SAFETY;

    let lipschitz = sampled_lipschitz(sys, &x, &words_up_to_n, &mut rng) * SAMPLED_SAFETY;

    let all_constant = sys.fields().iter().chain(frame_fields.iter()).all(|f| f.degree() == 0);
    let t_frame = if lipschitz * sup_frame > 0.0 { lambda / (lipschitz * sup_frame) } else { f64::INFINITY };
    let t_ball = if all_constant || sup_speed == 0.0 { f64::INFINITY } else { radius / sup_speed };
    let horizon = 1f64.min(t_frame).min(t_ball);

    let mut out = cert.clone();
    out.constants = Some(LocalConstants {
        radius,
        horizon,
        lipschitz,
        field_lipschitz,
        sup_frame,
        sup_speed,
    });
    Ok(out)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn ball_samples(x: &DVector<f64>, r: f64, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = x.len();
    let mut pts = Vec::with_capacity(SUP_SAMPLES);
    pts.push(x.clone());
    for k in 1..SUP_SAMPLES {
        if k % 2 == 0 {
            pts.push(x + random_unit(rng, n) * r);
        } else {
            pts.push(random_in_ball(rng, x, r));
        }
    }
    pts
}

fn radius_condition_holds(
    x: &DVector<f64>,
    r: f64,
    lambda: f64,
    frame_at_x: &[Vec<f64>],
    frame_fields: &[crate::vectorfields::VectorField],
    rng: &mut ChaCha8Rng,
) -> bool {
    let n = x.len();
    let mut buf = vec![0.0; n];
    for k in 0..RADIUS_CHECK_SAMPLES {
        let xp = if k % 2 == 0 { x + random_unit(rng, n) * (r * (1.0 - 1e-12)) } else { random_in_ball(rng, x, r) };
        let v = random_unit(rng, n);
        let mut members: Vec<usize> = (0..frame_at_x.len())
            .filter(|&j| inner(v.as_slice(), &frame_at_x[j]).abs() >= 3.0 * lambda)
            .collect();
        if members.is_empty() {
            let best = (0..frame_at_x.len())
                .max_by(|&a, &b| {
                    inner(v.as_slice(), &frame_at_x[a]).abs().total_cmp(&inner(v.as_slice(), &frame_at_x[b]).abs())
                })
                .expect("nonempty frame");
            members.push(best);
        }
        for j in members {
            frame_fields[j].eval_into(xp.as_slice(), &mut buf);
            if inner(v.as_slice(), &buf).abs() < 2.0 * lambda {
                return false;
            }
        }
    }
    true
}

fn sampled_lipschitz(
    sys: &VectorFieldSystem,
    x: &DVector<f64>,
    words: &[&BracketEntry],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let d = sys.d();
    let n = sys.n();
    let mut controls = Vec::new();
    for i in 0..d {
        for kappa in [1.0, -1.0] {
            let mut s = vec![0.0; d];
            s[i] = kappa;
            controls.push(CMPath::uniform(1.0, vec![s; LIPSCHITZ_SEGMENTS]).expect("valid control"));
        }
    }
    for _ in 0..LIPSCHITZ_RANDOM_CONTROLS {
        let slopes: Vec<Vec<f64>> =
            (0..LIPSCHITZ_SEGMENTS).map(|_| random_unit(rng, d).as_slice().to_vec()).collect();
        controls.push(CMPath::uniform(1.0, slopes).expect("valid control"));
    }
    let mut m: f64 = 0.0;
    let mut buf = vec![0.0; n];
    for h in &controls {
        let traj = match solve_skeleton(sys, x.as_slice(), h, LIPSCHITZ_SUBSTEPS) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let times = traj.times();
        let mut prev_q: Vec<DVector<f64>> = Vec::new();
        for (idx, &t) in times.iter().enumerate() {
            let kinv = &traj.kinv()[idx];
            let phi = traj.phi()[idx].as_slice();
            let q: Vec<DVector<f64>> = words
                .iter()
                .map(|e| {
                    e.field.eval_into(phi, &mut buf);
                    kinv * DVector::from_column_slice(&buf)
                })
                .collect();
            if idx > 0 {
                let dt = t - times[idx - 1];
                for (a, b) in q.iter().zip(&prev_q) {
                    m = m.max((a - b).norm() / dt);
                }
                m = m.max((kinv - &traj.kinv()[idx - 1]).norm() / dt);
            }
            prev_q = q;
        }
    }
    m
}
