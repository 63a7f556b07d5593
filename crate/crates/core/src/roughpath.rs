//! Level-2 geometric rough paths on dyadic grids.
//!
//! A [`RoughPath`] stores the increment `w¹` and the second-level iterated
//! integral `w²` of every finest-grid segment; data over longer intervals is
//! assembled with the Chen identity `w²_{s,u} = w²_{s,t} + w²_{t,u} + w¹_{s,t} ⊗ w¹_{t,u}`.

use serde::Serialize;
use thiserror::Error;

use crate::skeleton::CMPath;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoughPathError {
    #[error("intervals [{0}, {1}] and [{2}, {3}] are not adjacent")]
    NonAdjacent(f64, f64, f64, f64),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("expected 2^k + 1 samples, got {0}")]
    NotDyadic(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Besov parameters (alpha = {alpha}, m = {m}) violate {reason}")]
    InvalidParams { alpha: f64, m: u32, reason: &'static str },
}

/// `(w¹_{s,t}, w²_{s,t})` for one interval; `level2` is `d × d` row-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalData {
    pub s: f64,
    pub t: f64,
    pub level1: Vec<f64>,
    pub level2: Vec<f64>,
}

impl IntervalData {
    /// The trivial element over `[s, s]`.
    pub fn identity(d: usize, s: f64) -> Self {
        Self { s, t: s, level1: vec![0.0; d], level2: vec![0.0; d * d] }
    }

    pub fn d(&self) -> usize {
        self.level1.len()
    }

    /// `sym(w²) − ½ w¹ ⊗ w¹`, max-norm; zero for geometric data.
    pub fn geometric_defect(&self) -> f64 {
        let d = self.d();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let sym = 0.5 * (self.level2[i * d + j] + self.level2[j * d + i]);
                worst = worst.max((sym - 0.5 * self.level1[i] * self.level1[j]).abs());
            }
        }
        worst
    }

    /// Lévy area entry `½(w²_{ij} − w²_{ji})`.
    pub fn area(&self, i: usize, j: usize) -> f64 {
        let d = self.d();
        0.5 * (self.level2[i * d + j] - self.level2[j * d + i])
    }

    fn extend_in_place(&mut self, b: &IntervalData) {
        let d = self.d();
        for i in 0..d {
            for j in 0..d {
                self.level2[i * d + j] += b.level2[i * d + j] + self.level1[i] * b.level1[j];
            }
        }
        for (x, y) in self.level1.iter_mut().zip(&b.level1) {
            *x += y;
        }
        self.t = b.t;
    }
}

/// Chen product of data over `[s, t]` and `[t, u]`.
pub fn chen_combine(a: &IntervalData, b: &IntervalData) -> Result<IntervalData, RoughPathError> {
    if a.t != b.s {
        return Err(RoughPathError::NonAdjacent(a.s, a.t, b.s, b.t));
    }
    if a.d() != b.d() {
        return Err(RoughPathError::DimensionMismatch { expected: a.d(), got: b.d() });
    }
    let mut out = a.clone();
    out.extend_in_place(b);
    Ok(out)
}

/// `(α, 4m)` Besov parameters with `1/3 < α < 1/2`, `α − 1/(4m) > 1/3` and
/// `4m(1/2 − α) > 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BesovParams {
    alpha: f64,
    m: u32,
}

impl BesovParams {
    pub fn new(alpha: f64, m: u32) -> Result<Self, RoughPathError> {
        let fourm = 4.0 * m as f64;
        if !(alpha > 1.0 / 3.0 && alpha < 0.5) {
            return Err(RoughPathError::InvalidParams { alpha, m, reason: "1/3 < alpha < 1/2" });
        }
        if m == 0 || !(alpha - 1.0 / fourm > 1.0 / 3.0) {
            return Err(RoughPathError::InvalidParams { alpha, m, reason: "alpha - 1/(4m) > 1/3" });
        }
        if !(fourm * (0.5 - alpha) > 1.0) {
            return Err(RoughPathError::InvalidParams { alpha, m, reason: "4m(1/2 - alpha) > 1" });
        }
        Ok(Self { alpha, m })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn m(&self) -> u32 {
        self.m
    }
}

impl Default for BesovParams {
    fn default() -> Self {
        Self::new(0.45, 8).expect("default parameters are valid")
    }
}

/// The two levels of a rough-path distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RoughDistance {
    pub level1: f64,
    pub level2: f64,
}

impl RoughDistance {
    /// `level1 + level2`.
    pub fn inhomogeneous(&self) -> f64 {
        self.level1 + self.level2
    }

    /// `level1 + level2^{1/2}`.
    pub fn homogeneous(&self) -> f64 {
        self.level1 + self.level2.sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoughPath {
    d: usize,
    grid: Vec<f64>,
    level1: Vec<Vec<f64>>,
    level2: Vec<Vec<f64>>,
}

fn dyadic_level(points: usize) -> Option<u32> {
    let segs = points.checked_sub(1)?;
    (segs.is_power_of_two()).then(|| segs.trailing_zeros())
}

fn uniform_grid(horizon: f64, segments: usize) -> Vec<f64> {
    (0..=segments).map(|i| horizon * i as f64 / segments as f64).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl RoughPath {
    /// The lift `L(w(k))` of the piecewise-linear path through `samples`
    /// (at `2^k + 1` equally spaced times on `[0, horizon]`). Each segment
    /// carries `w² = ½ Δ ⊗ Δ`.
    pub fn lift_piecewise_linear(samples: &[Vec<f64>], horizon: f64) -> Result<Self, RoughPathError> {
        dyadic_level(samples.len()).ok_or(RoughPathError::NotDyadic(samples.len()))?;
        let d = samples[0].len();
        if let Some(bad) = samples.iter().find(|s| s.len() != d) {
            return Err(RoughPathError::DimensionMismatch { expected: d, got: bad.len() });
        }
        let segs = samples.len() - 1;
        let mut level1 = Vec::with_capacity(segs);
        let mut level2 = Vec::with_capacity(segs);
        for w in samples.windows(2) {
            let inc: Vec<f64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
            level2.push(outer_half(&inc, &inc));
            level1.push(inc);
        }
        Ok(Self { d, grid: uniform_grid(horizon, segs), level1, level2 })
    }

    /// The zero rough path on `2^k` segments of `[0, horizon]`.
    pub fn zero(d: usize, k: u32, horizon: f64) -> Self {
        let segs = 1usize << k;
        Self { d, grid: uniform_grid(horizon, segs), level1: vec![vec![0.0; d]; segs], level2: vec![vec![0.0; d * d]; segs] }
    }

    /// Builds a rough path from per-segment data on a dyadic grid.
    pub fn from_segments(grid: Vec<f64>, level1: Vec<Vec<f64>>, level2: Vec<Vec<f64>>) -> Result<Self, RoughPathError> {
        dyadic_level(grid.len()).ok_or(RoughPathError::NotDyadic(grid.len()))?;
        let segs = grid.len() - 1;
        if level1.len() != segs || level2.len() != segs {
            return Err(RoughPathError::GridMismatch(format!("{segs} segments but {} / {} data rows", level1.len(), level2.len())));
        }
        let d = level1[0].len();
        for (a, b) in level1.iter().zip(&level2) {
            if a.len() != d || b.len() != d * d {
                return Err(RoughPathError::DimensionMismatch { expected: d, got: a.len() });
            }
        }
        Ok(Self { d, grid, level1, level2 })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn segments(&self) -> usize {
        self.level1.len()
    }

    /// Dyadic level k (`2^k` segments).
    pub fn level(&self) -> u32 {
        self.segments().trailing_zeros()
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("nonempty grid")
    }

    pub fn segment(&self, i: usize) -> IntervalData {
        IntervalData {
            s: self.grid[i],
            t: self.grid[i + 1],
            level1: self.level1[i].clone(),
            level2: self.level2[i].clone(),
        }
    }

    /// Data over `[grid[i], grid[j]]` by Chen from the finest segments.
    pub fn interval(&self, i: usize, j: usize) -> IntervalData {
        assert!(i <= j && j <= self.segments(), "interval indices out of range");
        let mut acc = IntervalData::identity(self.d, self.grid[i]);
        for k in i..j {
            acc.extend_in_place(&self.segment(k));
        }
        acc
    }

    /// Path values `w_{0,t}` at every grid time.
    pub fn path_values(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.grid.len());
        let mut x = vec![0.0; self.d];
        out.push(x.clone());
        for inc in &self.level1 {
            for (a, b) in x.iter_mut().zip(inc) {
                *a += b;
            }
            out.push(x.clone());
        }
        out
    }

    /// Largest geometric defect over the finest segments.
    pub fn geometric_defect(&self) -> f64 {
        (0..self.segments()).map(|i| self.segment(i).geometric_defect()).fold(0.0, f64::max)
    }

    /// Level-1 scaled by ε, level-2 by ε².
    pub fn dilate(&self, eps: f64) -> RoughPath {
        let eps2 = eps * eps;
        RoughPath {
            d: self.d,
            grid: self.grid.clone(),
            level1: self.level1.iter().map(|v| v.iter().map(|x| x * eps).collect()).collect(),
            level2: self.level2.iter().map(|v| v.iter().map(|x| x * eps2).collect()).collect(),
        }
    }

    /// Young translation by the path sampled at the grid times
    /// (`h_samples[0]` is ignored; only increments matter). Per segment,
    /// `w² += ½(Δh ⊗ Δw + Δw ⊗ Δh) + ½ Δh ⊗ Δh` and `w¹ += Δh`.
    pub fn young_translate_samples(&self, h_samples: &[Vec<f64>]) -> Result<RoughPath, RoughPathError> {
        if h_samples.len() != self.grid.len() {
            return Err(RoughPathError::GridMismatch(format!(
                "{} translation samples for {} grid points",
                h_samples.len(),
                self.grid.len()
            )));
        }
        let d = self.d;
        let mut level1 = Vec::with_capacity(self.segments());
        let mut level2 = Vec::with_capacity(self.segments());
        for (k, w) in h_samples.windows(2).enumerate() {
            if w[0].len() != d || w[1].len() != d {
                return Err(RoughPathError::DimensionMismatch { expected: d, got: w[1].len() });
            }
            let dh: Vec<f64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
            let dw = &self.level1[k];
            let mut l2 = self.level2[k].clone();
            for i in 0..d {
                for j in 0..d {
                    l2[i * d + j] += 0.5 * (dh[i] * dw[j] + dw[i] * dh[j]) + 0.5 * dh[i] * dh[j];
                }
            }
            level1.push(dw.iter().zip(&dh).map(|(a, b)| a + b).collect());
            level2.push(l2);
        }
        Ok(RoughPath { d, grid: self.grid.clone(), level1, level2 })
    }

    /// Young translation `τ_h` by a Cameron–Martin path on the same horizon.
    pub fn young_translate(&self, h: &CMPath) -> Result<RoughPath, RoughPathError> {
        if h.d() != self.d && !h.is_empty() {
            return Err(RoughPathError::DimensionMismatch { expected: self.d, got: h.d() });
        }
        if (h.horizon() - self.horizon()).abs() > 1e-12 * self.horizon().max(1.0) {
            return Err(RoughPathError::GridMismatch(format!(
                "translation horizon {} differs from {}",
                h.horizon(),
                self.horizon()
            )));
        }
        let samples: Vec<Vec<f64>> = self.grid.iter().map(|&t| h.value_at(t)).collect();
        self.young_translate_samples(&samples)
    }

    /// Merges adjacent segment pairs (level k → k − 1) by Chen.
    pub fn coarsen(&self) -> Option<RoughPath> {
        if self.segments() < 2 {
            return None;
        }
        let half = self.segments() / 2;
        let mut level1 = Vec::with_capacity(half);
        let mut level2 = Vec::with_capacity(half);
        for k in 0..half {
            let data = self.interval(2 * k, 2 * k + 2);
            level1.push(data.level1);
            level2.push(data.level2);
        }
        let grid = self.grid.iter().step_by(2).copied().collect();
        Some(RoughPath { d: self.d, grid, level1, level2 })
    }

    /// Splits every segment in two halves of equal increment, sharing the
    /// segment's area equally. Exact for lifts of piecewise-linear paths.
    pub fn refine(&self) -> RoughPath {
        let d = self.d;
        let mut grid = Vec::with_capacity(2 * self.segments() + 1);
        let mut level1 = Vec::with_capacity(2 * self.segments());
        let mut level2 = Vec::with_capacity(2 * self.segments());
        grid.push(self.grid[0]);
        for k in 0..self.segments() {
            let (a, b) = (self.grid[k], self.grid[k + 1]);
            grid.push(0.5 * (a + b));
            grid.push(b);
            let half: Vec<f64> = self.level1[k].iter().map(|x| 0.5 * x).collect();
            let seg = self.segment(k);
            let mut l2 = outer_half(&half, &half);
            for i in 0..d {
                for j in 0..d {
                    l2[i * d + j] += 0.5 * seg.area(i, j);
                }
            }
            level1.push(half.clone());
            level1.push(half);
            level2.push(l2.clone());
            level2.push(l2);
        }
        RoughPath { d, grid, level1, level2 }
    }

    fn check_compatible(&self, other: &RoughPath) -> Result<(), RoughPathError> {
        if self.d != other.d {
            return Err(RoughPathError::DimensionMismatch { expected: self.d, got: other.d });
        }
        if self.grid.len() != other.grid.len()
            || self.grid.iter().zip(&other.grid).any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
        {
            return Err(RoughPathError::GridMismatch(format!(
                "grids with {} and {} points differ",
                self.grid.len(),
                other.grid.len()
            )));
        }
        Ok(())
    }

    /// Visits `(s, t, |Δw¹|, |Δw²|)` for every grid pair `i < j`, where `Δ`
    /// is the difference between `self` and `other` over `[t_i, t_j]`.
    fn for_each_pair_diff(&self, other: &RoughPath, mut f: impl FnMut(usize, usize, f64, f64)) {
        let n = self.segments();
        for i in 0..n {
            let mut a = IntervalData::identity(self.d, self.grid[i]);
            let mut b = IntervalData::identity(self.d, self.grid[i]);
            let mut d1 = vec![0.0; self.d];
            let mut d2 = vec![0.0; self.d * self.d];
            for j in i + 1..=n {
                a.extend_in_place(&self.segment(j - 1));
                b.extend_in_place(&other.segment(j - 1));
                for (x, (p, q)) in d1.iter_mut().zip(a.level1.iter().zip(&b.level1)) {
                    *x = p - q;
                }
                for (x, (p, q)) in d2.iter_mut().zip(a.level2.iter().zip(&b.level2)) {
                    *x = p - q;
                }
                f(i, j, norm(&d1), norm(&d2));
            }
        }
    }
}

fn outer_half(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = a.len();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = 0.5 * a[i] * b[j];
        }
    }
    out
}

/// α-Hölder distance: `max |Δ¹|/|t−s|^α` and `max |Δ²|/|t−s|^{2α}` over all
/// grid pairs.
pub fn holder_dist(a: &RoughPath, b: &RoughPath, alpha: f64) -> Result<RoughDistance, RoughPathError> {
    a.check_compatible(b)?;
    let mut out = RoughDistance { level1: 0.0, level2: 0.0 };
    a.for_each_pair_diff(b, |i, j, d1, d2| {
        let dt = a.grid[j] - a.grid[i];
        out.level1 = out.level1.max(d1 / dt.powf(alpha));
        out.level2 = out.level2.max(d2 / dt.powf(2.0 * alpha));
    });
    Ok(out)
}

/// Discretised `(α, 4m)`-Besov distance
/// `(∬ |Δ¹|^{4m} / |t−s|^{1+4mα})^{1/4m}` and
/// `(∬ |Δ²|^{2m} / |t−s|^{1+4mα})^{1/2m}` over `0 ≤ s < t ≤ T`.
///
/// The double integral is a product trapezoidal rule on the grid nodes
/// restricted to `s < t`; the integrand vanishes on the diagonal for
/// piecewise-linear data, so diagonal nodes are dropped.
pub fn besov_dist(a: &RoughPath, b: &RoughPath, p: &BesovParams) -> Result<RoughDistance, RoughPathError> {
    a.check_compatible(b)?;
    let fourm = 4.0 * p.m as f64;
    let twom = 2 * p.m as i32;
    let expo = 1.0 + fourm * p.alpha;
    let n = a.segments();
    let weight = |i: usize| -> f64 {
        let left = if i > 0 { a.grid[i] - a.grid[i - 1] } else { 0.0 };
        let right = if i < n { a.grid[i + 1] - a.grid[i] } else { 0.0 };
        0.5 * (left + right)
    };
    let weights: Vec<f64> = (0..=n).map(weight).collect();
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    a.for_each_pair_diff(b, |i, j, d1, d2| {
        let dt = a.grid[j] - a.grid[i];
        let w = weights[i] * weights[j] / dt.powf(expo);
        s1 += w * d1.powi(2 * twom);
        s2 += w * d2.powi(twom);
    });
    Ok(RoughDistance { level1: s1.powf(1.0 / fourm), level2: s2.powf(1.0 / twom as f64) })
}

/// `‖w¹‖ + ‖w²‖^{1/2}` in the Besov norms, the radius used for the balls
/// `B̂_R`.
pub fn besov_homogeneous_norm(w: &RoughPath, p: &BesovParams) -> f64 {
    let zero = RoughPath { d: w.d, grid: w.grid.clone(), level1: vec![vec![0.0; w.d]; w.segments()], level2: vec![vec![0.0; w.d * w.d]; w.segments()] };
    besov_dist(w, &zero, p).expect("same grid").homogeneous()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(k: u32, rho: f64) -> RoughPath {
        let n = 1usize << k;
        let samples: Vec<Vec<f64>> = (0..=n)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                vec![rho * (th.cos() - 1.0), rho * th.sin()]
            })
            .collect();
        RoughPath::lift_piecewise_linear(&samples, 1.0).unwrap()
    }

    #[test]
    fn two_segment_area_is_half() {
        let rp = RoughPath::lift_piecewise_linear(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]], 1.0).unwrap();
        let whole = rp.interval(0, 2);
        assert_eq!(whole.area(0, 1), 0.5);
        assert_eq!(whole.level1, vec![1.0, 1.0]);
    }

    #[test]
    fn circle_area_converges() {
        let exact = std::f64::consts::PI;
        let err8 = (circle(8, 1.0).interval(0, 256).area(0, 1) - exact).abs();
        let err12 = (circle(12, 1.0).interval(0, 4096).area(0, 1) - exact).abs();
        assert!(err12 < err8 / 100.0);
        assert!(err12 / exact < 1e-6);
    }

    #[test]
    fn chen_rejects_gaps() {
        let a = IntervalData::identity(2, 0.0);
        let mut b = IntervalData::identity(2, 0.5);
        b.t = 1.0;
        assert!(chen_combine(&a, &b).is_err());
    }

    #[test]
    fn besov_params_validation() {
        assert!(BesovParams::new(0.4, 2).is_err());
        assert!(BesovParams::new(0.45, 8).is_ok());
        assert!(BesovParams::new(0.3, 8).is_err());
        assert!(BesovParams::new(0.49, 8).is_err());
    }

    #[test]
    fn refine_is_exact_for_lifts() {
        let coarse = circle(4, 0.7);
        let fine = coarse.refine();
        let samples: Vec<Vec<f64>> = fine.path_values();
        let relift = RoughPath::lift_piecewise_linear(&samples, 1.0).unwrap();
        for k in 0..fine.segments() {
            for (a, b) in fine.level2[k].iter().zip(&relift.level2[k]) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        assert!((fine.interval(0, 32).area(0, 1) - coarse.interval(0, 16).area(0, 1)).abs() < 1e-14);
    }
}
