use serde::{Deserialize, Serialize};

use super::SkeletonError;

/// A Cameron–Martin path `h` with piecewise-constant derivative.
///
/// `slopes[k]` is `ḣ` on `[grid[k], grid[k+1])`; `h(0) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CMPathDoc", into = "CMPathDoc")]
pub struct CMPath {
    d: usize,
    grid: Vec<f64>,
    slopes: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CMPathDoc {
    grid: Vec<f64>,
    slopes: Vec<Vec<f64>>,
}

impl TryFrom<CMPathDoc> for CMPath {
    type Error = SkeletonError;

    fn try_from(doc: CMPathDoc) -> Result<Self, Self::Error> {
        CMPath::new(doc.grid, doc.slopes)
    }
}

impl From<CMPath> for CMPathDoc {
    fn from(h: CMPath) -> Self {
        CMPathDoc { grid: h.grid, slopes: h.slopes }
    }
}

impl CMPath {
    pub fn new(grid: Vec<f64>, slopes: Vec<Vec<f64>>) -> Result<Self, SkeletonError> {
        let d = slopes.first().map(Vec::len).unwrap_or(0);
        Self::with_dim(d, grid, slopes)
    }

    fn with_dim(d: usize, grid: Vec<f64>, slopes: Vec<Vec<f64>>) -> Result<Self, SkeletonError> {
        if grid.first() != Some(&0.0) {
            return Err(SkeletonError::InvalidPath("grid must start at 0".into()));
        }
        if grid.len() != slopes.len() + 1 {
            return Err(SkeletonError::InvalidPath(format!(
                "{} grid points need {} slope rows, got {}",
                grid.len(),
                grid.len() - 1,
                slopes.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(SkeletonError::InvalidPath("grid must be finite and strictly increasing".into()));
        }
        for (k, s) in slopes.iter().enumerate() {
            if s.len() != d {
                return Err(SkeletonError::InvalidPath(format!("slope row {k} has length {}, expected {d}", s.len())));
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(SkeletonError::InvalidPath(format!("slope row {k} is not finite")));
            }
        }
        Ok(Self { d, grid, slopes })
    }

    /// The path of length zero in ℝ^d.
    pub fn empty(d: usize) -> Self {
        Self { d, grid: vec![0.0], slopes: Vec::new() }
    }

    /// Zero control on a uniform grid.
    pub fn zero(d: usize, horizon: f64, segments: usize) -> Self {
        Self::uniform(horizon, vec![vec![0.0; d]; segments]).expect("valid zero path")
    }

    /// `K = slopes.len()` uniform segments on `[0, horizon]`.
    pub fn uniform(horizon: f64, slopes: Vec<Vec<f64>>) -> Result<Self, SkeletonError> {
        let k = slopes.len();
        if k == 0 {
            return Err(SkeletonError::InvalidPath("a uniform path needs at least one segment".into()));
        }
        if !(horizon > 0.0) {
            return Err(SkeletonError::InvalidPath("horizon must be positive".into()));
        }
        let grid = (0..=k).map(|i| horizon * i as f64 / k as f64).collect();
        Self::new(grid, slopes)
    }

    /// Straight line `t ↦ t·u / horizon` split into `segments` pieces.
    pub fn straight_line(endpoint: &[f64], horizon: f64, segments: usize) -> Self {
        let slope: Vec<f64> = endpoint.iter().map(|e| e / horizon).collect();
        Self::uniform(horizon, vec![slope; segments.max(1)]).expect("valid straight line")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn slopes(&self) -> &[Vec<f64>] {
        &self.slopes
    }

    pub fn segments(&self) -> usize {
        self.slopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slopes.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("grid is nonempty")
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.grid[k + 1] - self.grid[k]
    }

    /// `‖h‖²_H = Σ_k |ḣ_k|² Δt_k`.
    pub fn norm_sq(&self) -> f64 {
        self.slopes
            .iter()
            .enumerate()
            .map(|(k, s)| s.iter().map(|x| x * x).sum::<f64>() * self.dt(k))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `½‖h‖²_H`.
    pub fn energy(&self) -> f64 {
        0.5 * self.norm_sq()
    }

    /// `h(T)`.
    pub fn endpoint(&self) -> Vec<f64> {
        self.value_at(self.horizon())
    }

    /// `h(t)`, clamped to `[0, T]`.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (k, s) in self.slopes.iter().enumerate() {
            let a = self.grid[k];
            if t <= a {
                break;
            }
            let len = t.min(self.grid[k + 1]) - a;
            for (o, x) in out.iter_mut().zip(s) {
                *o += x * len;
            }
        }
        out
    }

    /// Index of the segment containing `t` (right-continuous; `T` maps to the
    /// last segment).
    pub fn segment_at(&self, t: f64) -> usize {
        let k = self.grid.partition_point(|&g| g <= t);
        k.saturating_sub(1).min(self.segments().saturating_sub(1))
    }

    /// `ḣ(t)`.
    pub fn slope_at(&self, t: f64) -> &[f64] {
        &self.slopes[self.segment_at(t)]
    }

    /// Reversal `h̄_t = h_{T−t} − h_T`, i.e. the derivative is `−ḣ_{T−t}`.
    pub fn reverse(&self) -> CMPath {
        let t = self.horizon();
        let grid: Vec<f64> = self.grid.iter().rev().map(|g| t - g).collect();
        let slopes = self.slopes.iter().rev().map(|s| s.iter().map(|x| -x).collect()).collect();
        let mut grid = grid;
        grid[0] = 0.0;
        *grid.last_mut().expect("nonempty") = t;
        CMPath { d: self.d, grid, slopes }
    }

    /// `h ∗ k`: run `h` on `[0, T]`, then `k` shifted to `[T, T + S]`.
    pub fn concat(&self, other: &CMPath) -> CMPath {
        if self.is_empty() {
            return other.clone();
        }
        if other.is_empty() {
            return self.clone();
        }
        assert_eq!(self.d, other.d, "concatenated paths must share their dimension");
        let t = self.horizon();
        let mut grid = self.grid.clone();
        grid.extend(other.grid[1..].iter().map(|g| t + g));
        let mut slopes = self.slopes.clone();
        slopes.extend(other.slopes.iter().cloned());
        CMPath { d: self.d, grid, slopes }
    }

    /// `𝒜h = h ∗ h̄`, an excursion that ends back at 0.
    pub fn excursion(&self) -> CMPath {
        self.concat(&self.reverse())
    }

    /// `t ↦ h(t / c)` on `[0, cT]`.
    pub fn time_scaled(&self, c: f64) -> CMPath {
        assert!(c > 0.0, "time scale must be positive");
        let grid = self.grid.iter().map(|g| g * c).collect();
        let slopes = self.slopes.iter().map(|s| s.iter().map(|x| x / c).collect()).collect();
        CMPath { d: self.d, grid, slopes }
    }

    /// Each segment split into `m` equal pieces.
    pub fn refined(&self, m: usize) -> CMPath {
        let m = m.max(1);
        let mut grid = vec![0.0];
        let mut slopes = Vec::with_capacity(self.segments() * m);
        for (k, s) in self.slopes.iter().enumerate() {
            let (a, b) = (self.grid[k], self.grid[k + 1]);
            for j in 1..=m {
                grid.push(if j == m { b } else { a + (b - a) * j as f64 / m as f64 });
                slopes.push(s.clone());
            }
        }
        CMPath { d: self.d, grid, slopes }
    }

    /// Both paths re-expressed on the union of their grids.
    pub fn common_refinement(&self, other: &CMPath) -> Result<(CMPath, CMPath), SkeletonError> {
        check_same_horizon(self, other)?;
        let mut grid: Vec<f64> = self.grid.iter().chain(&other.grid).copied().collect();
        grid.sort_by(f64::total_cmp);
        let scale = self.horizon().max(1.0);
        grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * scale);
        *grid.last_mut().expect("nonempty") = self.horizon();
        let on = |h: &CMPath| -> CMPath {
            let slopes = grid
                .windows(2)
                .map(|w| h.slope_at(0.5 * (w[0] + w[1])).to_vec())
                .collect();
            CMPath { d: h.d, grid: grid.clone(), slopes }
        };
        Ok((on(self), on(other)))
    }

    /// `self + s·other` on the common refinement of the grids.
    pub fn add_scaled(&self, other: &CMPath, s: f64) -> Result<CMPath, SkeletonError> {
        let (a, b) = self.common_refinement(other)?;
        let slopes = a
            .slopes
            .iter()
            .zip(&b.slopes)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + s * q).collect())
            .collect();
        Ok(CMPath { d: a.d, grid: a.grid, slopes })
    }

    /// `‖self − other‖_H`.
    pub fn distance(&self, other: &CMPath) -> Result<f64, SkeletonError> {
        Ok(self.add_scaled(other, -1.0)?.norm())
    }

    /// Maximum slope magnitude `max_k |ḣ_k|`.
    pub fn max_speed(&self) -> f64 {
        self.slopes
            .iter()
            .map(|s| s.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("paths serialize")
    }

    /// CSV with columns `t, h1..hd` at every grid time.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 1..=self.d {
            out.push_str(&format!(",h{i}"));
        }
        out.push('\n');
        let mut h = vec![0.0; self.d];
        for (k, &t) in self.grid.iter().enumerate() {
            if k > 0 {
                let dt = self.dt(k - 1);
                for (x, s) in h.iter_mut().zip(&self.slopes[k - 1]) {
                    *x += s * dt;
                }
            }
            out.push_str(&format!("{t}"));
            for x in &h {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
        out
    }
}

fn check_same_horizon(a: &CMPath, b: &CMPath) -> Result<(), SkeletonError> {
    if a.d != b.d && !(a.is_empty() || b.is_empty()) {
        return Err(SkeletonError::GridMismatch(format!("path dimensions {} and {} differ", a.d, b.d)));
    }
    let (ta, tb) = (a.horizon(), b.horizon());
    if (ta - tb).abs() > 1e-12 * ta.max(tb).max(1.0) {
        return Err(SkeletonError::GridMismatch(format!("horizons {ta} and {tb} differ")));
    }
    Ok(())
}
