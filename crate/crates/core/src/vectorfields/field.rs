use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use super::FieldError;

/// One monomial `x^exponents` with a coefficient vector in ℝⁿ.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub exponents: Vec<u32>,
    pub coeffs: Vec<f64>,
}

/// A polynomial vector field `V : ℝⁿ → ℝⁿ`.
///
/// Terms are kept sorted by exponent with duplicates merged and exact-zero
/// coefficient vectors removed, so two fields with the same polynomial have
/// the same representation.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    dim: usize,
    terms: Vec<Term>,
    sparse: Sparse,
}

/// Evaluation form of the terms: nonzero factors and outputs only, with the
/// Jacobian entries worked out once. Derived from `terms`.
#[derive(Clone, Debug, Default, PartialEq)]
struct Sparse {
    value: Vec<Entry>,
    jacobian: Vec<Entry>,
}

/// `weight · Π x_k^p` added into each `(index, coeff)` output.
#[derive(Clone, Debug, PartialEq)]
struct Entry {
    weight: f64,
    factors: Vec<(usize, u32)>,
    outputs: Vec<(usize, f64)>,
}

impl Entry {
    #[inline]
    fn factor(&self, x: &[f64]) -> f64 {
        let mut m = 1.0;
        for &(k, p) in &self.factors {
            m *= power(x[k], p);
        }
        m
    }
}

impl Sparse {
    fn new(dim: usize, terms: &[Term]) -> Self {
        let mut value = Vec::new();
        let mut jacobian = Vec::new();
        for t in terms {
            let outputs: Vec<(usize, f64)> =
                t.coeffs.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(i, c)| (i, *c)).collect();
            let factors = t.exponents.iter().enumerate().filter(|(_, e)| **e > 0).map(|(k, e)| (k, *e)).collect();
            value.push(Entry { weight: 1.0, factors, outputs: outputs.clone() });
            for (j, &e) in t.exponents.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let factors = t
                    .exponents
                    .iter()
                    .enumerate()
                    .map(|(k, &ek)| (k, if k == j { ek - 1 } else { ek }))
                    .filter(|(_, p)| *p > 0)
                    .collect();
                let outputs = outputs.iter().map(|&(c, v)| (c * dim + j, v)).collect();
                jacobian.push(Entry { weight: f64::from(e), factors, outputs });
            }
        }
        Self { value, jacobian }
    }
}

#[inline]
fn power(x: f64, p: u32) -> f64 {
    match p {
        1 => x,
        2 => x * x,
        _ => x.powi(p as i32),
    }
}

type TermMap = BTreeMap<Vec<u32>, Vec<f64>>;

impl VectorField {
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new(), sparse: Sparse::default() }
    }

    /// Constant field `x ↦ c`.
    pub fn constant(c: &[f64]) -> Self {
        let dim = c.len();
        Self::from_map(dim, BTreeMap::from([(vec![0; dim], c.to_vec())]))
    }

    /// Builds a field from `(exponents, coeffs)` pairs, merging repeated
    /// monomials.
    pub fn from_terms<I>(dim: usize, terms: I) -> Result<Self, FieldError>
    where
        I: IntoIterator<Item = (Vec<u32>, Vec<f64>)>,
    {
        let mut map = TermMap::new();
        for (exponents, coeffs) in terms {
            if exponents.len() != dim {
                return Err(FieldError::DimensionMismatch { expected: dim, got: exponents.len() });
            }
            if coeffs.len() != dim {
                return Err(FieldError::DimensionMismatch { expected: dim, got: coeffs.len() });
            }
            if coeffs.iter().any(|c| !c.is_finite()) {
                return Err(FieldError::NonFinite);
            }
            accumulate(&mut map, exponents, &coeffs, 1.0);
        }
        Ok(Self::from_map(dim, map))
    }

    fn from_map(dim: usize, map: TermMap) -> Self {
        let terms: Vec<Term> = map
            .into_iter()
            .filter(|(_, c)| c.iter().any(|&v| v != 0.0))
            .map(|(exponents, coeffs)| Term { exponents, coeffs })
            .collect();
        let sparse = Sparse::new(dim, &terms);
        Self { dim, terms, sparse }
    }

    fn to_map(&self) -> TermMap {
        self.terms.iter().map(|t| (t.exponents.clone(), t.coeffs.clone())).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// True when the field is identically zero.
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total polynomial degree (0 for constant and zero fields).
    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|t| t.exponents.iter().sum::<u32>()).max().unwrap_or(0)
    }

    /// Evaluates the field at `x` into `out`. Both slices must have length `n`.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        out.iter_mut().for_each(|o| *o = 0.0);
        self.eval_add(x, 1.0, out);
    }

    /// Adds `scale · V(x)` to `out`.
    #[inline]
    pub fn eval_add(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        for e in &self.sparse.value {
            let m = e.factor(x) * scale;
            for &(i, c) in &e.outputs {
                out[i] += m * c;
            }
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<DVector<f64>, FieldError> {
        self.check_dim(x.len())?;
        let mut out = DVector::zeros(self.dim);
        self.eval_into(x, out.as_mut_slice());
        Ok(out)
    }

    /// Jacobian `∂V_c/∂x_j` at `x`, written row-major into `out` (length n²).
    #[inline]
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.jacobian_add(x, 1.0, out);
    }

    /// Adds `scale · ∇V(x)` (row-major) to `out`.
    #[inline]
    pub fn jacobian_add(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        for e in &self.sparse.jacobian {
            let mut m = scale * e.weight;
            for &(k, p) in &e.factors {
                m *= power(x[k], p);
            }
            for &(i, c) in &e.outputs {
                out[i] += m * c;
            }
        }
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, FieldError> {
        self.check_dim(x.len())?;
        let mut buf = vec![0.0; self.dim * self.dim];
        self.jacobian_into(x, &mut buf);
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &buf))
    }

    pub(crate) fn check_dim(&self, got: usize) -> Result<(), FieldError> {
        if got == self.dim {
            Ok(())
        } else {
            Err(FieldError::DimensionMismatch { expected: self.dim, got })
        }
    }

    /// `∂V/∂x_j` as a polynomial field.
    pub fn partial(&self, j: usize) -> VectorField {
        let mut map = TermMap::new();
        for term in &self.terms {
            let e = term.exponents[j];
            if e == 0 {
                continue;
            }
            let mut exps = term.exponents.clone();
            exps[j] -= 1;
            accumulate(&mut map, exps, &term.coeffs, e as f64);
        }
        Self::from_map(self.dim, map)
    }

    /// The field `x ↦ ∇W(x) · V(x)` (derivative of `self = W` along `v`).
    pub fn derivative_along(&self, v: &VectorField) -> VectorField {
        let mut map = TermMap::new();
        for j in 0..self.dim {
            let dw = self.partial(j);
            if dw.is_zero() {
                continue;
            }
            for a in &dw.terms {
                for b in &v.terms {
                    let vj = b.coeffs[j];
                    if vj == 0.0 {
                        continue;
                    }
                    let exps: Vec<u32> = a.exponents.iter().zip(&b.exponents).map(|(x, y)| x + y).collect();
                    accumulate(&mut map, exps, &a.coeffs, vj);
                }
            }
        }
        Self::from_map(self.dim, map)
    }

    /// Coefficient-wise `self − other`.
    pub fn sub(&self, other: &VectorField) -> VectorField {
        let mut map = self.to_map();
        for t in &other.terms {
            accumulate(&mut map, t.exponents.clone(), &t.coeffs, -1.0);
        }
        Self::from_map(self.dim, map)
    }

    /// Coefficient-wise `self + other`.
    pub fn add(&self, other: &VectorField) -> VectorField {
        let mut map = self.to_map();
        for t in &other.terms {
            accumulate(&mut map, t.exponents.clone(), &t.coeffs, 1.0);
        }
        Self::from_map(self.dim, map)
    }

    pub fn scale(&self, s: f64) -> VectorField {
        let map = self
            .terms
            .iter()
            .map(|t| (t.exponents.clone(), t.coeffs.iter().map(|c| c * s).collect()))
            .collect();
        Self::from_map(self.dim, map)
    }

    /// Largest coefficient-wise difference to `other`.
    pub fn max_coeff_diff(&self, other: &VectorField) -> f64 {
        self.sub(other)
            .terms
            .iter()
            .flat_map(|t| t.coeffs.iter().map(|c| c.abs()))
            .fold(0.0, f64::max)
    }
}

/// Lie bracket `[V, W] = ∇W·V − ∇V·W`, computed exactly on the coefficients.
///
/// The two products are formed independently and subtracted monomial by
/// monomial, so `[W, V]` is the exact negation of `[V, W]`.
pub fn lie_bracket(v: &VectorField, w: &VectorField) -> Result<VectorField, FieldError> {
    if v.dim != w.dim {
        return Err(FieldError::DimensionMismatch { expected: v.dim, got: w.dim });
    }
    if v.is_zero() || w.is_zero() {
        return Ok(VectorField::zero(v.dim));
    }
    let a = w.derivative_along(v);
    let b = v.derivative_along(w);
    Ok(a.sub(&b))
}

fn accumulate(map: &mut TermMap, exponents: Vec<u32>, coeffs: &[f64], scale: f64) {
    let entry = map.entry(exponents).or_insert_with(|| vec![0.0; coeffs.len()]);
    for (e, c) in entry.iter_mut().zip(coeffs) {
        *e += scale * c;
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, t) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{:?}", t.coeffs)?;
            for (j, &e) in t.exponents.iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "·x{}", j + 1)?,
                    _ => write!(f, "·x{}^{}", j + 1, e)?,
                }
            }
        }
        Ok(())
    }
}
