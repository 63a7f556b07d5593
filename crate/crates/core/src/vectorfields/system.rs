use std::path::Path;

use serde::{Deserialize, Serialize};

use super::field::VectorField;
use super::FieldError;

/// Driving fields `V_1..V_d` and drift `V_0` on ℝⁿ.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorFieldSystem {
    n: usize,
    fields: Vec<VectorField>,
    drift: VectorField,
}

impl VectorFieldSystem {
    pub fn new(fields: Vec<VectorField>, drift: VectorField) -> Result<Self, FieldError> {
        let n = drift.dim();
        if fields.is_empty() {
            return Err(FieldError::InvalidSystem {
                path: "fields".into(),
                message: "at least one driving field is required".into(),
            });
        }
        for (i, f) in fields.iter().enumerate() {
            if f.dim() != n {
                return Err(FieldError::InvalidSystem {
                    path: format!("fields[{i}]"),
                    message: format!("field has dimension {}, drift has {n}", f.dim()),
                });
            }
        }
        Ok(Self { n, fields, drift })
    }

    /// System without drift.
    pub fn driftless(fields: Vec<VectorField>) -> Result<Self, FieldError> {
        let n = fields.first().map(VectorField::dim).unwrap_or(0);
        Self::new(fields, VectorField::zero(n))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.fields.len()
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn field(&self, i: usize) -> &VectorField {
        &self.fields[i]
    }

    pub fn drift(&self) -> &VectorField {
        &self.drift
    }

    /// The system on ℝ^{n+m} driving `(x, y)` by `(Vᵢ(x), Aᵢ(y))`, with
    /// drifts stacked likewise. Both systems need the same `d`.
    pub fn stack(&self, other: &VectorFieldSystem) -> Result<Self, FieldError> {
        if self.d() != other.d() {
            return Err(FieldError::DimensionMismatch { expected: self.d(), got: other.d() });
        }
        let (n, m) = (self.n, other.n);
        let embed = |f: &VectorField, offset: usize| {
            VectorField::from_terms(
                n + m,
                f.terms().iter().map(|t| {
                    let mut e = vec![0; n + m];
                    e[offset..offset + f.dim()].copy_from_slice(&t.exponents);
                    let mut c = vec![0.0; n + m];
                    c[offset..offset + f.dim()].copy_from_slice(&t.coeffs);
                    (e, c)
                }),
            )
        };
        let fields = self
            .fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| Ok(embed(a, 0)?.add(&embed(b, n)?)))
            .collect::<Result<Vec<_>, FieldError>>()?;
        let drift = embed(&self.drift, 0)?.add(&embed(&other.drift, n)?);
        Self::new(fields, drift)
    }

    /// `Σᵢ uᵢ Vᵢ(x)` written into `out`.
    #[inline]
    pub fn controlled_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (f, &ui) in self.fields.iter().zip(u) {
            if ui != 0.0 {
                f.eval_add(x, ui, out);
            }
        }
    }

    /// `Σᵢ uᵢ ∇Vᵢ(x)` (row-major n×n) written into `out`.
    #[inline]
    pub fn controlled_jacobian_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (f, &ui) in self.fields.iter().zip(u) {
            if ui != 0.0 {
                f.jacobian_add(x, ui, out);
            }
        }
    }

    /// Parses the JSON system document. Errors carry the path of the
    /// offending field, e.g. `fields[1].terms[0].coeffs`.
    pub fn from_json_str(s: &str) -> Result<Self, FieldError> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let doc: SystemDoc = serde_path_to_error::deserialize(de).map_err(|e| FieldError::InvalidSystem {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        doc.into_system()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, FieldError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FieldError::InvalidSystem {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let doc = SystemDoc {
            n: self.n,
            d: self.d(),
            fields: self.fields.iter().map(FieldDoc::from_field).collect(),
            drift: Some(FieldDoc::from_field(&self.drift)),
        };
        serde_json::to_string_pretty(&doc).expect("system document serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemDoc {
    n: usize,
    d: usize,
    fields: Vec<FieldDoc>,
    #[serde(default)]
    drift: Option<FieldDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldDoc {
    terms: Vec<TermDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermDoc {
    exponents: Vec<u32>,
    coeffs: Vec<f64>,
}

impl FieldDoc {
    fn from_field(f: &VectorField) -> Self {
        Self {
            terms: f
                .terms()
                .iter()
                .map(|t| TermDoc { exponents: t.exponents.clone(), coeffs: t.coeffs.clone() })
                .collect(),
        }
    }

    fn into_field(self, n: usize, path: &str) -> Result<VectorField, FieldError> {
        for (k, t) in self.terms.iter().enumerate() {
            if t.exponents.len() != n {
                return Err(FieldError::InvalidSystem {
                    path: format!("{path}.terms[{k}].exponents"),
                    message: format!("expected {n} exponents, found {}", t.exponents.len()),
                });
            }
            if t.coeffs.len() != n {
                return Err(FieldError::InvalidSystem {
                    path: format!("{path}.terms[{k}].coeffs"),
                    message: format!("expected {n} coefficients, found {}", t.coeffs.len()),
                });
            }
        }
        VectorField::from_terms(n, self.terms.into_iter().map(|t| (t.exponents, t.coeffs)))
            .map_err(|e| FieldError::InvalidSystem { path: path.to_string(), message: e.to_string() })
    }
}

impl SystemDoc {
    fn into_system(self) -> Result<VectorFieldSystem, FieldError> {
        if self.n == 0 {
            return Err(FieldError::InvalidSystem { path: "n".into(), message: "n must be positive".into() });
        }
        if self.fields.len() != self.d {
            return Err(FieldError::InvalidSystem {
                path: "fields".into(),
                message: format!("d = {} but {} fields given", self.d, self.fields.len()),
            });
        }
        let n = self.n;
        let fields = self
            .fields
            .into_iter()
            .enumerate()
            .map(|(i, f)| f.into_field(n, &format!("fields[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let drift = match self.drift {
            Some(f) => f.into_field(n, "drift")?,
            None => VectorField::zero(n),
        };
        VectorFieldSystem::new(fields, drift)
    }
}
