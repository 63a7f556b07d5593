//! The systems shipped with the crate (also as JSON under `fixtures/`).

use crate::vectorfields::{VectorField, VectorFieldSystem};

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 5] = ["elliptic", "heisenberg", "grushin", "engel", "counterexample"];

fn field(n: usize, terms: &[(&[u32], &[f64])]) -> VectorField {
    VectorField::from_terms(n, terms.iter().map(|(e, c)| (e.to_vec(), c.to_vec()))).expect("fixture fields are valid")
}

/// `Vᵢ = eᵢ` on ℝⁿ (d = n). Pinned Brownian motion.
pub fn elliptic(n: usize) -> VectorFieldSystem {
    let fields = (0..n)
        .map(|i| {
            let mut c = vec![0.0; n];
            c[i] = 1.0;
            VectorField::constant(&c)
        })
        .collect();
    VectorFieldSystem::driftless(fields).expect("valid system")
}

/// `V₁ = (1, 0, −x²/2)`, `V₂ = (0, 1, x¹/2)`; `[V₁, V₂] = e₃`.
pub fn heisenberg() -> VectorFieldSystem {
    let v1 = field(3, &[(&[0, 0, 0], &[1.0, 0.0, 0.0]), (&[0, 1, 0], &[0.0, 0.0, -0.5])]);
    let v2 = field(3, &[(&[0, 0, 0], &[0.0, 1.0, 0.0]), (&[1, 0, 0], &[0.0, 0.0, 0.5])]);
    VectorFieldSystem::driftless(vec![v1, v2]).expect("valid system")
}

/// `V₁ = ∂₁`, `V₂ = x¹∂₂`.
pub fn grushin() -> VectorFieldSystem {
    let v1 = field(2, &[(&[0, 0], &[1.0, 0.0])]);
    let v2 = field(2, &[(&[1, 0], &[0.0, 1.0])]);
    VectorFieldSystem::driftless(vec![v1, v2]).expect("valid system")
}

/// `V₁ = ∂₁`, `V₂ = x¹∂₂ + x²∂₃`; degree 3 at the origin.
pub fn engel() -> VectorFieldSystem {
    let v1 = field(3, &[(&[0, 0, 0], &[1.0, 0.0, 0.0])]);
    let v2 = field(3, &[(&[1, 0, 0], &[0.0, 1.0, 0.0]), (&[0, 1, 0], &[0.0, 0.0, 1.0])]);
    VectorFieldSystem::driftless(vec![v1, v2]).expect("valid system")
}

/// `V₁ = ∂₁` with drift `V₀ = x¹∂₂`: the endpoint of the scaled SDE is a
/// centred Gaussian with covariance `[[ε², ε⁴/2], [ε⁴/2, ε⁶/3]]`.
pub fn counterexample() -> VectorFieldSystem {
    let v1 = field(2, &[(&[0, 0], &[1.0, 0.0])]);
    let v0 = field(2, &[(&[1, 0], &[0.0, 1.0])]);
    VectorFieldSystem::new(vec![v1], v0).expect("valid system")
}

/// Fixture by name; `elliptic` is the two-dimensional one.
pub fn by_name(name: &str) -> Option<VectorFieldSystem> {
    match name {
        "elliptic" => Some(elliptic(2)),
        "heisenberg" => Some(heisenberg()),
        "grushin" => Some(grushin()),
        "engel" => Some(engel()),
        "counterexample" => Some(counterexample()),
        _ => None,
    }
}
