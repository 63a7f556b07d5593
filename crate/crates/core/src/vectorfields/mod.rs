//! Polynomial vector fields, exact Lie brackets, the strong Hörmander degree
//! and the local constants λ, r, T, M, L around a point.
//!
//! Brackets use the convention `[V, W] = ∇W·V − ∇V·W`. Either sign gives the
//! same spans, so nothing downstream depends on the choice.

mod brackets;
mod field;
mod hormander;
mod system;

use thiserror::Error;

pub use brackets::{bracket_sets, BracketEntry, BracketSets, BracketWord};
pub use field::{lie_bracket, Term, VectorField};
pub use hormander::{
    estimate_constants, estimate_lambda, hormander_degree, span_rank, HormanderCertificate, HormanderOptions,
    LocalConstants, DEFAULT_KMAX, DEFAULT_RANK_TOL,
};
pub use system::VectorFieldSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite coefficient in vector field")]
    NonFinite,
    #[error("invalid system at `{path}`: {message}")]
    InvalidSystem { path: String, message: String },
    #[error("brackets up to degree {cap} span only rank {rank} of {n}; Hörmander condition not verified")]
    DegreeCapExceeded { cap: usize, rank: usize, n: usize },
    #[error("frame selection found only {found} of {n} independent bracket values")]
    FrameSelection { found: usize, n: usize },
    #[error("certificate has no local constants; call estimate_constants first")]
    MissingConstants,
}
