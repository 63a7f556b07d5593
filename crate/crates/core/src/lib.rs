//! Computational tools for small-noise large deviations of hypoelliptic
//! diffusions driven by polynomial vector fields.
//!
//! The crate is organised bottom-up:
//!
//! * [`vectorfields`]: polynomial vector fields, exact Lie brackets, the
//!   strong Hörmander degree and the local constants used by the excitation
//!   construction.
//! * [`skeleton`]: Cameron–Martin controls, the controlled skeleton ODE with
//!   its Jacobian and inverse Jacobian, the Fréchet derivative of the endpoint
//!   map and the deterministic Malliavin covariance.
//! * [`excitation`]: pulse/excursion controls that restore a non-degenerate
//!   covariance without moving the endpoint.
//! * [`ratefn`]: minimal-energy controls for endpoint and projected-endpoint
//!   constraints (the rate functions).
//! * [`roughpath`]: level-2 geometric rough paths on dyadic grids, Hölder and
//!   Besov distances, Young translation and dilation.
//! * [`montecarlo`]: Wong–Zakai simulation of the scaled SDE, kernel density
//!   estimates of heat kernels, endpoint conditioning and small-noise checks.
//! * [`cli`]: the `hypoldp` command line front end.

// Guards such as `!(x > 0.0)` deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod excitation;
pub mod fixtures;
pub mod linalg;
pub mod montecarlo;
mod parallel;
pub mod ratefn;
pub mod roughpath;
pub mod skeleton;
pub mod vectorfields;

pub use error::{Error, Result};
pub use excitation::{ExcitationSchedule, NondegenerateCertificate};
pub use linalg::Projection;
pub use montecarlo::{HeatKernelEstimate, SimConfig};
pub use ratefn::{EndpointConstraint, OptimizerOptions, RateResult};
pub use roughpath::{BesovParams, RoughPath};
pub use skeleton::{CMPath, CovarianceReport, SkeletonTrajectory};
pub use vectorfields::{BracketWord, HormanderCertificate, VectorField, VectorFieldSystem};

/// Version string embedded in every artifact the CLI writes.
pub const ARTIFACT_VERSION: &str = concat!("hypoldp/", env!("CARGO_PKG_VERSION"));
