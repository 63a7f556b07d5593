use thiserror::Error;

use crate::excitation::ExcitationError;
use crate::montecarlo::MonteCarloError;
use crate::ratefn::RateError;
use crate::roughpath::RoughPathError;
use crate::skeleton::SkeletonError;
use crate::vectorfields::FieldError;

/// Crate-wide error, mostly a sum of the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Excitation(#[from] ExcitationError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    RoughPath(#[from] RoughPathError),
    #[error(transparent)]
    MonteCarlo(#[from] MonteCarloError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
