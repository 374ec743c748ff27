use thiserror::Error;

use crate::game::GameError;
use crate::linalg::LinalgError;
use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("Hessian is singular: smallest singular value {min_sv:.3e}")]
    Singular { min_sv: f64 },
    #[error("metric is not positive definite")]
    NotPositiveDefinite,
    #[error("point outside the domain: {0}")]
    Domain(String),
    #[error("initial point is not feasible")]
    InfeasibleStart,
    #[error("angle undefined: {0} is zero")]
    UndefinedAngle(&'static str),
    #[error("covariance is rank deficient (smallest eigenvalue {min_eig:.3e})")]
    RankDeficientCovariance { min_eig: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
