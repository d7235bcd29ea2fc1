use thiserror::Error;

use crate::liegroup::Frame;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not skew-symmetric (asymmetry {0:e})")]
    NotSkew(f64),
    #[error("4x4 matrix is not an element of se(3): bottom row deviates by {0:e}")]
    MalformedSe3(f64),
    #[error("rotation angle {0} is too close to pi for the principal logarithm")]
    NearPiRotation(f64),
    #[error("expected a {expected:?}-frame quantity, got {found:?}")]
    FrameMismatch { expected: Frame, found: Frame },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("Jacobian is singular or ill-conditioned (condition number {0:e})")]
    SingularJacobian(f64),
    #[error("integration blew up: joint speed {0:e}")]
    NumericalBlowup(f64),
    #[error("mass matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("inverse kinematics did not converge (residual {0:e})")]
    IkFailed(f64),
    #[error("non-finite policy input")]
    NonFiniteInput,
    #[error("training degenerated: {0}")]
    Degenerate(String),
    #[error("gradient mismatch at parameter {index}: analytic {analytic:e}, numeric {numeric:e} (rel {relative:e})")]
    GradientMismatch { index: usize, analytic: f64, numeric: f64, relative: f64 },
    #[error("unsupported schema version {found} (this build reads up to {supported})")]
    SchemaVersionMismatch { found: u32, supported: u32 },
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("expert success rate {rate:.1}% is below the {required:.0}% collection gate")]
    ExpertFailureRate { rate: f64, required: f64 },
    #[error("missing policy: {0}")]
    MissingPolicy(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
