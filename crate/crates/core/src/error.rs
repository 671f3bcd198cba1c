use thiserror::Error;

use crate::expr::ExprError;
use crate::jets::JetError;

/// Errors raised by the geometry layers (structures, connections, curves,
/// maps and the jet space).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("point lies on the zero section (|s| = {norm:e})")]
    ZeroSection { norm: f64 },
    #[error("pushed fiber vector lies on the target zero section (|y| = {norm:e})")]
    TargetZeroSection { norm: f64 },
    #[error("coordinate {coord} = {value} is outside the structure domain [{lo}, {hi}]")]
    OutsideDomain { coord: usize, value: f64, lo: f64, hi: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("metric is singular (condition number {condition:e})")]
    SingularMetric { condition: f64 },
    #[error("metric is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("spray formulas disagree (relative residual {residual:e})")]
    SprayMismatch { residual: f64 },
    #[error("cross-check '{what}' failed (relative residual {residual:e})")]
    CrossCheckFailure { what: String, residual: f64 },
    #[error("unsupported tensor field '{0}'")]
    UnsupportedVariance(String),
    #[error("initial velocity is zero")]
    ZeroVelocity,
    #[error("velocity collapsed to the zero section at time {time}")]
    ZeroVelocityEncountered { time: f64 },
    #[error("step size underflow at time {time} (h = {step:e})")]
    StepSizeUnderflow { time: f64, step: f64 },
    #[error("Jacobian is singular (smallest singular value {sigma_min:e})")]
    SingularJacobian { sigma_min: f64 },
    #[error("invalid structure: {0}")]
    InvalidStructure(String),
}

impl GeometryError {
    /// Maps a singular-matrix failure of the series inverse onto the metric variant.
    pub(crate) fn from_metric_inverse(e: JetError) -> GeometryError {
        match e {
            JetError::SingularMatrix { condition } => GeometryError::SingularMetric { condition },
            other => GeometryError::Jet(other),
        }
    }
}

pub type GeometryResult<T> = Result<T, GeometryError>;
