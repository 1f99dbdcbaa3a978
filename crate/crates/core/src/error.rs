use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A map was evaluated outside the set where it is defined, or returned
    /// a non-finite value.
    #[error("evaluation outside domain: {0}")]
    Domain(String),

    #[error("constraint matrix is rank deficient: expected rank {expected}, found {found}")]
    DegenerateConstraints { expected: usize, found: usize },

    #[error("metric is degenerate or ill-conditioned: {0}")]
    MetricDegenerate(String),

    #[error("regularity matrix is singular")]
    RegularityFailure,

    #[error("momentum is not in the constrained momentum space (residual {residual:e} > {tol:e})")]
    ConstraintViolation { residual: f64, tol: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("integration produced a non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
}

impl Error {
    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain(_))
    }
}
