use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. The CLI maps these onto its exit-code contract:
/// config/validation errors exit 2, I/O errors exit 3, everything numerical
/// exits 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid of size {grid_size} is too small for mode radius {radius} (need at least {needed})")]
    GridTooSmall {
        grid_size: usize,
        radius: usize,
        needed: usize,
    },

    #[error("reality symmetry violated: imaginary residue {residue:.3e} exceeds tolerance {tolerance:.3e}")]
    RealityViolation { residue: f64, tolerance: f64 },

    #[error("curvature is not strictly positive on the evaluation grid (min sample {min_sample:.6e})")]
    NonPositiveCurvature { min_sample: f64 },

    #[error("support spec violates convexity: min of h + h'' is {min_value:.6e}")]
    ConvexityViolation { min_value: f64 },

    #[error("step size underflow: proposed dt {dt:.3e} below dt_min {dt_min:.3e} at t = {t:.12e}")]
    StepUnderflow { dt: f64, dt_min: f64, t: f64 },

    #[error("max_steps = {max_steps} exceeded at t = {t:.12e}")]
    MaxStepsExceeded { max_steps: usize, t: f64 },

    #[error("insufficient trajectory tail: {found} usable samples, need at least {needed}")]
    InsufficientTail { found: usize, needed: usize },

    #[error("mode-0 coefficient is not monotone on the trajectory tail")]
    NonMonotoneTail,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time domain violation: {0}")]
    DomainViolation(String),

    #[error("sweep had {failed} failed cells out of {total}")]
    SweepPartialFailure { failed: usize, total: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Exit code for the CLI contract: 1 numerical, 2 config validation, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::DomainViolation(_) => 2,
            Error::Io(_) | Error::Json(_) => 3,
            _ => 1,
        }
    }

    /// Stable machine-readable error kind label.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::GridTooSmall { .. } => "grid_too_small",
            Error::RealityViolation { .. } => "reality_violation",
            Error::NonPositiveCurvature { .. } => "non_positive_curvature",
            Error::ConvexityViolation { .. } => "convexity_violation",
            Error::StepUnderflow { .. } => "step_underflow",
            Error::MaxStepsExceeded { .. } => "max_steps_exceeded",
            Error::InsufficientTail { .. } => "insufficient_tail",
            Error::NonMonotoneTail => "non_monotone_tail",
            Error::DegenerateFit(_) => "degenerate_fit",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::DomainViolation(_) => "domain_violation",
            Error::SweepPartialFailure { .. } => "sweep_partial_failure",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
