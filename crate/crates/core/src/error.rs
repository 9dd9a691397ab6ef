use thiserror::Error;

/// Errors raised anywhere in the estimation toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("singular matrix: pivot {pivot:e} below threshold {threshold:e}")]
    SingularMatrix { pivot: f64, threshold: f64 },
    #[error("non-finite update")]
    NonFiniteUpdate,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("step {step}: {source}")]
    StepFailed { step: usize, source: Box<Error> },
    #[error("empty series")]
    EmptySeries,
    #[error("integrand is not finite at {at}")]
    NonFiniteIntegrand { at: f64 },
    #[error("adaptive quadrature exceeded maximum depth {0}")]
    MaxDepthExceeded(usize),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("degenerate normalizer: {value:e}")]
    DegenerateNormalizer { value: f64 },
    #[error("C_g must be positive, got {0}")]
    NonPositiveCg(f64),
    #[error("scale estimate is zero")]
    ZeroScale,
    #[error("trajectories are on different time grids")]
    GridMismatch,
    #[error("insufficient samples: {found} < {required}")]
    InsufficientSamples { found: usize, required: usize },
    #[error("{failed} of {total} replications failed")]
    ReplicationFailures { failed: usize, total: usize },
    #[error("linear statistic closed form and recursion disagree by {0:e}")]
    InconsistentLinearStatistic(f64),
}

impl Error {
    /// Strips any `StepFailed` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::StepFailed { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the numerical recursion itself.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::SingularMatrix { .. }
                | Error::NonFiniteUpdate
                | Error::DegenerateNormalizer { .. }
                | Error::NonFiniteIntegrand { .. }
                | Error::MaxDepthExceeded(_)
                | Error::ZeroScale
                | Error::NonPositiveCg(_)
                | Error::InconsistentLinearStatistic(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
