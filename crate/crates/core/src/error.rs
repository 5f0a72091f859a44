use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid power allocation: {0}")]
    InvalidAllocation(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("argument must be positive, got {0}")]
    NonPositiveArgument(f64),

    #[error("deployment has no base stations")]
    NoBaseStations,

    #[error("expected point count {expected:.3e} exceeds the limit of {limit:.0e}")]
    DeploymentTooLarge { expected: f64, limit: f64 },

    #[error("integral diverges: {0}")]
    Divergent(String),

    #[error(transparent)]
    Quadrature(#[from] crate::quadrature::QuadratureError),

    #[error("typical cell never had {needed} users after {attempts} redraws")]
    RetryBudgetExhausted { needed: usize, attempts: usize },

    #[error("feasible power allocation region is empty: {0}")]
    EmptyFeasibleRegion(String),

    #[error("experiment spec: {0}")]
    Spec(String),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
