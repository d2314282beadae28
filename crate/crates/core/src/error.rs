use thiserror::Error;

/// Errors raised by the estimation and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value in input `{0}`")]
    NonFiniteInput(&'static str),
    #[error("linear system is singular (rank {rank} < {cols})")]
    SingularSystem { rank: usize, cols: usize },
    #[error("matrix is rank deficient: smallest singular value {smallest:e} vs largest {largest:e}")]
    RankDeficient { smallest: f64, largest: f64 },
    #[error("iteration limit of {0} reached")]
    IterationLimit(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degree {degree} out of range for {n} agents")]
    DegreeOutOfRange { degree: usize, n: usize },
    #[error("state blew up in trajectory {trajectory} at step {step}")]
    NonFiniteState { trajectory: usize, step: usize },
    #[error("kernel coefficient vector is zero")]
    ZeroCoefficient,
    #[error("every row of the weight estimate is degenerate")]
    AllRowsDegenerate,
    #[error("loss evaluated to a non-finite value")]
    NonFiniteLoss,
    #[error("all operator-regression estimates are zero")]
    AllZero,
    #[error("empirical measure has no samples")]
    EmptyMeasure,
    #[error("denominator {0:e} is too small")]
    DegenerateDenominator(f64),
    #[error("true kernel has zero norm")]
    ZeroTrueKernel,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no leaders could be separated from followers")]
    NoLeaders,
    #[error("type matrix lost rank during orthonormalization")]
    RankDeficientV,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
