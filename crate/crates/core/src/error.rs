use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid rate field: {0}")]
    InvalidRate(String),
    #[error("invalid jump measure: {0}")]
    InvalidMeasure(String),
    /// Zero pivot during tridiagonal elimination; the shift is at or above
    /// the Dirichlet eigenvalue of the local operator.
    #[error("singular system: zero pivot at row {row} (lambda = {lambda})")]
    Singular { row: usize, lambda: f64 },
    #[error("discretization failure: {0}")]
    Discretization(String),
    #[error("out of domain: {0}")]
    OutOfDomain(String),
    #[error("outside the hypotheses of the large-gamma limit: {0}")]
    OutOfHypothesis(String),
    #[error("no root of the fixed-point residual in (0, {upper})")]
    NoRoot { upper: f64 },
    #[error("no convergence after {iterations} iterations: {detail}")]
    NonConvergence { iterations: usize, detail: String },
    #[error("rank-one correction broke down (1 - w.z = {0})")]
    RankOneBreakdown(f64),
    #[error("inverse iteration stagnated with oscillating estimates; complex pair suspected")]
    ComplexSuspected,
    #[error("at gamma = {gamma}: {source}")]
    AtGamma {
        gamma: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn at_gamma(self, gamma: f64) -> Self {
        Error::AtGamma {
            gamma,
            source: Box::new(self),
        }
    }

    /// Stable machine-readable tag used in CLI error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::InvalidRate(_) => "invalid-rate",
            Error::InvalidMeasure(_) => "invalid-measure",
            Error::Singular { .. } => "singular-system",
            Error::Discretization(_) => "discretization-failure",
            Error::OutOfDomain(_) => "out-of-domain",
            Error::OutOfHypothesis(_) => "out-of-hypothesis",
            Error::NoRoot { .. } => "no-root",
            Error::NonConvergence { .. } => "non-convergence",
            Error::RankOneBreakdown(_) => "rank-one-breakdown",
            Error::ComplexSuspected => "complex-suspected",
            Error::AtGamma { source, .. } => source.kind(),
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
