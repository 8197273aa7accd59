use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped so that a front end can map them onto the three
/// failure categories it reports: validation, numerical and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error in {what}: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fit failed: {0}")]
    Fit(#[from] FitError),

    #[error("ODE integration failed: {0}")]
    Ode(#[from] OdeError),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },

    #[error("column `{column}`: {msg}")]
    Column { column: String, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

/// Failure category used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            what,
            detail: detail.into(),
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Error::Domain { .. }
            | Error::Config(_)
            | Error::Parse { .. }
            | Error::Column { .. } => Category::Validation,
            Error::Fit(_) | Error::Ode(_) | Error::Quadrature(_) => Category::Numerical,
            Error::Io { .. } | Error::Serde(_) => Category::Io,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("rank deficient design: {0}")]
    RankDeficient(String),

    #[error("non-positive uncertainty at point {0}")]
    BadSigma(usize),

    #[error("parabola is not concave (K_el = {0})")]
    NonConcave(f64),

    #[error("parameter `{name}` at bound: {detail}")]
    AtBound { name: &'static str, detail: String },

    #[error("no convergence after {iterations} iterations (chi2 trace: {trace:?})")]
    NotConverged { iterations: usize, trace: Vec<f64> },

    #[error("model evaluation failed at the starting point")]
    BadStart,

    #[error("period not resolvable from the data span")]
    PeriodNotResolvable,

    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OdeError {
    #[error("singular coefficient near x = {0} (interval approaches x = R)")]
    SingularCoefficient(f64),

    #[error("step size underflow at x = {x} (h = {h})")]
    StepUnderflow { x: f64, h: f64 },

    #[error("step budget of {0} exhausted at x = {1}")]
    TooManySteps(usize, f64),

    #[error("x = {x} outside solution coverage [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },

    #[error("invalid interval: {0}")]
    Interval(String),

    #[error("right-hand side evaluation failed: {0}")]
    Rhs(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
