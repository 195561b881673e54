use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConeError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("density blows up: eps = 0 and |z|^2 = 0")]
    Singularity,

    #[error("N too small: omega_eps density {value:.3e} at node {node} (sigma = {sigma:.6e})")]
    NTooSmall { node: usize, sigma: f64, value: f64 },

    #[error("delta too large: Donaldson density {value:.3e} at node {node}")]
    DeltaTooLarge { node: usize, value: f64 },

    #[error("nonpositive density {value:.3e} at node {node}")]
    NonPositiveDensity { node: usize, value: f64 },

    #[error("quadrature failed to converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("right-hand side has total mass {mass:.12} instead of 1")]
    Normalization { mass: f64 },

    #[error("infeasible: resulting density {value:.3e} at node {node}")]
    Infeasible { node: usize, value: f64 },

    #[error("step failed at t = {t}: {reason} (suggested dt = {suggested_dt:e})")]
    StepFailed { t: f64, reason: String, suggested_dt: f64 },

    #[error("Kähler-cone violation at t = {t}, node {node}: density {value:.3e}")]
    KahlerViolation { t: f64, node: usize, value: f64 },

    #[error("maximum principle violated at t = {t}: {detail}")]
    MaximumPrinciple { t: f64, detail: String },

    #[error("internal consistency: {0}")]
    Consistency(String),

    #[error("eigen-solver failed: {0}")]
    Eigen(String),

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl ConeError {
    pub fn domain(msg: impl Into<String>) -> Self {
        ConeError::Domain(msg.into())
    }
}

impl From<std::io::Error> for ConeError {
    fn from(e: std::io::Error) -> Self {
        ConeError::Io(e.to_string())
    }
}

impl From<csv::Error> for ConeError {
    fn from(e: csv::Error) -> Self {
        ConeError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for ConeError {
    fn from(e: serde_json::Error) -> Self {
        ConeError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ConeError>;
