use thiserror::Error;

#[derive(Error, Debug)]
pub enum CapquadError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("domain has no interior nodes at h = {h}")]
    EmptyOmega { h: f64 },

    #[error("weight exponent alpha = {alpha} must exceed -dim = {min}")]
    InvalidWeight { alpha: f64, min: f64 },

    #[error("radius {radius} outside resolved range [{min}, {max}]")]
    UnresolvedRadius { radius: f64, min: f64, max: f64 },

    #[error("cover parameter c = {c} outside (0, 1/2]")]
    InvalidCoverParam { c: f64 },

    #[error("cover leaves {count} resolved nodes uncovered after retry")]
    CoverageDefect { count: usize },

    #[error("probe set is empty or lies outside the domain")]
    EmptyProbeSet,

    #[error("unknown scenario '{name}'; known: {known}")]
    UnknownScenario { name: String, known: String },

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("solver failed to reach tolerance {tol} in {max_iter} iterations (residual {residual})")]
    SolverStalled { tol: f64, max_iter: usize, residual: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CapquadError>;
