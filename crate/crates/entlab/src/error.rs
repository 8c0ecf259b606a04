//! Error type shared across the laboratory.

use thiserror::Error;

/// Errors produced by solvers, checks, and the run driver.
#[derive(Debug, Error)]
pub enum Error {
    /// The requested computation has no exact route for this instance shape.
    #[error("unsupported instance: {0}")]
    UnsupportedInstance(String),

    /// Two measures that must share a support grid do not.
    #[error("atom mismatch: {0}")]
    AtomMismatch(String),

    /// Inconsistent spatial dimensions.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Weights fail positivity/normalization, or atoms are non-finite.
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    /// A scalar parameter is outside its admissible range.
    #[error("invalid parameter {name}: {value} ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// Iteration budget exhausted before the residual dropped below
    /// tolerance. Solvers with a trace attach it; scalar iterations pass None.
    #[error("not converged after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        iterations: u64,
        residual: f64,
        trace: Option<Box<crate::eot::SinkhornTrace>>,
    },

    /// A NaN or infinity appeared where a finite value is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Interpolation time too close to the horizon for stable evaluation.
    #[error("horizon too close: tau = {tau:.3e} < {min_tau:.3e}")]
    HorizonTooClose { tau: f64, min_tau: f64 },

    /// A run produced data unusable for its downstream fit.
    #[error("degenerate run: {0}")]
    DegenerateRun(String),

    /// Not enough usable points for a requested fit.
    #[error("insufficient data: need {needed}, have {have} ({context})")]
    InsufficientData {
        needed: usize,
        have: usize,
        context: String,
    },

    /// Config file parsed but violates the schema.
    #[error("config schema: {0}")]
    SchemaError(String),

    /// An artifact expected on disk is absent.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SchemaError(_) | Error::Json(_) | Error::InvalidParameter { .. } => 2,
            _ => 3,
        }
    }
}
