use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{quantity} = {value} is outside its domain ({constraint})")]
    Domain {
        quantity: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("the k = 0 mode is degenerate: it has no oscillator potential")]
    DegenerateMode,

    #[error("|Phi| = {amplitude:.3e} at z = {z} is below the node threshold {threshold:.3e}")]
    NodeProximity {
        z: Complex64,
        amplitude: f64,
        threshold: f64,
    },

    #[error("linear combination has zero norm")]
    ZeroNorm,

    #[error("incompatible states: {0}")]
    Incompatible(String),

    #[error("norm drift {drift:.3e} exceeds the limit {limit:.1e}")]
    NormDrift { drift: f64, limit: f64 },

    #[error("trajectory aborted at tau = {tau:.6e} after {} samples: {reason}", partial.len())]
    TrajectoryAborted {
        tau: f64,
        reason: String,
        /// (tau, z) samples reached before the abort.
        partial: Vec<(f64, Complex64)>,
    },

    #[error("not converged: {0}")]
    NonConvergence(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(quantity: &'static str, value: f64, constraint: &'static str) -> Error {
    Error::Domain {
        quantity,
        value,
        constraint,
    }
}
