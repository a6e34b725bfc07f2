use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical blow-up at time step {step}: non-finite value")]
    Blowup { step: usize },

    #[error("region not properly illuminated: delta = {delta:e} < {minimum:e} (worst cell {cell})")]
    Illumination { delta: f64, minimum: f64, cell: usize },

    #[error("assembly failed: {flagged} of {rows} rows did not converge (allowed fraction {allowed})")]
    Assembly { flagged: usize, rows: usize, allowed: f64 },

    #[error("system is singular to working precision (condition estimate {condition:e})")]
    Solvability { condition: f64 },

    #[error("outer iteration diverged after {iterations} iterations (misfit {misfit:e})")]
    Divergence { iterations: usize, misfit: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { key: key.into(), reason: reason.into() }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
