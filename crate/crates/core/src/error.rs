use thiserror::Error;

use crate::solver::Fit;

/// Errors raised across the filtering stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rational surrogate is not positive at x = {x}: P = {p}, Q = {q}")]
    Positivity { x: f64, p: f64, q: f64 },

    #[error("{variant} densities do not support {what}")]
    Unsupported { variant: &'static str, what: &'static str },

    #[error("invalid density parameters: {0}")]
    InvalidDensity(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("moment sequence is not strictly positive definite (leading minor {index} = {minor:e})")]
    Infeasible { index: usize, minor: f64 },

    #[error("solver stopped after {iterations} iterations with gradient residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64, best: Box<Fit> },

    #[error("objective evaluated outside the positive cone")]
    Domain,

    #[error("observation likelihood vanishes on the grid (normalizer {0:e})")]
    DegenerateLikelihood(f64),

    #[error("invalid system model: {0}")]
    Model(String),

    #[error("all particle weights are zero")]
    ParticleDegeneracy,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Short category tag used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Positivity { .. } | Error::Domain => "domain",
            Error::Unsupported { .. } => "capability",
            Error::InvalidDensity(_) | Error::InvalidGrid(_) | Error::Model(_) => "model",
            Error::Infeasible { .. } => "feasibility",
            Error::NotConverged { .. } => "convergence",
            Error::DegenerateLikelihood(_) | Error::ParticleDegeneracy => "degenerate",
            Error::Config(_) | Error::Json(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    /// Recovers the last iterate from a convergence failure.
    pub fn into_best_fit(self) -> Result<Fit> {
        match self {
            Error::NotConverged { best, .. } => Ok(*best),
            other => Err(other),
        }
    }
}
