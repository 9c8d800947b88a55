use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("transform is too close to singular: smallest singular value {sigma_min:.3e} < floor {floor:.3e}")]
    SingularTransform { sigma_min: f64, floor: f64 },

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("cost power r = 1 has no finite conjugate; only best_response handles it")]
    DegenerateDegree,

    #[error("agent utility is unbounded: dual norm {dual_norm:.6} exceeds 1")]
    UnboundedResponse { dual_norm: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("schedule infeasible: smoothing radius {delta:.6} is not below 1")]
    ScheduleInfeasible { delta: f64 },

    #[error("invalid schedule input: {0}")]
    InvalidSchedule(String),

    #[error(
        "strategic feedback at round {t} but smoothing radius is 0 (theta_hat below the realized strategic fraction)"
    )]
    ZeroSmoothingStrategicRound { t: usize },

    #[error("update called without a preceding propose")]
    MissingProposal,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric oracle did not converge within {steps} steps (residual {residual:.3e})")]
    NoConvergence { steps: usize, residual: f64 },

    #[error("grid oracle supports d <= 3, got d = {0}")]
    DimensionTooLarge(usize),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
