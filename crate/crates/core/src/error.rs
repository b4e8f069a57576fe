use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix `{matrix}` is rank deficient: column {column} is linearly dependent on earlier columns")]
    RankDeficient { matrix: &'static str, column: usize },

    #[error("X^T X is ill-conditioned (condition number {condition:.3e} > {limit:.0e})")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("non-finite value in `{matrix}` at row {row}, column {col}")]
    NonFinite {
        matrix: &'static str,
        row: usize,
        col: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("number of latent factors k = {k} is out of range (need 1 <= k <= {max})")]
    InvalidK { k: usize, max: usize },

    #[error("residual matrix has no signal (all singular values are zero)")]
    DegenerateResponse,

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{count} of {total} replicates failed; first failure in replicate {first_rep}: {first_error}")]
    Experiment {
        count: usize,
        total: usize,
        first_rep: usize,
        first_error: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::RankDeficient { .. } => "rank_deficient",
            Error::IllConditioned { .. } => "ill_conditioned",
            Error::NonFinite { .. } => "non_finite",
            Error::Dimension(_) => "dimension",
            Error::InvalidK { .. } => "invalid_k",
            Error::DegenerateResponse => "degenerate_response",
            Error::Singular(_) => "singular",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Experiment { .. } => "experiment",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
