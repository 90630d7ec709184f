use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("density matrix trace is {trace}, expected 1")]
    NotUnitTrace { trace: f64 },

    #[error("matrix is not unitary (max |U†U - I| entry {deviation:e})")]
    NotUnitary { deviation: f64 },

    #[error("matrix has a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("operator list is trace increasing (max eigenvalue of sum A†A is {max_eigenvalue})")]
    TraceIncreasing { max_eigenvalue: f64 },

    #[error("preparation succeeds with probability {probability:e}, below the 1e-14 cut-off")]
    DegeneratePreparation { probability: f64 },

    #[error("basis Gram matrix is ill conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("tomography record is incomplete: expected {expected} entries, found {found}")]
    IncompleteRecord { expected: usize, found: usize },

    #[error("tomography record has degenerate preparations {entries:?}; supply a fallback basis")]
    DegenerateRecord { entries: Vec<(usize, usize)> },

    #[error("search failed: {0}")]
    SearchFailed(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
