use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(
        "could not draw a stable network after {attempts} attempts \
         (p={p}, m={m}, max_order={max_order}, density={density}, coeff_scale={coeff_scale})"
    )]
    GenerationFailed {
        attempts: usize,
        p: usize,
        m: usize,
        max_order: usize,
        density: f64,
        coeff_scale: f64,
    },

    #[error("simulation diverged at t={time}, node {node}: |y| = {value:e}")]
    Unstable { time: usize, node: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("regression layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("ADMM diverged: {0}; try rescaling rho")]
    Divergence(String),

    #[error("dictionary entry {entry} ('{label}') at regression row {row}: {reason}")]
    Evaluation {
        entry: usize,
        label: String,
        row: usize,
        reason: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("expression error at offset {offset}: {message}")]
    Expression { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
