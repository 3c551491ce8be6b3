use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model evaluation failed: {0}")]
    Evaluation(String),

    #[error("non-finite entry in {which} at row {row}, column {col}")]
    NonFiniteJacobian { which: &'static str, row: usize, col: usize },

    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },

    #[error("window of {window} samples ending at t={t} reaches before the start of the trajectory")]
    WindowOutOfRange { t: usize, window: usize },

    #[error("singular value decomposition did not converge")]
    Svd,

    #[error("graph has no edges, modularity is undefined")]
    EmptyGraph,

    #[error("unestimable subsystem: {0}")]
    Unestimable(String),

    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("unknown model id `{0}`")]
    UnknownModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
