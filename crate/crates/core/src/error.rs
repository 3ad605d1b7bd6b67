use thiserror::Error;

pub type Result<T> = std::result::Result<T, SemiPdeError>;

#[derive(Debug, Error)]
pub enum SemiPdeError {
    #[error("point (t={t}, x={x:?}) lies outside the space-time box")]
    PointOutsideDomain { t: f64, x: Vec<f64> },

    #[error("trajectory diverged (non-finite state at step {step})")]
    Diverged { step: usize },

    #[error("time step {dt:.3e} exceeds the stability bound {bound:.3e}")]
    UnstableConfig { dt: f64, bound: f64 },

    #[error("every step-size reduction diverged at epoch {epoch}")]
    AllStepsDiverged { epoch: usize },

    #[error("invalid data split: {0}")]
    InvalidSplit(String),

    #[error("partition `{0}` is empty")]
    EmptyPartition(&'static str),

    #[error("matrix is singular or ill-conditioned (condition number {condition:.3e})")]
    SingularMatrix { condition: f64 },

    #[error("reference solve of the true model diverged")]
    ReferenceSolveDiverged,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SemiPdeError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, SemiPdeError::Diverged { .. })
    }
}
