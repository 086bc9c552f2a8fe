use thiserror::Error;

/// Errors produced by construction, factorization, solve and the harness.
#[derive(Debug, Error)]
pub enum H2Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("factorization failed: singular redundant block of cluster {cluster} at level {level}")]
    FactorizationFailure { cluster: usize, level: usize },

    #[error("matrix is singular to working precision")]
    Singular,

    #[error("oracle size cap exceeded: n = {n} > cap = {cap}")]
    OracleCapExceeded { n: usize, cap: usize },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<H2Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl H2Error {
    pub fn in_stage(self, stage: &'static str) -> H2Error {
        H2Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, H2Error>;
