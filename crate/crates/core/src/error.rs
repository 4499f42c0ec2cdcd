use thiserror::Error;

/// Errors raised by the models, solvers and estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A temperature-dependent property left its validity range.
    #[error("property evaluation failed at node {node}: {message}")]
    Evaluation { node: usize, message: String },

    #[error("time integration failed at tau = {tau:.6e}: {message}")]
    Solver { tau: f64, message: String },

    #[error("DuFort-Frankel solution diverged at step {step}: {message}")]
    Divergence { step: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("unidentifiable parameter: {0}")]
    Unidentifiable(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("approximation error model build failed: {0}")]
    AemBuild(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Evaluation { .. }
                | Error::Solver { .. }
                | Error::Divergence { .. }
                | Error::Unidentifiable(_)
                | Error::UndefinedCorrelation(_)
                | Error::AemBuild(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
