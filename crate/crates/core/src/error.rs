use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate perfectly-correlated process: stationary variance is zero")]
    DegenerateProcess,

    #[error("AMP diverged at inner iteration {iteration}")]
    AmpDiverged { iteration: usize },

    #[error("AMP diverged in frame {frame} during pass {pass} (inner iteration {iteration})")]
    EngineDiverged {
        frame: usize,
        pass: usize,
        iteration: usize,
    },

    #[error("alpha not identifiable from a single frame")]
    AlphaNotIdentifiable,

    #[error("rho not identifiable under perfect correlation")]
    RhoNotIdentifiable,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("exhaustive enumeration refused: N = {n} exceeds cap {cap} (2^N supports)")]
    EnumerationTooLarge { n: usize, cap: usize },

    #[error("field mismatch: {0}")]
    Field(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid instance format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
