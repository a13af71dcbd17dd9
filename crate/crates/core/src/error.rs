use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("Cl2/BCl3 ratio undefined: bcl3_flow is zero")]
    RatioUndefined,

    #[error("range error: factor `{factor}` scaled to {value}")]
    Range { factor: String, value: f64 },

    #[error("segmentation failed: {0}")]
    Segmentation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("missing data: wafer `{wafer}` has no channel `{channel}`")]
    MissingData { wafer: String, channel: String },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("collinear design matrix (condition estimate {condition:e})")]
    Collinearity { condition: f64 },

    #[error("degenerate target: response has zero variance")]
    DegenerateTarget,

    #[error("NIPALS did not converge for component {component}")]
    Convergence { component: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("unknown key `{key}`; valid: {valid}")]
    Key { key: String, valid: String },

    #[error("insufficient redundancy: {0} estimate(s), need at least 2")]
    InsufficientRedundancy(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("unsupported bundle version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than usage or config.
    pub fn is_data_error(&self) -> bool {
        !matches!(
            self,
            Error::Config(_) | Error::Key { .. } | Error::Precondition(_)
        )
    }
}
