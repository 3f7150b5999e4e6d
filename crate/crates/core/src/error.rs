use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: bad magic {found:?}, expected \"RSAM\"", path.display())]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{context}: shape mismatch, expected {expected}, found {found}")]
    ShapeMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("{context}: non-finite value at row {row}, column {col}")]
    NonFiniteData {
        context: String,
        row: usize,
        col: usize,
    },

    #[error("{context}: malformed data: {reason}")]
    Malformed { context: String, reason: String },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: every column is constant")]
    DegenerateInput,

    #[error("row count mismatch: {left} vs {right}")]
    MismatchedRows { left: usize, right: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("unknown language `{0}`")]
    UnknownLanguage(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("k = {k} exceeds the {available} available neighbors")]
    KTooLarge { k: usize, available: usize },

    #[error("mismatched datasets: {0}")]
    MismatchedDatasets(String),

    #[error("correlation undefined: `{0}` is constant")]
    ConstantVector(&'static str),

    #[error("node `{0}` has no positive affinity")]
    IsolatedNode(String),

    #[error("affinity graph has {components} connected components")]
    DisconnectedGraph { components: usize },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("pair ({a}, {b}): {source}")]
    Pair {
        a: String,
        b: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NumericalFailure(_) => true,
            Error::Pair { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn pair(a: &str, b: &str, source: Error) -> Self {
        Error::Pair {
            a: a.to_string(),
            b: b.to_string(),
            source: Box::new(source),
        }
    }
}
