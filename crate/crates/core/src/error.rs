use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes: expected \"EMB1\"")]
    BadMagic,

    #[error("unsupported dtype code {0} (expected 1 = f32 or 2 = f64)")]
    BadDtype(u8),

    #[error("payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("payload has {0} trailing bytes after the declared matrix")]
    TrailingBytes(usize),

    #[error("sidecar lists {ids} ids but matrix has {rows} rows")]
    MetaMismatch { ids: usize, rows: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("duplicate stimulus id {0:?}")]
    DuplicateId(String),

    #[error("bad shape: {0}")]
    BadShape(String),

    #[error("id intersection is empty")]
    EmptyIntersection,

    #[error("insufficient variance: {0}")]
    InsufficientVariance(String),

    #[error("depth {depth} needs {needed} stimuli but only {available} are available")]
    TooDeep {
        depth: usize,
        needed: usize,
        available: usize,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("class index {class} out of range for {id:?}: {reason}")]
    ClassIndexOutOfRange {
        id: String,
        class: usize,
        reason: String,
    },

    #[error("degenerate row for stimulus {id:?}: {reason}")]
    DegenerateRow { id: String, reason: &'static str },

    #[error("constant vector: rank correlation undefined")]
    ConstantVector,

    #[error("stimulus ids of the two RDMs differ")]
    IdMismatch,

    #[error("{skipped} of {total} bootstrap replicates were degenerate (limit {limit})")]
    DegenerateReplicate {
        skipped: usize,
        total: usize,
        limit: usize,
    },

    #[error("no category assigned to concept {0:?}")]
    UnknownCategory(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("k = {k} exceeds the {available} available components")]
    KTooLarge { k: usize, available: usize },

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
