use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid dims {0:?}: every axis needs at least 2 vertices")]
    InvalidDims([usize; 3]),

    #[error("invalid domain: lo {lo:?} must be below hi {hi:?} on every axis")]
    InvalidDomain { lo: [f64; 3], hi: [f64; 3] },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("dims/payload-length mismatch: {0}")]
    PayloadMismatch(String),

    #[error("disconnected: {0}")]
    Disconnected(String),

    #[error("missing transform for edge ({0}, {1})")]
    MissingEdgeTransform(usize, usize),

    #[error("non-invertible transform (scale {0})")]
    NonInvertible(f64),

    #[error("unknown node {0}")]
    UnknownNode(usize),

    #[error("underdetermined: {0} pose pair(s), need at least 2")]
    Underdetermined(usize),

    #[error("degenerate pose configuration (stack rank {0} < 4)")]
    DegeneratePoses(usize),

    #[error("invalid scale {0}")]
    InvalidScale(f64),

    #[error("inconsistent pose pairs (rotation block residual {0:.3e})")]
    InconsistentPoses(f64),

    #[error("empty masks: no pixel is covered by both nodes")]
    EmptyMasks,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
        let path = path.into();
        move |source| Error::Json { path, source }
    }

    /// Tags an error with the pipeline stage (and edge/node) it came from.
    pub fn in_stage(self, stage: impl Into<String>) -> Error {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
