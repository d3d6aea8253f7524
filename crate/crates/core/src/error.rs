use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate world: {0}")]
    DegenerateWorld(String),
    #[error("no visible landmarks")]
    NoVisibleLandmarks,
    #[error("already synthetic: view {0} has condition {1:?}")]
    AlreadySynthetic(u32, String),
    #[error("empty tuple set")]
    EmptyTupleSet,
    #[error("mismatched tuple family: {0}")]
    MismatchedTupleFamily(String),
    #[error("insufficient negatives: need {needed}, {eligible} eligible")]
    InsufficientNegatives { needed: usize, eligible: usize },
    #[error("invalid synthetic pair ({query}, {positive}) under prompt {prompt:?}")]
    InvalidSyntheticPair {
        query: u32,
        positive: u32,
        prompt: String,
    },
    #[error("missing variant of view {0} under prompt {1:?}")]
    MissingVariant(u32, String),
    #[error("missing view {0}")]
    MissingView(u32),
    #[error("diverged: non-finite loss at episode {0}")]
    Diverged(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("too few vectors: {got} for {clusters} clusters")]
    TooFewVectors { got: usize, clusters: usize },
    #[error("codebook mismatch: {0}")]
    CodebookMismatch(String),
    #[error("empty ranking")]
    EmptyRanking,
    #[error("insufficient correspondences: {0} < 6")]
    InsufficientCorrespondences(usize),
    #[error("no consensus: {inliers} inliers < {required}")]
    NoConsensus { inliers: usize, required: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("data error in {path}: {msg}")]
    Data { path: PathBuf, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn data(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for configuration problems, 3 for
    /// everything that went wrong with data or computation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}
