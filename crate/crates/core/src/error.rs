use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("degenerate vector: {0}")]
    DegenerateVector(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("non-finite evaluation: {0}")]
    Evaluation(String),
    #[error("index {index} out of range for {len} entries")]
    Index { index: usize, len: usize },
    #[error("expected {expected} negatives, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot build trials: {0}")]
    TrialConstruction(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("phase mismatch: expected {expected}, got {got}")]
    PhaseMismatch { expected: String, got: String },
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("lookup failed: {0}")]
    Lookup(String),
    #[error("degenerate evaluation: {0}")]
    DegenerateEvaluation(String),
    #[error("missing prerequisite: {0}")]
    Dependency(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable class used by the command line front end.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::DegenerateVector(_) => "degenerate-vector",
            Error::EmptyInput(_) => "empty-input",
            Error::Evaluation(_) => "evaluation",
            Error::Index { .. } => "index",
            Error::Arity { .. } => "arity",
            Error::Config(_) => "config",
            Error::TrialConstruction(_) => "trial-construction",
            Error::Data(_) => "data",
            Error::PhaseMismatch { .. } => "phase-mismatch",
            Error::Sampling(_) => "sampling",
            Error::Lookup(_) => "lookup",
            Error::DegenerateEvaluation(_) => "degenerate-evaluation",
            Error::Dependency(_) => "dependency",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
