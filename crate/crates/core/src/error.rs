use std::fmt;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed hostname {host:?}: {reason}")]
    Hostname { host: String, reason: &'static str },

    #[error("suffix rules: {0}")]
    SuffixRules(String),

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("invalid record {id:?}: {message}")]
    Record { id: String, message: String },

    #[error("corpus validation failed: {}", .0.join("; "))]
    Corpus(Vec<String>),

    #[error("knowledge base: {0}")]
    KnowledgeBase(String),

    #[error("unknown entity {0:?}")]
    UnknownEntity(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("empty market: {0}")]
    EmptyMarket(String),

    #[error("shares sum to {sum}, expected 1")]
    SharesSum { sum: f64 },

    #[error("level mismatch: {0}")]
    LevelMismatch(String),

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("pair ({web}, {mobile}): {message}")]
    Pair {
        web: String,
        mobile: String,
        message: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

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

    /// True for conditions that mean "the inputs were fine but nothing is left
    /// to measure", as opposed to malformed input.
    pub fn is_empty_result(&self) -> bool {
        matches!(self, Error::EmptyMarket(_))
    }
}

/// A non-fatal problem encountered while processing input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warning {
    pub context: String,
    pub message: String,
}

impl Warning {
    pub fn new(context: impl Into<String>, message: impl Into<String>) -> Self {
        Warning {
            context: context.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.context, self.message)
    }
}
