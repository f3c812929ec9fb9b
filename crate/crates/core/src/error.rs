use thiserror::Error;

use crate::model::{FactorState, FitReport};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, found {found}")]
    DimensionMismatch {
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("invalid hyperparameter {name} = {value}: {reason}")]
    InvalidHyperParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate observation for question {question}, learner {learner}")]
    DuplicateEntry { question: usize, learner: usize },

    #[error("infeasible factor state: {0}")]
    Infeasible(String),

    #[error("non-finite gradient at inner iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("objective became non-finite during outer iteration {iteration} ({block} step)")]
    Diverged {
        iteration: usize,
        block: &'static str,
        last_finite: Box<(FactorState, FitReport)>,
    },

    #[error("empty vocabulary after stop-word and frequency filtering")]
    EmptyVocabulary,

    #[error("no observed responses")]
    NoObservations,

    #[error("empty test set")]
    EmptyTestSet,

    #[error(
        "holdout of {requested} entries leaves some question or learner without training data; \
         only {achieved} could be held out, try a smaller fraction"
    )]
    InfeasibleHoldout { requested: usize, achieved: usize },

    #[error("every grid point failed to produce a score")]
    NoScoredGridPoint,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("{0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable tag for machine-readable error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::InvalidHyperParam { .. } => "invalid_hyperparameter",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DuplicateEntry { .. } => "duplicate_entry",
            Error::Infeasible(_) => "infeasible_state",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::Diverged { .. } => "diverged",
            Error::EmptyVocabulary => "empty_vocabulary",
            Error::NoObservations => "no_observations",
            Error::EmptyTestSet => "empty_test_set",
            Error::InfeasibleHoldout { .. } => "infeasible_holdout",
            Error::NoScoredGridPoint => "no_scored_grid_point",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    /// An I/O failure on `path`.
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
