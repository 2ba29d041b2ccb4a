use std::path::PathBuf;

use thiserror::Error;

use crate::model::Side;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown {side} id `{id}`")]
    UnknownEntity { side: Side, id: String },

    #[error("unknown operation `{0}`")]
    UnknownOperation(String),

    #[error("attribute `{attr}` has an empty value set")]
    EmptyValueSet { attr: String },

    #[error("rule `{0}` has an empty operation set")]
    EmptyOperations(String),

    #[error("invalid context: {0}")]
    InvalidContext(String),

    #[error("rules `{0}` and `{1}` do not overlap in every dimension")]
    NotOverlapping(String, String),

    #[error("rules `{0}` and `{1}` are not a similar-inconsistent pair")]
    NotInconsistent(String, String),

    #[error("conflict resolution did not converge after {0} passes")]
    NonConvergence(usize),

    #[error("the decision example set is empty")]
    EmptyExamples,

    #[error("the learner pipeline has no stages")]
    EmptyPipeline,

    #[error("unknown learner stage `{0}`")]
    UnknownStage(String),

    #[error("strategy `{0}` requires a learner pipeline")]
    MissingPipeline(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("requested {requested} ground-truth rules but only {generated} distinct conflict-free rules could be drawn")]
    TooManyRules { requested: usize, generated: usize },

    #[error("missing column `{0}` in log header")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },

    #[error("duplicate policy id `{0}`")]
    DuplicatePolicyId(String),

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

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}
