use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("schema: {0}")]
    Schema(String),

    #[error("duplicate feature name `{0}`")]
    DuplicateName(String),

    #[error("feature `{name}`: unknown kind `{kind}` (expected continuous, categorical or group)")]
    UnknownKind { name: String, kind: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("missing value for `{feature}` which uses the reject policy (patient {patient}, visit {visit})")]
    MissingRejected {
        feature: String,
        patient: String,
        visit: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("fold balance infeasible: {0}")]
    Imbalanced(String),

    #[error("all {0} search trials diverged")]
    AllTrialsDiverged(usize),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 is reserved for usage errors (emitted by the argument parser),
    /// 3 for data/schema/checkpoint problems, 4 for numerical failures,
    /// 1 for I/O and anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            Error::Parse { .. }
            | Error::Schema(_)
            | Error::DuplicateName(_)
            | Error::UnknownKind { .. }
            | Error::Dataset(_)
            | Error::MissingRejected { .. }
            | Error::Shape(_)
            | Error::Checkpoint(_)
            | Error::Imbalanced(_) => 3,
            Error::NonFinite(_) | Error::Diverged { .. } | Error::AllTrialsDiverged(_) => 4,
            Error::Io { .. } | Error::Serde(_) => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Dataset(e.to_string())
    }
}
