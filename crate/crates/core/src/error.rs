use thiserror::Error;

/// Errors surfaced by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged ({loss_name} became non-finite) at epoch {epoch}; parameters rolled back to last finite state")]
    Diverged { loss_name: String, epoch: usize },

    #[error("record too short: {len} samples, need at least {window}")]
    RecordTooShort { len: usize, window: usize },

    #[error("missing (class={class}, condition={condition}) coverage for task {task}")]
    MissingCoverage {
        task: String,
        class: usize,
        condition: String,
    },

    #[error("class {0} has no labeled samples")]
    EmptyClass(usize),

    #[error("need at least {k} points for {k} clusters, got {n}")]
    TooFewPoints { n: usize, k: usize },

    #[error("label {label} out of range [0, {n_classes})")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("malformed record file {path}: {reason}")]
    MalformedRecord { path: String, reason: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("output directory {0} already contains results (use force to overwrite)")]
    OutputExists(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn shape(context: &str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            context: context.to_string(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
