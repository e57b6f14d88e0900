use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("non-finite value produced by {context}")]
    NonFinite { context: String },

    #[error("backward called on a graph without a recorded trace")]
    NoTrace,

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error in {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest error at {location}: {detail}")]
    Manifest { location: String, detail: String },

    #[error("missing feature `{feature}` for utterance `{utterance}`")]
    MissingFeature { feature: String, utterance: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("key mismatch: missing predictions for {missing_predictions:?}, missing truths for {missing_truths:?}")]
    KeyMismatch {
        missing_predictions: Vec<String>,
        missing_truths: Vec<String>,
    },

    #[error("unknown listener id {0}")]
    UnknownListener(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.into(),
        }
    }

    /// Prefixes the context of shape and non-finite errors with a layer name.
    pub(crate) fn in_layer(self, layer: &str) -> Self {
        match self {
            Error::Shape { context, detail } => Error::Shape {
                context: format!("{layer} ({context})"),
                detail,
            },
            Error::NonFinite { context } => Error::NonFinite {
                context: format!("{layer} ({context})"),
            },
            other => other,
        }
    }
}
