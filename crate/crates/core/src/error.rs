use std::path::PathBuf;

/// Errors produced anywhere in the tracking pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input lies outside the domain of an operation (bad depth, degenerate crop, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A rotation cannot be represented unambiguously (axis-angle near pi, Euler gimbal lock).
    #[error("ambiguous rotation: {0}")]
    Ambiguity(String),

    /// The 2D tracker lost the object. `frame` is the last frame with a valid mask.
    #[error("tracking lost after frame {frame}: {reason}")]
    TrackingLost { frame: usize, reason: String },

    /// Training diverged.
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    /// A decode or prediction step failed at the given frame.
    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    /// Malformed configuration or file content.
    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

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

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_frame(self, frame: usize) -> Self {
        match self {
            e @ (Error::TrackingLost { .. } | Error::AtFrame { .. }) => e,
            e => Error::AtFrame {
                frame,
                source: Box::new(e),
            },
        }
    }

    /// Strips any frame context and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtFrame { source, .. } => source.root(),
            e => e,
        }
    }
}
