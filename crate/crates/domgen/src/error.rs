use std::io;

/// Unified error type for the whole crate.
///
/// Construction never panics; every fallible operation in the library funnels
/// through this enum so callers can match on the failure class (e.g. the CLI
/// maps `Config`/`Parse`/`Invalid` to usage errors and everything else to
/// runtime errors).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two tensors had incompatible shapes for an operation.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An argument failed validation (negative penalty weight, empty input,
    /// probability outside [0, 1], ...).
    #[error("{0}")]
    Invalid(String),

    /// `backward` was called on a node that is not a scalar.
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    /// A numeric evaluation produced NaN or infinity.
    #[error("non-finite value {value} at component {component}")]
    NonFinite { component: usize, value: f64 },

    /// A text input (CSV row, config line, checkpoint section) failed to
    /// parse. `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A structurally valid config contained an unusable combination of
    /// values, or required keys were missing.
    #[error("config: {0}")]
    Config(String),

    /// An I/O operation failed; `path` names the file involved.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (configs, file contents,
    /// invalid argument combinations) as opposed to runtime failures.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_) | Error::Parse { .. } | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
