use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument or configuration violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// An operation was called out of order (e.g. reading gradients before backward).
    #[error("state error: {0}")]
    State(String),

    /// A symbol is not present in the active alphabet.
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(char),

    /// The gradient norm vanished; the attack iterate is undefined.
    #[error("degenerate gradient (norm {norm:e} below {floor:e})")]
    DegenerateGradient { norm: f64, floor: f64 },

    /// A requested metric has an empty denominator.
    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    /// Malformed input file.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
