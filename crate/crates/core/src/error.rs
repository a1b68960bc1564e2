use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (bad shape, empty set,
    /// out-of-range hyperparameter, mismatched lengths).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced a non-finite value. `where_` names the
    /// parameter segment or quantity that first went bad.
    #[error("numerical failure in {where_}: {message}")]
    Numerical { where_: String, message: String },

    /// Malformed input file. `offset` is the byte position at which the
    /// problem was detected.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// The inputs violate a standing assumption of the method itself
    /// (for example a shift too large for the error bound to hold).
    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numerical(where_: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numerical {
            where_: where_.into(),
            message: message.into(),
        }
    }

    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub fn assumption(msg: impl Into<String>) -> Self {
        Error::Assumption(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
