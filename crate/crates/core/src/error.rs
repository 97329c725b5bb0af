use thiserror::Error;

/// Errors raised by the library and mapped to CLI exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, configuration or initial data.
    #[error("validation error: {0}")]
    Validation(String),

    /// A time or abscissa outside the domain of a function.
    #[error("domain error: {what} = {value} outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// The integrator or a root finder produced an inconsistent result.
    #[error("solver error: {0}")]
    Solver(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn solver(msg: impl Into<String>) -> Self {
        Error::Solver(msg.into())
    }

    /// Process exit code: 1 for user-facing validation problems, 2 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Domain { .. } | Error::Io(_) | Error::Json(_) => 1,
            Error::Solver(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
