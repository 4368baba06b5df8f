use thiserror::Error;

/// Errors raised by the ordered-SGD library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Bad input data: label out of range, NaN loss, inconsistent row counts.
    #[error("data error: {0}")]
    Data(String),

    #[error("format error at {location}: {message}")]
    Format { location: String, message: String },

    /// A non-finite loss was observed; `step` counts optimizer steps from 1.
    #[error("diverged at step {step}: non-finite loss {value}")]
    Diverged { step: u64, value: f64 },

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("did not converge after {iterations} iterations (last step {last_step:.3e}, tolerance {tolerance:.3e})")]
    Convergence {
        iterations: usize,
        last_step: f64,
        tolerance: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn format_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Format {
        location: location.into(),
        message: message.into(),
    }
}

/// Wraps an I/O error with the path it concerns.
pub(crate) fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}
