use thiserror::Error;

/// Errors raised by the toolkit.
///
/// The variants map one-to-one onto CLI exit codes (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("numerical convergence failure in {context}: {detail}")]
    Convergence { context: String, detail: String },

    #[error("budget exceeded in {context}: requested {requested}, cap {cap}")]
    Budget { context: String, requested: f64, cap: f64 },

    #[error("missing environment value at time {time}, site {site:?}")]
    MissingEnvironment { time: u32, site: Vec<i64> },

    #[error("check failed: {check}: {detail}")]
    CheckFailed { check: String, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn convergence(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Convergence {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn budget(context: impl Into<String>, requested: f64, cap: f64) -> Self {
        Error::Budget {
            context: context.into(),
            requested,
            cap,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter { .. } => 2,
            Error::Convergence { .. } | Error::Checkpoint(_) | Error::CheckFailed { .. } => 3,
            Error::MissingEnvironment { .. } => 3,
            Error::Budget { .. } => 4,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 1,
        }
    }
}
