use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range input (unknown ids, bad shapes).
    #[error("invalid input: {0}")]
    Input(String),
    /// A configuration that cannot be honoured (e.g. more regions than depots).
    #[error("configuration error: {0}")]
    Config(String),
    /// A combinatorial problem has no feasible solution.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// An internal invariant was violated.
    #[error("logic error: {0}")]
    Logic(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Config(_) | Error::Json(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
