use thiserror::Error;

/// Errors produced by the library. Variants map onto the CLI exit codes:
/// configuration problems exit with 2, solver and flow failures with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("flow error: {0}")]
    Flow(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than by a failed computation.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Domain(_) | Error::Data(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
