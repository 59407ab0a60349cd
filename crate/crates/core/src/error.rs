use thiserror::Error;

/// Crate-wide error type.
///
/// The three variants map onto distinct failure classes so that callers (in
/// particular the CLI) can translate them into exit codes: bad parameter
/// values, degenerate mixtures for which a functional is undefined, and
/// numerical failures (bracketing, convergence).
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate mixture: {0}")]
    DegenerateMixture(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateMixture(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
