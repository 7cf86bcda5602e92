use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular channel: {0}")]
    SingularChannel(String),

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("unsupported pipeline shape: {0}")]
    UnsupportedShape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    /// Numerical failures (as opposed to bad input) map to a distinct exit
    /// status in the CLI.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalDomain(_) | Error::SingularChannel(_) | Error::Invariant(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
