use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid argument or configuration.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// θ lies outside the forward model's domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite log-likelihood {value} at prior sample {index}")]
    NonFiniteLogLikelihood { index: usize, value: f64 },

    /// `1 + ℏ(α)` lost positivity.
    #[error(
        "quadrature collapse at alpha = {alpha}: 1 + hbar = {value}; refine the tempering grid \
         or rely on the log-domain evidence"
    )]
    QuadratureCollapse { alpha: f64, value: f64 },

    #[error("finite-time escape of the trace solution at alpha = {alpha}")]
    FiniteEscape { alpha: f64 },

    #[error("degenerate density: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl Error {
    /// Configuration-class errors (as opposed to numerical breakdowns).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Parameter(_) | Error::Domain(_))
    }
}

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
