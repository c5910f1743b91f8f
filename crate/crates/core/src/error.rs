use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error in {function}: {message}")]
    Domain {
        function: &'static str,
        message: String,
    },

    /// Adaptive quadrature did not reach the requested tolerance. The best
    /// available estimate is attached.
    #[error("tolerance not met: value {best} with error estimate {err_estimate} > requested {requested}")]
    Tolerance {
        best: f64,
        err_estimate: f64,
        requested: f64,
    },

    /// The quantity is infinite at the requested point (e.g. a driving function
    /// evaluated at the origin).
    #[error("infinite value: {0}")]
    Infinite(String),

    /// The quantity diverges for the requested arguments.
    #[error("divergence: {0}")]
    Divergence(String),

    /// `r -> r * H(r)` was found to be non-monotone while inverting the
    /// transformation map.
    #[error("hypothesis violation: r*H(r) not increasing on bracket [{lo}, {hi}]")]
    HypothesisViolation { lo: f64, hi: f64 },

    /// Monte Carlo engine failure (envelope violation, stuck step controller, ...).
    #[error("sampler failure: {0}")]
    Sampler(String),

    /// The request is outside what the implementation supports.
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    /// Multiply the numbers carried by a tolerance error by `k`; other
    /// variants are returned unchanged.
    pub fn rescaled(self, k: f64) -> Self {
        match self {
            Error::Tolerance {
                best,
                err_estimate,
                requested,
            } => Error::Tolerance {
                best: best * k,
                err_estimate: err_estimate * k.abs(),
                requested: requested * k.abs(),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(function: &'static str, message: impl Into<String>) -> Error {
    Error::Domain {
        function,
        message: message.into(),
    }
}
