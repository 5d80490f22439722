use thiserror::Error;

/// Errors raised by the model.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is outside its physical domain.
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParameter { key: String, reason: String },

    /// The steady-state root bracket contained no sign change.
    #[error("no steady-state root found: {0}")]
    NoRoot(String),

    /// The adaptive integrator could not make progress.
    #[error("step size underflow at t = {t:e} s (h = {h:e} s): {detail}")]
    StepUnderflow { t: f64, h: f64, detail: String },

    /// The quadrature signal vanishes, so sensitivity is undefined.
    #[error("signal is zero at the requested operating point; sensitivity undefined")]
    ZeroSignal,

    /// Several stable roots exist and no branch was chosen.
    #[error("bistable operating point: {0} stable roots and no branch selection given")]
    AmbiguousBranch(usize),

    /// Input/output failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for configuration errors as opposed to numerical or I/O failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::AmbiguousBranch(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(key: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(key, format!("must be finite, got {v}")))
    }
}

pub(crate) fn ensure_positive(key: &str, v: f64) -> Result<()> {
    ensure_finite(key, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(key, format!("must be > 0, got {v}")))
    }
}

pub(crate) fn ensure_non_negative(key: &str, v: f64) -> Result<()> {
    ensure_finite(key, v)?;
    if v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(key, format!("must be >= 0, got {v}")))
    }
}
