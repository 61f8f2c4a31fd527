use std::io;

use thiserror::Error;

/// Errors produced by the matching, estimation and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("value outside the noise family domain: {0}")]
    Domain(String),

    #[error("degenerate atom: {0}")]
    DegenerateAtom(&'static str),

    #[error("fit did not converge after {iterations} iterations (alpha={alpha}, beta={beta})")]
    Convergence {
        alpha: f64,
        beta: f64,
        iterations: usize,
    },

    #[error("ROC needs both H0 and H1 pairs")]
    SingleClass,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

/// Checks that two slices share a length of at least two.
pub(crate) fn check_pair(x: &[f64], a: &[f64]) -> Result<()> {
    if x.len() != a.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: a.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("patches need at least two pixels"));
    }
    Ok(())
}
