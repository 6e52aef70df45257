use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Shapes, weights or dimensions that do not fit together.
    #[error("structural mismatch: {0}")]
    Structure(String),

    /// A parameter outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Non-finite values or a failed inner solve.
    #[error("numerical failure{}: {msg}", fmt_iter(*.k))]
    Numerical { k: Option<usize>, msg: String },

    /// The iterate norm crossed the divergence threshold.
    #[error("divergence at iteration {k}: norm {norm:e} exceeds threshold")]
    Divergence { k: usize, norm: f64 },

    /// A quantity that cannot be computed from the data at hand.
    #[error("unavailable: {0}")]
    Unavailable(String),
}

fn fmt_iter(k: Option<usize>) -> String {
    match k {
        Some(k) => format!(" at iteration {k}"),
        None => String::new(),
    }
}

impl Error {
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical { k: None, msg: msg.into() }
    }

    pub(crate) fn at(self, k: usize) -> Self {
        match self {
            Error::Numerical { k: None, msg } => Error::Numerical { k: Some(k), msg },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
