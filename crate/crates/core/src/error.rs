use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("quadrature did not reach tolerance {tol:e} (estimate {estimate:e} after {nodes} nodes)")]
    Quadrature { tol: f64, estimate: f64, nodes: usize },

    #[error("descriptor `{kind}` does not support {what}")]
    Unsupported { kind: &'static str, what: &'static str },

    #[error("point outside the admissible region: {0}")]
    Inadmissible(String),

    #[error("no admissible modulus q ≡ 0 (mod 4) in [{lo}, {hi}]")]
    NoAdmissibleModulus { lo: f64, hi: f64 },

    #[error("hypothesis not met: {0}")]
    Precondition(String),

    #[error("ladder invalid: {0}")]
    Ladder(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        name,
        reason: reason.into(),
    }
}
