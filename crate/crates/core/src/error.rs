use thiserror::Error;

/// Errors produced by the analysis, simulation and optimization routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AoiError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("battery chain is degenerate: {0}")]
    DegenerateChain(String),

    #[error("battery profiles have inconsistent totals ({from} vs {to})")]
    InconsistentProfiles { from: usize, to: usize },

    #[error("state space of {states} composite states exceeds the cap of {cap}")]
    StateSpaceTooLarge { states: usize, cap: usize },

    #[error("the age of information is never refreshed under this policy")]
    NoRefresh,

    #[error("linear system is singular: {0}")]
    Singular(&'static str),
}

pub type Result<T> = std::result::Result<T, AoiError>;

pub(crate) fn check_prob(field: &'static str, p: f64) -> Result<()> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(AoiError::InvalidParameter {
            field,
            reason: format!("{p} is not a probability in [0, 1]"),
        })
    }
}
