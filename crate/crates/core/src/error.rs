use thiserror::Error;

/// Errors raised anywhere in the placement toolkit.
#[derive(Debug, Error)]
pub enum GicError {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("floating network: DC component containing node {node} has no unblocked grounding path")]
    FloatingNetwork { node: usize },

    #[error("placement is not binary at substation index {index} (value {value})")]
    NonBinary { index: usize, value: f64 },

    #[error("placement uses {used} blocking devices but the budget is {budget}")]
    BudgetExceeded { used: usize, budget: usize },

    #[error("placement has length {got}, expected one entry per substation ({expected})")]
    PlacementLength { got: usize, expected: usize },

    #[error("coupling mode is inconsistent with the network: {0}")]
    Coupling(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("enumeration would need {needed} evaluations, above the guard of {limit} (use force)")]
    GuardExceeded { needed: u64, limit: u64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl GicError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        GicError::Validation(msg.into())
    }
}

pub type Result<T, E = GicError> = std::result::Result<T, E>;
