use thiserror::Error;

use crate::address::VertexAddress;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("address {0} does not resolve to a vertex of the tree")]
    UnresolvableAddress(String),

    #[error("malformed vertex address {input:?}: {reason}")]
    MalformedAddress { input: String, reason: String },

    #[error("window exhausted at {vertex}: {detail}")]
    WindowExhausted { vertex: String, detail: String },

    #[error("enumeration of {requested} vertices exceeds the window vertex limit {limit}")]
    WindowLimit { requested: u128, limit: usize },

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("vertex {0} has a leaf below it (gamma = 0)")]
    LeafBelow(String),

    #[error("vertex {vertex} has no {n}-ancestor")]
    NoAncestor { vertex: String, n: u32 },

    #[error("vertex set is empty")]
    EmptySet,

    #[error("tree has a leaf at {0}; the operation needs a leafless tree")]
    NotLeafless(String),

    #[error("the backward shift is unbounded on this space (bound = {0})")]
    Unbounded(String),

    #[error("count overflow while computing {0}")]
    Overflow(String),

    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate}, gap {gap})")]
    NonConvergence { iterations: usize, estimate: f64, gap: f64 },

    #[error("no schedule reaches the requested tolerance: {detail} (blocking vertex {vertex})")]
    ScheduleInfeasible { vertex: String, detail: String },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn window(v: &VertexAddress, detail: impl Into<String>) -> Self {
        Error::WindowExhausted { vertex: v.to_string(), detail: detail.into() }
    }

    /// True for failures that a wider depth window would cure.
    pub fn is_window_failure(&self) -> bool {
        matches!(self, Error::WindowExhausted { .. } | Error::WindowLimit { .. })
    }

    /// True for failures caused by malformed or inconsistent input documents.
    pub fn is_input_failure(&self) -> bool {
        matches!(
            self,
            Error::MalformedAddress { .. }
                | Error::UnresolvableAddress(_)
                | Error::InvalidTree(_)
                | Error::InvalidWeights(_)
                | Error::InvalidExponent(_)
                | Error::InvalidArgument(_)
                | Error::Parse(_)
        )
    }
}
