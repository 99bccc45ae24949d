use thiserror::Error;

/// Errors produced by model construction, oracles and samplers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("capacity exceeded: {what} is {actual}, limit is {limit}")]
    Capacity {
        what: &'static str,
        actual: usize,
        limit: usize,
    },

    #[error("infeasible pinning: {0}")]
    Infeasible(String),

    #[error("operation requires a ferromagnetic model (all couplings >= 0)")]
    NotFerromagnetic,

    #[error("graph is disconnected: vertex {vertex} is unreachable from vertex {start}")]
    Disconnected { start: usize, vertex: usize },

    #[error("spin convention mismatch: expected {expected}, found {found}")]
    Convention {
        expected: &'static str,
        found: &'static str,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
