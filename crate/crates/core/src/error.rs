//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by model validation, solvers and the simulation loop.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("unknown link id {0}")]
    UnknownLink(usize),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),
    #[error("infeasible problem: {0}")]
    Infeasible(String),
    #[error("energy causality violated at agent {agent}: spending {spend} exceeds battery {battery}")]
    EnergyCausality { agent: usize, spend: f64, battery: f64 },
    #[error("invariant violated at slot {slot}: {detail}")]
    Invariant { slot: u64, detail: String },
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error("linear program failed: {0}")]
    Lp(String),
}

pub type Result<T> = std::result::Result<T, Error>;
