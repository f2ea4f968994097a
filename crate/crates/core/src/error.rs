use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("unknown state `{0}`")]
    UnknownState(String),

    #[error("unknown action `{action}` at state `{state}`")]
    UnknownAction { state: String, action: String },

    #[error("state `{0}` is terminal and has no actions")]
    TerminalState(String),

    #[error("{0} requires a deterministic MDP; use the stochastic planner (naive or variational) instead")]
    NotDeterministic(&'static str),

    #[error("{0} requires the same action set at every non-terminal state")]
    NonUniformActions(&'static str),

    #[error(
        "partition function may diverge: the MDP has cycles and mu = {mu} is not below -log d = {threshold}"
    )]
    Divergent { mu: f64, threshold: f64 },

    #[error("trajectory enumeration exceeded the cap of {cap} expanded prefixes")]
    EnumerationCap { cap: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("linear system is singular to machine precision ({0})")]
    Singular(String),

    #[error("linear solve produced a non-positive partition function at state `{state}` ({value})")]
    NonPositive { state: String, value: f64 },

    #[error("input table is not converged (residual {residual:e} > tol {tol:e})")]
    Unconverged { residual: f64, tol: f64 },

    #[error("gradient descent diverged: {0}")]
    Diverged(String),

    #[error("consistency check failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed MDP file: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
