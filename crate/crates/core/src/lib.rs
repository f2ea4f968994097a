//! Planning and learning in finite MDPs through trajectory-ensemble
//! partition functions.
//!
//! `Z(s, beta) = sum over trajectories w from s of exp(-beta E(w) + mu |w|)`
//! obeys a Bellman equation that is linear in `Z` for deterministic MDPs.
//! Value functions are recovered as `d log Z / d beta`, and the induced
//! policies weight actions by how many good continuations they admit.

pub mod deterministic;
pub mod error;
mod fixed_point;
pub mod instances;
pub mod logspace;
pub mod mdp;
pub mod model_free;
pub mod oracle;
pub mod solver;
pub mod stochastic;
pub mod tables;

pub use error::{Error, Result};
pub use mdp::{normalize_rewards, validate, Mdp, MdpBuilder, SolverConfig, ValidationReport};
pub use tables::{PolicyTable, VTable, ValueMethod, ZTable};
