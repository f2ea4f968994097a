//! Partition-function solvers behind one interface, looked up by name.

use crate::deterministic::{z_linear_solve, z_power_iteration};
use crate::error::{Error, Result};
use crate::mdp::{Mdp, SolverConfig};
use crate::stochastic::{naive_avg_bellman_solve, params_to_table, variational_fixed_point, variational_gd, GdInit};
use crate::tables::ZTable;

pub trait ZSolver: Send + Sync {
    fn name(&self) -> &'static str;
    /// Whether the solver accepts MDPs with stochastic transitions.
    fn stochastic(&self) -> bool;
    fn solve(&self, mdp: &Mdp, cfg: &SolverConfig) -> Result<ZTable>;
}

pub struct PowerIteration;
pub struct LinearSolve;
pub struct NaiveAveraged;
pub struct VariationalFixedPoint;
/// Gradient descent on the variational loss from a seeded random start,
/// `cfg.max_iters` steps (default 100000) with initial step 1.
pub struct VariationalGradient;

impl ZSolver for PowerIteration {
    fn name(&self) -> &'static str {
        "power"
    }
    fn stochastic(&self) -> bool {
        false
    }
    fn solve(&self, mdp: &Mdp, cfg: &SolverConfig) -> Result<ZTable> {
        z_power_iteration(mdp, cfg)
    }
}

impl ZSolver for LinearSolve {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn stochastic(&self) -> bool {
        false
    }
    fn solve(&self, mdp: &Mdp, cfg: &SolverConfig) -> Result<ZTable> {
        z_linear_solve(mdp, cfg)
    }
}

impl ZSolver for NaiveAveraged {
    fn name(&self) -> &'static str {
        "naive"
    }
    fn stochastic(&self) -> bool {
        true
    }
    fn solve(&self, mdp: &Mdp, cfg: &SolverConfig) -> Result<ZTable> {
        naive_avg_bellman_solve(mdp, cfg)
    }
}

impl ZSolver for VariationalFixedPoint {
    fn name(&self) -> &'static str {
        "variational-fp"
    }
    fn stochastic(&self) -> bool {
        true
    }
    fn solve(&self, mdp: &Mdp, cfg: &SolverConfig) -> Result<ZTable> {
        variational_fixed_point(mdp, cfg)
    }
}

impl ZSolver for VariationalGradient {
    fn name(&self) -> &'static str {
        "variational-gd"
    }
    fn stochastic(&self) -> bool {
        true
    }
    fn solve(&self, mdp: &Mdp, cfg: &SolverConfig) -> Result<ZTable> {
        let iters = cfg.max_iters.unwrap_or(100_000);
        let report = variational_gd(mdp, cfg, 1.0, iters, GdInit::Random { seed: cfg.seed })?;
        Ok(params_to_table(mdp, &report, cfg.tol))
    }
}

static SOLVERS: &[&dyn ZSolver] = &[
    &PowerIteration,
    &LinearSolve,
    &NaiveAveraged,
    &VariationalFixedPoint,
    &VariationalGradient,
];

pub fn solver_names() -> Vec<&'static str> {
    SOLVERS.iter().map(|s| s.name()).collect()
}

pub fn solver(name: &str) -> Result<&'static dyn ZSolver> {
    SOLVERS.iter().copied().find(|s| s.name() == name).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "unknown method '{name}' (expected one of: {})",
            solver_names().join(", ")
        ))
    })
}
