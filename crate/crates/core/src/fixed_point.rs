//! Damped log-domain fixed-point iteration with pinned boundary states.

use crate::mdp::{Mdp, SolverConfig};
use crate::tables::{ConvergenceTrace, ZTable};

/// Boundary values `log Z(s_f) = beta R(s_f)`, with `init` at non-terminals.
pub(crate) fn boundary_init(mdp: &Mdp, beta: f64, init: f64) -> Vec<f64> {
    (0..mdp.n_states())
        .map(|s| mdp.terminal_reward(s).map_or(init, |r| beta * r))
        .collect()
}

/// Default starting value at non-terminal states: `beta * R_floor * |S|`,
/// with `R_floor` the smallest transition reward.
pub(crate) fn floor_init(mdp: &Mdp, beta: f64) -> f64 {
    let floor = mdp.transition_rewards().fold(0.0, f64::min);
    beta * floor * mdp.n_states() as f64
}

/// Iterates `x(s) <- (1 - damping) x(s) + damping * backup(s, x)` at
/// non-terminal states until the undamped Bellman residual drops to `tol`.
pub(crate) fn iterate(
    mdp: &Mdp,
    cfg: &SolverConfig,
    mut x: Vec<f64>,
    backup: impl Fn(usize, &[f64]) -> f64,
) -> ZTable {
    let budget = cfg.iteration_budget(mdp);
    let active: Vec<usize> = mdp.non_terminals().collect();
    let mut trace = ConvergenceTrace::default();
    let mut next = x.clone();
    let mut iterations = 0;
    let mut residual;
    loop {
        residual = 0.0f64;
        for &s in &active {
            let target = backup(s, &x);
            residual = residual.max(abs_diff(target, x[s]));
            next[s] = if cfg.damping == 1.0 {
                target
            } else {
                (1.0 - cfg.damping) * x[s] + cfg.damping * target
            };
        }
        if residual <= cfg.tol || iterations == budget {
            break;
        }
        let mut lin = 0.0f64;
        for &s in &active {
            lin = lin.max(abs_diff(next[s].exp(), x[s].exp()));
        }
        trace.log_change.push(cfg.damping * residual);
        trace.linear_change.push(lin);
        std::mem::swap(&mut x, &mut next);
        iterations += 1;
    }
    ZTable {
        log_z: x,
        beta: cfg.beta,
        mu: cfg.mu,
        residual,
        iterations,
        converged: residual <= cfg.tol,
        tol: cfg.tol,
        trace,
    }
}

/// `|a - b|` that treats equal infinities as zero distance.
pub(crate) fn abs_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}
