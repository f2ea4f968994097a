//! Planning in deterministic MDPs through the linear Bellman equation
//! `Z(s) = sum_a exp(beta R(s,a) + mu) Z(s+a)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fixed_point::{self, abs_diff};
use crate::logspace::{softmax, LogSumExp};
use crate::mdp::{precheck, Mdp, SolverConfig};
use crate::tables::{ConvergenceTrace, PolicyTable, VTable, ValueMethod, ZTable};

/// Sparse linear-scale operator `C(beta)`: row `s` holds
/// `exp(beta R(s->s') + mu)` per successor, terminal rows the unit entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionOperator {
    rows: Vec<Vec<(usize, f64)>>,
}

impl TransitionOperator {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, s: usize) -> &[(usize, f64)] {
        &self.rows[s]
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.rows[s]
            .iter()
            .find(|&&(c, _)| c == t)
            .map_or(0.0, |&(_, v)| v)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(c, v)| v * x[c]).sum())
            .collect()
    }
}

fn require_deterministic(mdp: &Mdp, what: &'static str) -> Result<()> {
    if mdp.is_deterministic() {
        Ok(())
    } else {
        Err(Error::NotDeterministic(what))
    }
}

pub fn build_transition_operator(mdp: &Mdp, beta: f64, mu: f64) -> Result<TransitionOperator> {
    require_deterministic(mdp, "the transition operator C(beta)")?;
    let rows = (0..mdp.n_states())
        .map(|s| {
            if mdp.is_terminal(s) {
                return vec![(s, 1.0)];
            }
            let mut row: Vec<(usize, f64)> = Vec::new();
            for a in 0..mdp.actions(s).len() {
                let (next, r) = mdp.successor(s, a);
                let w = (beta * r + mu).exp();
                match row.iter_mut().find(|(c, _)| *c == next) {
                    Some(entry) => entry.1 += w,
                    None => row.push((next, w)),
                }
            }
            row
        })
        .collect();
    Ok(TransitionOperator { rows })
}

/// One log-domain Bellman backup at a deterministic state.
pub(crate) fn det_backup(mdp: &Mdp, beta: f64, mu: f64, s: usize, log_z: &[f64]) -> f64 {
    let mut acc = LogSumExp::new();
    for a in 0..mdp.actions(s).len() {
        let (next, r) = mdp.successor(s, a);
        acc.push(beta * r + mu + log_z[next]);
    }
    acc.value()
}

/// Power iteration in log domain from the default initialization.
pub fn z_power_iteration(mdp: &Mdp, cfg: &SolverConfig) -> Result<ZTable> {
    let init = fixed_point::floor_init(mdp, cfg.beta);
    z_power_iteration_from(mdp, cfg, init)
}

/// Power iteration starting every non-terminal state at `log Z_0 = init`.
pub fn z_power_iteration_from(mdp: &Mdp, cfg: &SolverConfig, init: f64) -> Result<ZTable> {
    require_deterministic(mdp, "power iteration")?;
    precheck(mdp, cfg)?;
    let x0 = fixed_point::boundary_init(mdp, cfg.beta, init);
    let (beta, mu) = (cfg.beta, cfg.mu);
    Ok(fixed_point::iterate(mdp, cfg, x0, |s, x| {
        det_backup(mdp, beta, mu, s, x)
    }))
}

/// Reduced-system solve of `(I - C_NN) z_N = C_NT z_T` in linear scale,
/// with row and column equilibration. Reliable while `|beta R|` stays within
/// a few hundred per entry.
pub fn z_linear_solve(mdp: &Mdp, cfg: &SolverConfig) -> Result<ZTable> {
    require_deterministic(mdp, "the linear solve")?;
    precheck(mdp, cfg)?;
    let (beta, mu) = (cfg.beta, cfg.mu);
    let n = mdp.n_states();
    let inner: Vec<usize> = mdp.non_terminals().collect();
    let mut pos = vec![usize::MAX; n];
    for (i, &s) in inner.iter().enumerate() {
        pos[s] = i;
    }
    // terminal values are rescaled by exp(-shift) to keep them representable
    let shift = mdp
        .terminals()
        .map(|s| beta * mdp.terminal_reward(s).unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut log_z = fixed_point::boundary_init(mdp, beta, f64::NAN);
    let m = inner.len();
    if m == 0 {
        return Ok(direct_table(mdp, cfg, log_z));
    }

    let mut a = DMatrix::<f64>::identity(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (i, &s) in inner.iter().enumerate() {
        for act in 0..mdp.actions(s).len() {
            let (next, r) = mdp.successor(s, act);
            let w = (beta * r + mu).exp();
            match mdp.terminal_reward(next) {
                Some(rf) => b[i] += w * (beta * rf - shift).exp(),
                None => a[(i, pos[next])] -= w,
            }
        }
    }
    let y = solve_equilibrated(a, b)?;
    for (i, &s) in inner.iter().enumerate() {
        if !(y[i] > 0.0) {
            return Err(Error::NonPositive {
                state: mdp.state_name(s).to_string(),
                value: y[i],
            });
        }
        log_z[s] = y[i].ln() + shift;
    }
    Ok(direct_table(mdp, cfg, log_z))
}

fn direct_table(mdp: &Mdp, cfg: &SolverConfig, log_z: Vec<f64>) -> ZTable {
    let residual = mdp
        .non_terminals()
        .map(|s| abs_diff(det_backup(mdp, cfg.beta, cfg.mu, s, &log_z), log_z[s]))
        .fold(0.0, f64::max);
    ZTable {
        log_z,
        beta: cfg.beta,
        mu: cfg.mu,
        residual,
        iterations: 0,
        // a direct solve is exact up to rounding; the residual is reported as is
        converged: true,
        tol: cfg.tol,
        trace: ConvergenceTrace::default(),
    }
}

/// Solves `A x = b` after scaling rows, then columns, to unit max-norm.
/// Fails when the LU pivots span more than `1 / (n eps)`.
pub(crate) fn solve_equilibrated(mut a: DMatrix<f64>, mut b: DVector<f64>) -> Result<DVector<f64>> {
    let m = a.nrows();
    for i in 0..m {
        let scale = a.row(i).amax();
        if scale == 0.0 {
            return Err(Error::Singular(format!("row {i} is zero")));
        }
        a.row_mut(i).scale_mut(1.0 / scale);
        b[i] /= scale;
    }
    let mut col_scale = vec![1.0; m];
    for j in 0..m {
        let scale = a.column(j).amax();
        if scale == 0.0 {
            return Err(Error::Singular(format!("column {j} is zero")));
        }
        col_scale[j] = 1.0 / scale;
        a.column_mut(j).scale_mut(col_scale[j]);
    }
    let lu = a.lu();
    let u = lu.u();
    let diag = u.diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d.abs()), hi.max(d.abs())));
    if !(lo > hi * m as f64 * f64::EPSILON) {
        return Err(Error::Singular(format!(
            "pivot ratio {:.3e}; d e^mu >= 1 or a state cannot reach a terminal",
            lo / hi
        )));
    }
    let mut y = lu
        .solve(&b)
        .ok_or_else(|| Error::Singular("LU solve failed".into()))?;
    for j in 0..m {
        y[j] *= col_scale[j];
    }
    Ok(y)
}

/// Entropy-aware policy `pi(a|s) ∝ exp(beta R(s,a) + mu) Z(s+a)`.
pub fn policy_from_z(mdp: &Mdp, z: &ZTable) -> Result<PolicyTable> {
    require_deterministic(mdp, "policy_from_z")?;
    z.require_converged()?;
    let probs = (0..mdp.n_states())
        .map(|s| {
            if mdp.is_terminal(s) {
                return Vec::new();
            }
            let logits: Vec<f64> = (0..mdp.actions(s).len())
                .map(|a| {
                    let (next, r) = mdp.successor(s, a);
                    z.beta * r + z.mu + z.log_z[next]
                })
                .collect();
            softmax(&logits)
        })
        .collect();
    Ok(PolicyTable { probs })
}

/// Step used by the finite-difference derivatives in `beta`.
pub fn fd_step(beta: f64) -> f64 {
    1e-4 * beta.max(1.0)
}

/// Second-order derivative of `f` at `beta`: central where `beta - h >= 0`,
/// otherwise the one-sided three-point formula.
pub(crate) fn d_dbeta<F>(beta: f64, h: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    if beta - h >= 0.0 {
        let up = f(beta + h)?;
        let down = f(beta - h)?;
        Ok(up
            .iter()
            .zip(&down)
            .map(|(u, d)| (u - d) / (2.0 * h))
            .collect())
    } else {
        let f0 = f(beta)?;
        let f1 = f(beta + h)?;
        let f2 = f(beta + 2.0 * h)?;
        Ok((0..f0.len())
            .map(|i| (-3.0 * f0[i] + 4.0 * f1[i] - f2[i]) / (2.0 * h))
            .collect())
    }
}

/// `V = d log Z / d beta`, either by re-solving at `beta ± h` or from the
/// linear policy-evaluation system `V(s) = sum_a pi(a|s) [R(s,a) + V(s+a)]`.
pub fn value_from_z(mdp: &Mdp, z: &ZTable, method: ValueMethod) -> Result<VTable> {
    require_deterministic(mdp, "value_from_z")?;
    z.require_converged()?;
    let v = match method {
        ValueMethod::FiniteDifference => {
            let base = SolverConfig {
                tol: z.tol,
                ..SolverConfig::new(z.beta, z.mu)
            };
            let mut v = d_dbeta(z.beta, fd_step(z.beta), |b| {
                let t = z_power_iteration(mdp, &SolverConfig { beta: b, ..base.clone() })?;
                t.require_converged()?;
                Ok(t.log_z)
            })?;
            for s in mdp.terminals() {
                v[s] = mdp.terminal_reward(s).unwrap();
            }
            v
        }
        ValueMethod::LinearSystem => {
            let pi = policy_from_z(mdp, z)?;
            evaluate_policy(mdp, &pi)?
        }
    };
    Ok(VTable {
        v,
        beta: z.beta,
        method,
    })
}

/// Expected cumulative reward of `pi`, terminal reward included.
pub fn evaluate_policy(mdp: &Mdp, pi: &PolicyTable) -> Result<Vec<f64>> {
    let n = mdp.n_states();
    let inner: Vec<usize> = mdp.non_terminals().collect();
    let mut pos = vec![usize::MAX; n];
    for (i, &s) in inner.iter().enumerate() {
        pos[s] = i;
    }
    let m = inner.len();
    let mut v: Vec<f64> = (0..n)
        .map(|s| mdp.terminal_reward(s).unwrap_or(0.0))
        .collect();
    if m == 0 {
        return Ok(v);
    }
    let mut a = DMatrix::<f64>::identity(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (i, &s) in inner.iter().enumerate() {
        for (act, &p) in pi.row(s).iter().enumerate() {
            for o in &mdp.actions(s)[act].outcomes {
                let w = p * o.prob;
                b[i] += w * o.reward;
                match mdp.terminal_reward(o.next) {
                    Some(rf) => b[i] += w * rf,
                    None => a[(i, pos[o.next])] -= w,
                }
            }
        }
    }
    let y = solve_equilibrated(a, b)?;
    for (i, &s) in inner.iter().enumerate() {
        v[s] = y[i];
    }
    Ok(v)
}

/// Result of the Boltzmann-policy baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub v: VTable,
    pub policy: PolicyTable,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped fixed point of `V(s) = sum_a w_a [R(s,a) + gamma V(s+a)]` with
/// `w ∝ exp(beta [R(s,a) + gamma V(s+a)])`, returning `V` and the Boltzmann
/// policy. Comparison baseline only; it ignores trajectory counts.
pub fn boltzmann_baseline(mdp: &Mdp, cfg: &SolverConfig) -> Result<BaselineResult> {
    require_deterministic(mdp, "the Boltzmann baseline")?;
    cfg.check()?;
    let report = crate::mdp::validate(mdp);
    if let Some(v) = report.violations.first() {
        return Err(Error::InvalidMdp(v.clone()));
    }
    let (beta, gamma) = (cfg.beta, cfg.gamma);
    let budget = cfg.max_iters.unwrap_or_else(|| {
        let est = if gamma > 0.0 {
            10.0 * (cfg.tol.ln() / gamma.ln()).ceil() / cfg.damping
        } else {
            0.0
        };
        (est as usize).max(10 * mdp.n_states()).max(1000)
    });
    let q_values = |s: usize, v: &[f64]| -> Vec<f64> {
        (0..mdp.actions(s).len())
            .map(|a| {
                let (next, r) = mdp.successor(s, a);
                r + gamma * v[next]
            })
            .collect()
    };
    let mut v: Vec<f64> = (0..mdp.n_states())
        .map(|s| mdp.terminal_reward(s).unwrap_or(0.0))
        .collect();
    let inner: Vec<usize> = mdp.non_terminals().collect();
    let mut iterations = 0;
    let mut residual;
    loop {
        residual = 0.0f64;
        let mut next = v.clone();
        for &s in &inner {
            let q = q_values(s, &v);
            let logits: Vec<f64> = q.iter().map(|x| beta * x).collect();
            let w = softmax(&logits);
            let target: f64 = w.iter().zip(&q).map(|(w, q)| w * q).sum();
            residual = residual.max((target - v[s]).abs());
            next[s] = (1.0 - cfg.damping) * v[s] + cfg.damping * target;
        }
        if residual <= cfg.tol || iterations == budget {
            break;
        }
        v = next;
        iterations += 1;
    }
    let probs = (0..mdp.n_states())
        .map(|s| {
            if mdp.is_terminal(s) {
                Vec::new()
            } else {
                let logits: Vec<f64> = q_values(s, &v).iter().map(|x| beta * x).collect();
                softmax(&logits)
            }
        })
        .collect();
    Ok(BaselineResult {
        v: VTable {
            v,
            beta,
            method: ValueMethod::LinearSystem,
        },
        policy: PolicyTable { probs },
        residual,
        iterations,
        converged: residual <= cfg.tol,
    })
}

/// Largest observed `||C X1 - C X2|| / ||X1 - X2||` over non-terminal
/// coordinates, for random positive `X1, X2` sharing boundary values.
pub fn contraction_check(mdp: &Mdp, cfg: &SolverConfig, trials: usize, seed: u64) -> Result<f64> {
    let op = build_transition_operator(mdp, cfg.beta, cfg.mu)?;
    let inner: Vec<usize> = mdp.non_terminals().collect();
    if inner.is_empty() {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boundary: Vec<f64> = (0..mdp.n_states())
        .map(|s| mdp.terminal_reward(s).map_or(0.0, |r| (cfg.beta * r).exp()))
        .collect();
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mut x1 = boundary.clone();
        let mut x2 = boundary.clone();
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        for &s in &inner {
            x1[s] = scale * rng.gen_range(f64::MIN_POSITIVE..1.0);
            x2[s] = scale * rng.gen_range(f64::MIN_POSITIVE..1.0);
        }
        let y1 = op.apply(&x1);
        let y2 = op.apply(&x2);
        let num = inner.iter().map(|&s| (y1[s] - y2[s]).abs()).fold(0.0, f64::max);
        let den = inner.iter().map(|&s| (x1[s] - x2[s]).abs()).fold(0.0, f64::max);
        if den > 0.0 {
            worst = worst.max(num / den);
        }
    }
    Ok(worst)
}
