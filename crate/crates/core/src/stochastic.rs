//! Stochastic MDPs.
//!
//! Two constructions. The naive one averages the deterministic Bellman
//! equation over landing states; its solution equals the likelihood-weighted
//! trajectory sum, but the induced weights depend on the landing state and
//! do not describe a policy an agent could follow. The variational one lifts
//! the MDP to a deterministic MDP over beliefs and restricts `Z` to the
//! family `Z_theta(rho) = prod_i theta_i^rho_i`, which yields a
//! geometric-mean Bellman equation and a policy that depends only on the
//! current state.
//!
//! Beliefs treat terminal states as absorbing with zero reward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::deterministic::{d_dbeta, fd_step};
use crate::error::{Error, Result};
use crate::fixed_point::{self, abs_diff};
use crate::logspace::{softmax, LogSumExp};
use crate::mdp::{precheck, validate, Mdp, SolverConfig, PROB_TOL};
use crate::tables::{PolicyTable, ZTable};

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    rho: Vec<f64>,
}

impl BeliefState {
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidConfig("belief has a negative entry".into()));
        }
        let total: f64 = rho.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidConfig(format!("belief sums to {total}")));
        }
        Ok(Self { rho })
    }

    pub fn dirac(n: usize, s: usize) -> Self {
        let mut rho = vec![0.0; n];
        rho[s] = 1.0;
        Self { rho }
    }

    /// Uniform sample from the probability simplex.
    pub fn sample(n: usize, rng: &mut impl Rng) -> Self {
        let e: Vec<f64> = (0..n).map(|_| -rng.gen_range(f64::MIN_POSITIVE..1.0).ln()).collect();
        let total: f64 = e.iter().sum();
        Self {
            rho: e.into_iter().map(|x| x / total).collect(),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.rho
    }

    /// True when all mass sits on terminal states.
    pub fn is_final(&self, mdp: &Mdp) -> bool {
        self.rho
            .iter()
            .enumerate()
            .all(|(s, &p)| p == 0.0 || mdp.is_terminal(s))
    }
}

fn require_uniform(mdp: &Mdp, what: &'static str) -> Result<()> {
    if mdp.has_uniform_actions() {
        Ok(())
    } else {
        Err(Error::NonUniformActions(what))
    }
}

/// Pushes `rho` through action `a`: returns `P_a^T rho` and the expected
/// immediate reward under `rho`.
pub fn belief_step(mdp: &Mdp, rho: &BeliefState, action: &str) -> Result<(BeliefState, f64)> {
    require_uniform(mdp, "belief transitions")?;
    let n = mdp.n_states();
    if rho.rho.len() != n {
        return Err(Error::InvalidConfig(format!(
            "belief has {} entries for {n} states",
            rho.rho.len()
        )));
    }
    let mut next = vec![0.0; n];
    let mut reward = 0.0;
    for (s, &p) in rho.rho.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        if mdp.is_terminal(s) {
            next[s] += p;
            continue;
        }
        let a = mdp.action_index(s, action)?;
        for o in &mdp.actions(s)[a].outcomes {
            next[o.next] += p * o.prob;
            reward += p * o.prob * o.reward;
        }
    }
    Ok((BeliefState { rho: next }, reward))
}

/// `log Z(s) <- log sum_{a,s'} P(s'|s,a) exp(beta R + mu) Z(s')`.
pub(crate) fn naive_backup(mdp: &Mdp, beta: f64, mu: f64, s: usize, log_z: &[f64]) -> f64 {
    let mut acc = LogSumExp::new();
    for a in mdp.actions(s) {
        for o in &a.outcomes {
            acc.push(o.prob.ln() + beta * o.reward + mu + log_z[o.next]);
        }
    }
    acc.value()
}

/// Exponent of one action in the geometric-mean backup:
/// `sum_{s'} P(s'|s,a) [beta R + mu + log Z(s')]`.
fn geometric_exponent(mdp: &Mdp, beta: f64, mu: f64, s: usize, a: usize, log_z: &[f64]) -> f64 {
    mdp.actions(s)[a]
        .outcomes
        .iter()
        .map(|o| o.prob * (beta * o.reward + mu + log_z[o.next]))
        .sum()
}

pub(crate) fn variational_backup(mdp: &Mdp, beta: f64, mu: f64, s: usize, log_z: &[f64]) -> f64 {
    let mut acc = LogSumExp::new();
    for a in 0..mdp.actions(s).len() {
        acc.push(geometric_exponent(mdp, beta, mu, s, a, log_z));
    }
    acc.value()
}

/// Fixed point of the averaged Bellman equation.
pub fn naive_avg_bellman_solve(mdp: &Mdp, cfg: &SolverConfig) -> Result<ZTable> {
    precheck(mdp, cfg)?;
    let x0 = fixed_point::boundary_init(mdp, cfg.beta, fixed_point::floor_init(mdp, cfg.beta));
    let (beta, mu) = (cfg.beta, cfg.mu);
    Ok(fixed_point::iterate(mdp, cfg, x0, |s, x| {
        naive_backup(mdp, beta, mu, s, x)
    }))
}

/// Landing-state-dependent weights of the naive construction.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveDiagnostic {
    /// `weights[s][a][k]` for the `k`-th outcome of action `a` at `s`:
    /// `exp(beta R + mu) Z(s') P(s'|s,a) / Z(s)`.
    pub weights: Vec<Vec<Vec<f64>>>,
    /// `d log Z / d beta` by finite differences of the naive solution.
    pub value: Vec<f64>,
    /// Sup-norm residual of `V(s) = sum w [R + V(s')]` evaluated at `value`.
    pub recursion_residual: f64,
}

impl NaiveDiagnostic {
    /// Total weight per action, `sum_{s'} w(s,a,s')`.
    pub fn action_mass(&self, s: usize) -> Vec<f64> {
        self.weights[s].iter().map(|w| w.iter().sum()).collect()
    }

    pub const WARNING: &'static str = "diagnostic only: these weights depend on the landing state \
        and do not define a policy an agent can execute";
}

pub fn naive_value_diagnostic(mdp: &Mdp, z: &ZTable) -> Result<NaiveDiagnostic> {
    z.require_converged()?;
    let weights: Vec<Vec<Vec<f64>>> = (0..mdp.n_states())
        .map(|s| {
            if mdp.is_terminal(s) {
                return Vec::new();
            }
            mdp.actions(s)
                .iter()
                .map(|a| {
                    a.outcomes
                        .iter()
                        .map(|o| {
                            (z.beta * o.reward + z.mu + z.log_z[o.next] + o.prob.ln() - z.log_z[s])
                                .exp()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let base = SolverConfig {
        tol: z.tol,
        ..SolverConfig::new(z.beta, z.mu)
    };
    let solve = |b: f64| -> Result<Vec<f64>> {
        let t = naive_avg_bellman_solve(mdp, &SolverConfig { beta: b, ..base.clone() })?;
        t.require_converged()?;
        Ok(t.log_z)
    };
    // Richardson extrapolation of two second-order differences
    let h = fd_step(z.beta);
    let coarse = d_dbeta(z.beta, h, solve)?;
    let fine = d_dbeta(z.beta, h / 2.0, solve)?;
    let mut value: Vec<f64> = fine
        .iter()
        .zip(&coarse)
        .map(|(f, c)| (4.0 * f - c) / 3.0)
        .collect();
    for s in mdp.terminals() {
        value[s] = mdp.terminal_reward(s).unwrap();
    }
    let mut recursion_residual = 0.0f64;
    for s in mdp.non_terminals() {
        let mut rhs = 0.0;
        for (a, ws) in mdp.actions(s).iter().zip(&weights[s]) {
            for (o, w) in a.outcomes.iter().zip(ws) {
                rhs += w * (o.reward + value[o.next]);
            }
        }
        recursion_residual = recursion_residual.max((value[s] - rhs).abs());
    }
    Ok(NaiveDiagnostic {
        weights,
        value,
        recursion_residual,
    })
}

/// Damped fixed point of the geometric-mean Bellman equation
/// `log Z(s) = log sum_a exp(sum_{s'} P(s'|s,a) [beta R + mu + log Z(s')])`.
pub fn variational_fixed_point(mdp: &Mdp, cfg: &SolverConfig) -> Result<ZTable> {
    precheck(mdp, cfg)?;
    let x0 = fixed_point::boundary_init(mdp, cfg.beta, fixed_point::floor_init(mdp, cfg.beta));
    let (beta, mu) = (cfg.beta, cfg.mu);
    Ok(fixed_point::iterate(mdp, cfg, x0, |s, x| {
        variational_backup(mdp, beta, mu, s, x)
    }))
}

/// `log theta` of the product family, boundary entries pinned to
/// `beta R(f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    pub log_theta: Vec<f64>,
    pub beta: f64,
    pub mu: f64,
    pub loss: f64,
}

impl VariationalParams {
    /// Builds parameters from `log theta`, pinning boundary entries.
    pub fn new(mdp: &Mdp, beta: f64, mu: f64, mut log_theta: Vec<f64>) -> Self {
        for s in mdp.terminals() {
            log_theta[s] = beta * mdp.terminal_reward(s).unwrap();
        }
        let mut p = Self {
            log_theta,
            beta,
            mu,
            loss: f64::NAN,
        };
        p.loss = variational_loss(mdp, &p);
        p
    }

    pub fn from_table(mdp: &Mdp, z: &ZTable) -> Self {
        Self::new(mdp, z.beta, z.mu, z.log_z.clone())
    }

    /// `log Z_theta(rho) = sum_i rho_i log theta_i`.
    pub fn log_z_at(&self, rho: &BeliefState) -> f64 {
        rho.rho
            .iter()
            .zip(&self.log_theta)
            .filter(|(&p, _)| p != 0.0)
            .map(|(p, t)| p * t)
            .sum()
    }

    /// Loss divided by `max_s Z_theta(delta_s)^2`.
    pub fn normalized_loss(&self) -> f64 {
        let top = self.log_theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.loss * (-2.0 * top).exp()
    }
}

/// Bellman residuals `Z_theta(delta_s) - sum_a exp(beta R~ + mu) Z_theta(P_a^T delta_s)`
/// at every non-terminal state (0 at terminals), together with the action
/// exponents they were built from.
fn residuals(mdp: &Mdp, p: &VariationalParams) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = mdp.n_states();
    let mut r = vec![0.0; n];
    let mut exps = vec![Vec::new(); n];
    for s in mdp.non_terminals() {
        let e: Vec<f64> = (0..mdp.actions(s).len())
            .map(|a| geometric_exponent(mdp, p.beta, p.mu, s, a, &p.log_theta))
            .collect();
        r[s] = p.log_theta[s].exp() - e.iter().map(|x| x.exp()).sum::<f64>();
        exps[s] = e;
    }
    (r, exps)
}

/// Per-state residuals of the variational Bellman equation in linear scale.
pub fn variational_residuals(mdp: &Mdp, params: &VariationalParams) -> Vec<f64> {
    residuals(mdp, params).0
}

/// `(1/|S|) sum_s residual_s^2`, summed over non-terminal anchors; terminal
/// anchors satisfy their boundary condition by construction.
pub fn variational_loss(mdp: &Mdp, params: &VariationalParams) -> f64 {
    let (r, _) = residuals(mdp, params);
    r.iter().map(|x| x * x).sum::<f64>() / mdp.n_states() as f64
}

/// Analytic gradient of the loss with respect to `log theta`; zero at
/// terminal coordinates.
pub fn variational_gradient(mdp: &Mdp, params: &VariationalParams) -> Vec<f64> {
    let n = mdp.n_states();
    let (r, exps) = residuals(mdp, params);
    let scale = 2.0 / n as f64;
    let mut g = vec![0.0; n];
    for s in mdp.non_terminals() {
        if r[s] == 0.0 {
            continue;
        }
        g[s] += scale * r[s] * params.log_theta[s].exp();
        for (a, e) in mdp.actions(s).iter().zip(&exps[s]) {
            let w = e.exp();
            for o in &a.outcomes {
                if !mdp.is_terminal(o.next) {
                    g[o.next] -= scale * r[s] * w * o.prob;
                }
            }
        }
    }
    g
}

/// Largest gap between the analytic gradient and central finite
/// differences, relative to the sup-norm of the finite-difference gradient.
pub fn gradient_check(mdp: &Mdp, params: &VariationalParams) -> f64 {
    let g = variational_gradient(mdp, params);
    let mut fd = vec![0.0; g.len()];
    for j in mdp.non_terminals() {
        let h = 1e-6 * params.log_theta[j].abs().max(1.0);
        let mut plus = params.clone();
        plus.log_theta[j] += h;
        let mut minus = params.clone();
        minus.log_theta[j] -= h;
        fd[j] = (variational_loss(mdp, &plus) - variational_loss(mdp, &minus)) / (2.0 * h);
    }
    let norm = fd.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if norm == 0.0 {
        return 0.0;
    }
    g.iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / norm
}

/// Starting point for [`variational_gd`].
#[derive(Debug, Clone, PartialEq)]
pub enum GdInit {
    /// `log theta` uniform in `[-3, 1]` at non-terminal states.
    Random { seed: u64 },
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdReport {
    pub params: VariationalParams,
    pub accepted_steps: usize,
    pub loss_history: Vec<f64>,
    /// Gradient check at the starting point (0 when it started converged).
    pub initial_gradient_error: f64,
    pub converged: bool,
}

/// Largest tolerated analytic/finite-difference gradient mismatch.
pub const GRADIENT_CHECK_TOL: f64 = 1e-5;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Gradient descent on the variational loss over non-terminal `log theta`
/// with Armijo backtracking. The step grows after every accepted move.
/// Stops once the normalized loss falls to `cfg.tol^2`.
pub fn variational_gd(
    mdp: &Mdp,
    cfg: &SolverConfig,
    lr: f64,
    iters: usize,
    init: GdInit,
) -> Result<GdReport> {
    precheck(mdp, cfg)?;
    if !(lr > 0.0) {
        return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {lr}")));
    }
    let n = mdp.n_states();
    let x0 = match init {
        GdInit::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.gen_range(-3.0..1.0)).collect()
        }
        GdInit::Given(x) if x.len() == n => x,
        GdInit::Given(x) => {
            return Err(Error::InvalidConfig(format!(
                "initial log theta has {} entries for {n} states",
                x.len()
            )))
        }
    };
    let mut p = VariationalParams::new(mdp, cfg.beta, cfg.mu, x0);
    let target = cfg.tol * cfg.tol;
    let done = |p: &VariationalParams| p.normalized_loss() <= target;

    let initial_gradient_error = if done(&p) { 0.0 } else { gradient_check(mdp, &p) };
    if initial_gradient_error > GRADIENT_CHECK_TOL {
        return Err(Error::Verification(format!(
            "analytic gradient differs from finite differences by {initial_gradient_error:e}"
        )));
    }

    let inner: Vec<usize> = mdp.non_terminals().collect();
    let mut history = vec![p.loss];
    let mut step = lr;
    let mut accepted = 0;
    for _ in 0..iters {
        if done(&p) {
            break;
        }
        let g = variational_gradient(mdp, &p);
        let g2: f64 = inner.iter().map(|&j| g[j] * g[j]).sum();
        if g2 == 0.0 {
            break;
        }
        let mut moved = false;
        let mut tried = p.loss;
        for _ in 0..MAX_HALVINGS {
            let mut x = p.log_theta.clone();
            for &j in &inner {
                x[j] -= step * g[j];
            }
            let cand = VariationalParams::new(mdp, p.beta, p.mu, x);
            tried = cand.loss;
            if cand.loss <= p.loss - ARMIJO * step * g2 {
                p = cand;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            if tried <= p.loss || p.normalized_loss() <= f64::EPSILON * f64::EPSILON {
                // rounding floor: no representable descent step is left
                break;
            }
            let tail: Vec<String> = history.iter().rev().take(5).map(|l| format!("{l:e}")).collect();
            return Err(Error::Diverged(format!(
                "loss rose to {tried:e} from {:e} after {MAX_HALVINGS} halvings; recent losses (newest first): {}",
                p.loss,
                tail.join(", ")
            )));
        }
        accepted += 1;
        history.push(p.loss);
        step *= 2.0;
    }
    let converged = done(&p);
    Ok(GdReport {
        params: p,
        accepted_steps: accepted,
        loss_history: history,
        initial_gradient_error,
        converged,
    })
}

/// Converts fitted parameters into a table, with the log-domain Bellman
/// residual of the geometric-mean equation.
pub fn params_to_table(mdp: &Mdp, report: &GdReport, tol: f64) -> ZTable {
    let p = &report.params;
    let residual = mdp
        .non_terminals()
        .map(|s| abs_diff(variational_backup(mdp, p.beta, p.mu, s, &p.log_theta), p.log_theta[s]))
        .fold(0.0, f64::max);
    ZTable {
        log_z: p.log_theta.clone(),
        beta: p.beta,
        mu: p.mu,
        residual,
        iterations: report.accepted_steps,
        converged: report.converged,
        tol,
        trace: Default::default(),
    }
}

/// Realistic policy `pi(a|s) ∝ prod_{s'} [exp(beta R + mu) Z(s')]^P(s'|s,a)`.
pub fn variational_policy(mdp: &Mdp, z: &ZTable) -> Result<PolicyTable> {
    z.require_converged()?;
    let probs = (0..mdp.n_states())
        .map(|s| {
            if mdp.is_terminal(s) {
                return Vec::new();
            }
            let logits: Vec<f64> = (0..mdp.actions(s).len())
                .map(|a| geometric_exponent(mdp, z.beta, z.mu, s, a, &z.log_z))
                .collect();
            softmax(&logits)
        })
        .collect();
    Ok(PolicyTable { probs })
}

/// One application of the belief-space Bellman operator to the product
/// family member `log_theta`, evaluated at `rho`, in log domain:
/// `log sum_a exp(beta R~(rho,a) + mu) Z_theta(P_a^T rho)`.
pub fn belief_bellman(mdp: &Mdp, beta: f64, mu: f64, log_theta: &[f64], rho: &BeliefState) -> Result<f64> {
    require_uniform(mdp, "the belief Bellman operator")?;
    let Some(first) = mdp.non_terminals().next() else {
        return Err(Error::InvalidConfig("MDP has no non-terminal state".into()));
    };
    let mut acc = LogSumExp::new();
    for a in mdp.actions(first) {
        let (next, r) = belief_step(mdp, rho, &a.name)?;
        let log_x: f64 = next
            .rho
            .iter()
            .zip(log_theta)
            .filter(|(&p, _)| p != 0.0)
            .map(|(p, t)| p * t)
            .sum();
        acc.push(beta * r + mu + log_x);
    }
    Ok(acc.value())
}

/// Sampled contraction ratio of the belief Bellman operator over the product
/// family. Two members agreeing on boundary mixtures are compared at `n_rho`
/// uniformly sampled beliefs; the denominator is taken over the samples and
/// every belief the operator reads.
pub fn belief_contraction_check(mdp: &Mdp, cfg: &SolverConfig, n_rho: usize, seed: u64) -> Result<f64> {
    require_uniform(mdp, "the belief contraction check")?;
    cfg.check()?;
    let report = validate(mdp);
    if let Some(v) = report.violations.first() {
        return Err(Error::InvalidMdp(v.clone()));
    }
    if mdp.non_terminals().next().is_none() {
        return Ok(0.0);
    }
    let n = mdp.n_states();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let scale = rng.gen_range(-2.0..2.0);
        (0..n)
            .map(|s| match mdp.terminal_reward(s) {
                Some(r) => cfg.beta * r,
                None => scale + rng.gen_range(f64::MIN_POSITIVE..1.0).ln(),
            })
            .collect()
    };
    let t1 = draw(&mut rng);
    let t2 = draw(&mut rng);
    let x_at = |t: &[f64], rho: &BeliefState| -> f64 {
        rho.rho
            .iter()
            .zip(t)
            .filter(|(&p, _)| p != 0.0)
            .map(|(p, t)| p * t)
            .sum::<f64>()
            .exp()
    };
    let actions: Vec<String> = mdp
        .actions(mdp.non_terminals().next().unwrap())
        .iter()
        .map(|a| a.name.clone())
        .collect();
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for _ in 0..n_rho {
        let rho = BeliefState::sample(n, &mut rng);
        if rho.is_final(mdp) {
            continue;
        }
        let y1 = belief_bellman(mdp, cfg.beta, cfg.mu, &t1, &rho)?.exp();
        let y2 = belief_bellman(mdp, cfg.beta, cfg.mu, &t2, &rho)?.exp();
        num = num.max((y1 - y2).abs());
        den = den.max((x_at(&t1, &rho) - x_at(&t2, &rho)).abs());
        for a in &actions {
            let (next, _) = belief_step(mdp, &rho, a)?;
            den = den.max((x_at(&t1, &next) - x_at(&t2, &next)).abs());
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}
