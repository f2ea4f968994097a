//! State-action partition functions and Z-learning.
//!
//! `Z(s,a) = exp(beta R(s,a) + mu) sum_a' Z(s+a, a')`, with the successor
//! sum replaced by `exp(beta R(s_f))` when `s+a` is terminal. In log domain
//! the geometric learning update is plain linear interpolation, and its
//! derivative in `beta` is the expected-SARSA update of `Q = d log Z / d beta`.
//!
//! `run_episodes` also accepts stochastic environments. The sampled updates
//! then average `Z` arithmetically over landing states, so the learned table
//! approaches the naive averaged Bellman solution rather than the variational
//! one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::deterministic::d_dbeta;
use crate::error::{Error, Result};
use crate::fixed_point::abs_diff;
use crate::logspace::{softmax, LogSumExp};
use crate::mdp::{precheck, validate, Mdp, SolverConfig};
use crate::tables::PolicyTable;

/// `log Z(s,a)` per state and action (empty rows at terminals) with the
/// boundary values `beta R(s_f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZsaTable {
    pub log_z: Vec<Vec<f64>>,
    pub boundary: Vec<Option<f64>>,
    pub beta: f64,
    pub mu: f64,
    /// Sup-norm log-domain Bellman residual; `None` for learned tables.
    pub residual: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ZsaTable {
    /// `log Z(s,a) = 0` at every non-terminal pair.
    pub fn initial(mdp: &Mdp, beta: f64, mu: f64) -> Self {
        let log_z = (0..mdp.n_states())
            .map(|s| vec![0.0; mdp.actions(s).len()])
            .collect();
        let boundary = (0..mdp.n_states())
            .map(|s| mdp.terminal_reward(s).map(|r| beta * r))
            .collect();
        Self {
            log_z,
            boundary,
            beta,
            mu,
            residual: None,
            iterations: 0,
            converged: false,
        }
    }

    fn check_pair(&self, s: usize, a: usize) -> Result<()> {
        match self.log_z.get(s) {
            None => Err(Error::UnknownState(format!("#{s}"))),
            Some(row) if a >= row.len() => Err(Error::UnknownAction {
                state: format!("#{s}"),
                action: format!("#{a}"),
            }),
            Some(_) => Ok(()),
        }
    }

    /// `log sum_a' Z(s', a')`, or the boundary value when `s'` is terminal.
    pub fn log_successor(&self, s_next: usize) -> f64 {
        match self.boundary[s_next] {
            Some(b) => b,
            None => {
                let mut acc = LogSumExp::new();
                for &x in &self.log_z[s_next] {
                    acc.push(x);
                }
                acc.value()
            }
        }
    }

    /// `log Z(s) = log sum_a Z(s,a)` per state, boundary values at terminals.
    pub fn marginal(&self) -> Vec<f64> {
        (0..self.log_z.len()).map(|s| self.log_successor(s)).collect()
    }

    /// Greedy action per state, lowest index on ties; `None` at terminals.
    pub fn greedy(&self) -> Vec<Option<usize>> {
        self.log_z.iter().map(|row| argmax(row)).collect()
    }

    /// `pi(a|s) = Z(s,a) / sum_a' Z(s,a')`.
    pub fn proportional_policy(&self) -> PolicyTable {
        PolicyTable {
            probs: self
                .log_z
                .iter()
                .map(|row| if row.is_empty() { Vec::new() } else { softmax(row) })
                .collect(),
        }
    }

    pub fn require_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::Unconverged {
                residual: self.residual.unwrap_or(f64::INFINITY),
                tol: f64::NAN,
            })
        }
    }
}

/// First index of the largest entry.
fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        if best.map_or(true, |b| x > xs[b]) {
            best = Some(i);
        }
    }
    best
}

fn require_deterministic(mdp: &Mdp) -> Result<()> {
    if mdp.is_deterministic() {
        Ok(())
    } else {
        Err(Error::NotDeterministic("state-action planning"))
    }
}

/// Backup target `beta r + mu + log sum_a' Z(s', a')`.
fn target(table: &ZsaTable, r: f64, s_next: usize) -> f64 {
    table.beta * r + table.mu + table.log_successor(s_next)
}

/// Damped fixed-point iteration of the state-action Bellman equation.
pub fn zsa_planning_solve(mdp: &Mdp, cfg: &SolverConfig) -> Result<ZsaTable> {
    precheck(mdp, cfg)?;
    require_deterministic(mdp)?;
    let budget = cfg.iteration_budget(mdp);
    let mut table = ZsaTable::initial(mdp, cfg.beta, cfg.mu);
    let mut next = table.log_z.clone();
    let mut residual;
    let mut iterations = 0;
    loop {
        residual = 0.0f64;
        for s in mdp.non_terminals() {
            for a in 0..mdp.actions(s).len() {
                let (succ, r) = mdp.successor(s, a);
                let t = target(&table, r, succ);
                let x = table.log_z[s][a];
                residual = residual.max(abs_diff(t, x));
                next[s][a] = if cfg.damping == 1.0 {
                    t
                } else {
                    (1.0 - cfg.damping) * x + cfg.damping * t
                };
            }
        }
        if residual <= cfg.tol || iterations == budget {
            break;
        }
        std::mem::swap(&mut table.log_z, &mut next);
        iterations += 1;
    }
    table.residual = Some(residual);
    table.iterations = iterations;
    table.converged = residual <= cfg.tol;
    Ok(table)
}

/// `Q(s,a) = d log Z(s,a) / d beta` per pair, with `R(s_f)` at terminals.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub q: Vec<Vec<f64>>,
    pub terminal_value: Vec<Option<f64>>,
    pub beta: f64,
    /// Sup-norm residual of `Q(s,a) = R + sum_a' pi(a'|s') Q(s',a')`, when
    /// checked.
    pub residual: Option<f64>,
}

impl QTable {
    pub fn zeros(mdp: &Mdp, beta: f64) -> Self {
        Self {
            q: (0..mdp.n_states())
                .map(|s| vec![0.0; mdp.actions(s).len()])
                .collect(),
            terminal_value: (0..mdp.n_states()).map(|s| mdp.terminal_reward(s)).collect(),
            beta,
            residual: None,
        }
    }

    /// `sum_a' w(a'|s') Q(s',a')` with `w` proportional to `Z(s',a')`, or
    /// `R(s_f)` when `s'` is terminal.
    fn expected_next(&self, weights_from: &ZsaTable, s_next: usize) -> f64 {
        match self.terminal_value[s_next] {
            Some(v) => v,
            None => softmax(&weights_from.log_z[s_next])
                .iter()
                .zip(&self.q[s_next])
                .map(|(w, q)| w * q)
                .sum(),
        }
    }
}

/// Finite-difference `Q` from two planning solves at `beta ± h` (one-sided
/// when `beta < h`), checked against the policy-weighted `Q` recursion.
pub fn q_from_zsa(mdp: &Mdp, cfg: &SolverConfig, h: f64) -> Result<QTable> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidConfig(format!("step h must be > 0, got {h}")));
    }
    let center = zsa_planning_solve(mdp, cfg)?;
    center.require_converged()?;
    let flat = d_dbeta(cfg.beta, h, |b| {
        let t = zsa_planning_solve(mdp, &SolverConfig { beta: b, ..cfg.clone() })?;
        t.require_converged()?;
        Ok(t.log_z.concat())
    })?;
    let mut q = QTable::zeros(mdp, cfg.beta);
    let mut k = 0;
    for row in q.q.iter_mut() {
        for x in row.iter_mut() {
            *x = flat[k];
            k += 1;
        }
    }
    let mut residual = 0.0f64;
    for s in mdp.non_terminals() {
        for a in 0..mdp.actions(s).len() {
            let (succ, r) = mdp.successor(s, a);
            let rhs = r + q.expected_next(&center, succ);
            residual = residual.max((q.q[s][a] - rhs).abs());
        }
    }
    q.residual = Some(residual);
    let bound = 10.0 * h * h + cfg.tol;
    if residual > bound {
        return Err(Error::Verification(format!(
            "Q recursion residual {residual:e} exceeds {bound:e}"
        )));
    }
    Ok(q)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

fn check_successor(boundary: &[Option<f64>], s_next: usize, terminal: bool) -> Result<()> {
    match boundary.get(s_next) {
        None => Err(Error::UnknownState(format!("#{s_next}"))),
        Some(b) if b.is_some() != terminal => Err(Error::InvalidConfig(format!(
            "terminal flag {terminal} does not match state #{s_next}"
        ))),
        Some(_) => Ok(()),
    }
}

/// `log Z(s,a) <- (1-alpha) log Z(s,a) + alpha (beta r + mu + log sum_a' Z(s',a'))`.
/// Returns the absolute change of the entry.
pub fn z_learning_update(
    table: &mut ZsaTable,
    s: usize,
    a: usize,
    r: f64,
    s_next: usize,
    terminal: bool,
    alpha: f64,
) -> Result<f64> {
    table.check_pair(s, a)?;
    check_successor(&table.boundary, s_next, terminal)?;
    check_alpha(alpha)?;
    let old = table.log_z[s][a];
    let new = if alpha == 0.0 {
        old
    } else if alpha == 1.0 {
        target(table, r, s_next)
    } else {
        (1.0 - alpha) * old + alpha * target(table, r, s_next)
    };
    table.log_z[s][a] = new;
    Ok(abs_diff(new, old))
}

/// `Q(s,a) <- (1-alpha) Q(s,a) + alpha (r + sum_a' w(a'|s') Q(s',a'))` with
/// `w` proportional to `Z(s',a')` from `weights_from`.
#[allow(clippy::too_many_arguments)]
pub fn expected_sarsa_update(
    q: &mut QTable,
    weights_from: &ZsaTable,
    s: usize,
    a: usize,
    r: f64,
    s_next: usize,
    terminal: bool,
    alpha: f64,
) -> Result<f64> {
    weights_from.check_pair(s, a)?;
    check_successor(&q.terminal_value, s_next, terminal)?;
    check_alpha(alpha)?;
    let old = q.q[s][a];
    let t = r + q.expected_next(weights_from, s_next);
    let new = if alpha == 1.0 { t } else { (1.0 - alpha) * old + alpha * t };
    q.q[s][a] = new;
    Ok((new - old).abs())
}

/// Action selection from one row of `log Z(s, .)`.
pub trait Exploration: Send + Sync {
    fn name(&self) -> &'static str;
    fn select(&self, log_z: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> usize;
}

/// Greedy with probability `1 - epsilon`, uniform otherwise.
pub struct EpsilonGreedy;

impl Exploration for EpsilonGreedy {
    fn name(&self) -> &'static str {
        "epsilon-greedy"
    }

    fn select(&self, log_z: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> usize {
        if rng.gen::<f64>() < epsilon {
            rng.gen_range(0..log_z.len())
        } else {
            argmax(log_z).unwrap()
        }
    }
}

/// Samples `a` with probability proportional to `Z(s,a)` (Gumbel-max).
pub struct BoltzmannLike;

impl Exploration for BoltzmannLike {
    fn name(&self) -> &'static str {
        "boltzmann-like"
    }

    fn select(&self, log_z: &[f64], _epsilon: f64, rng: &mut ChaCha8Rng) -> usize {
        let perturbed: Vec<f64> = log_z
            .iter()
            .map(|&x| {
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                x - (-u.ln()).ln()
            })
            .collect();
        argmax(&perturbed).unwrap()
    }
}

static EXPLORATIONS: &[&dyn Exploration] = &[&EpsilonGreedy, &BoltzmannLike];

/// Registered exploration strategies.
pub fn exploration_names() -> Vec<&'static str> {
    EXPLORATIONS.iter().map(|e| e.name()).collect()
}

pub fn exploration(name: &str) -> Result<&'static dyn Exploration> {
    EXPLORATIONS
        .iter()
        .copied()
        .find(|e| e.name() == name)
        .ok_or_else(|| {
            Error::InvalidConfig(format!(
                "unknown exploration '{name}' (expected one of: {})",
                exploration_names().join(", ")
            ))
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaSchedule {
    Constant,
    /// `alpha0 / (1 + (n - 1) alpha0)` on the `n`-th visit of a pair.
    VisitCount,
    /// `alpha0 / (1 + k)` in episode `k` (from 0).
    Harmonic,
}

impl AlphaSchedule {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "constant" => Ok(Self::Constant),
            "visit-count" => Ok(Self::VisitCount),
            "harmonic" => Ok(Self::Harmonic),
            _ => Err(Error::InvalidConfig(format!(
                "unknown alpha schedule '{name}' (expected constant, visit-count or harmonic)"
            ))),
        }
    }

    pub fn rate(self, alpha0: f64, visits: usize, episode: usize) -> f64 {
        match self {
            Self::Constant => alpha0,
            Self::VisitCount => alpha0 / (1.0 + (visits.max(1) - 1) as f64 * alpha0),
            Self::Harmonic => alpha0 / (1.0 + episode as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub alpha: f64,
    pub schedule: AlphaSchedule,
    pub epsilon: f64,
    pub exploration: String,
    pub beta: f64,
    pub mu: f64,
    pub episodes: usize,
    pub seed: u64,
    /// Per-episode step cap; `None` means `100 |S|`.
    pub max_steps: Option<usize>,
    /// Start state; `None` draws a non-terminal state uniformly per episode.
    pub start: Option<usize>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            schedule: AlphaSchedule::VisitCount,
            epsilon: 0.1,
            exploration: "epsilon-greedy".into(),
            beta: 1.0,
            mu: -2.0,
            episodes: 1000,
            seed: 0,
            max_steps: None,
            start: None,
        }
    }
}

impl AgentConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if self.max_steps == Some(0) {
            return Err(Error::InvalidConfig("max_steps must be >= 1".into()));
        }
        exploration(&self.exploration)?;
        SolverConfig::new(self.beta, self.mu).check()
    }
}

/// Chooses an action at non-terminal `s` with the configured strategy.
pub fn select_action(table: &ZsaTable, s: usize, cfg: &AgentConfig, rng: &mut ChaCha8Rng) -> Result<usize> {
    let row = table
        .log_z
        .get(s)
        .ok_or_else(|| Error::UnknownState(format!("#{s}")))?;
    if table.boundary[s].is_some() || row.is_empty() {
        return Err(Error::TerminalState(format!("#{s}")));
    }
    Ok(exploration(&cfg.exploration)?.select(row, cfg.epsilon, rng))
}

/// Samples `(s', r)` for action `a` at `s`.
pub fn sample_outcome(mdp: &Mdp, s: usize, a: usize, rng: &mut ChaCha8Rng) -> (usize, f64) {
    let outcomes = &mdp.actions(s)[a].outcomes;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for o in outcomes {
        acc += o.prob;
        if u < acc {
            return (o.next, o.reward);
        }
    }
    let last = outcomes.last().unwrap();
    (last.next, last.reward)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Sum of rewards, plus `R(s_f)` when a terminal state was reached.
    pub ret: f64,
    pub length: usize,
    /// Largest single-entry change of `log Z` during the episode.
    pub delta: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningLog {
    pub episodes: Vec<EpisodeRecord>,
    pub table: ZsaTable,
}

/// Episodic Z-learning against a seeded simulator of `mdp`.
pub fn run_episodes(mdp: &Mdp, cfg: &AgentConfig) -> Result<LearningLog> {
    cfg.check()?;
    let solver_cfg = SolverConfig::new(cfg.beta, cfg.mu);
    precheck(mdp, &solver_cfg)?;
    let strategy = exploration(&cfg.exploration)?;
    let starts: Vec<usize> = match cfg.start {
        Some(s) if s >= mdp.n_states() => return Err(Error::UnknownState(format!("#{s}"))),
        Some(s) if mdp.is_terminal(s) => return Err(Error::TerminalState(mdp.state_name(s).into())),
        Some(s) => vec![s],
        None => mdp.non_terminals().collect(),
    };
    let mut table = ZsaTable::initial(mdp, cfg.beta, cfg.mu);
    let mut episodes = Vec::with_capacity(cfg.episodes);
    if starts.is_empty() {
        return Ok(LearningLog { episodes, table });
    }
    let cap = cfg.max_steps.unwrap_or(100 * mdp.n_states());
    let mut visits: Vec<Vec<usize>> = table.log_z.iter().map(|r| vec![0; r.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for k in 0..cfg.episodes {
        let mut s = starts[rng.gen_range(0..starts.len())];
        let (mut ret, mut length, mut delta) = (0.0, 0, 0.0f64);
        while !mdp.is_terminal(s) && length < cap {
            let a = strategy.select(&table.log_z[s], cfg.epsilon, &mut rng);
            let (next, r) = sample_outcome(mdp, s, a, &mut rng);
            visits[s][a] += 1;
            let alpha = cfg.schedule.rate(cfg.alpha, visits[s][a], k);
            delta = delta.max(z_learning_update(&mut table, s, a, r, next, mdp.is_terminal(next), alpha)?);
            ret += r;
            length += 1;
            s = next;
        }
        let truncated = !mdp.is_terminal(s);
        if !truncated {
            ret += mdp.terminal_reward(s).unwrap();
        }
        episodes.push(EpisodeRecord {
            episode: k,
            ret,
            length,
            delta,
            truncated,
        });
    }
    Ok(LearningLog { episodes, table })
}

/// Checks that `mdp` is valid for learning without running anything.
pub fn check_learnable(mdp: &Mdp) -> Result<()> {
    match validate(mdp).violations.first() {
        Some(v) => Err(Error::InvalidMdp(v.clone())),
        None => Ok(()),
    }
}
