//! Brute-force trajectory enumeration.
//!
//! Reference values for every solver in the crate: partition functions are
//! summed directly over the trajectory ensemble, with no Bellman recursion
//! involved. The walk is a depth-first search on an explicit stack and is
//! capped on the number of expanded prefixes.

use crate::error::{Error, Result};
use crate::logspace::LogSumExp;
use crate::mdp::{validate, Mdp, ValidationReport};

/// Default cap on expanded prefixes.
pub const DEFAULT_CAP: usize = 10_000_000;

/// Reward ties closer than this count as equal when collecting optimal
/// trajectories.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub terminal_state: usize,
    /// Number of transitions.
    pub length: usize,
    /// Negative cumulative reward, terminal reward included.
    pub energy: f64,
    /// Sum of log transition probabilities; 0 for deterministic MDPs.
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult {
    pub log_z: f64,
    /// Bound on `|Z - Z_truncated|` in linear scale; 0 when not truncated.
    pub tail_bound: f64,
    /// The same bound expressed on `|log Z - log Z_truncated|`.
    pub log_tail_bound: f64,
    pub n_trajectories: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NMax {
    /// Best cumulative reward over the ensemble.
    pub v_star: f64,
    /// Length-weighted count of trajectories attaining `v_star`.
    pub n_max: f64,
}

/// A completed trajectory as seen by an enumeration visitor.
struct Leaf<'p> {
    path: &'p [Step],
    terminal: usize,
    reward_sum: f64,
    log_lik: f64,
}

struct Pending {
    state: usize,
    depth: usize,
    step: Option<Step>,
    reward_sum: f64,
    log_lik: f64,
}

/// Enumerator over trajectory ensembles of one MDP.
#[derive(Debug, Clone)]
pub struct Oracle<'m> {
    mdp: &'m Mdp,
    report: ValidationReport,
    max_len: Option<usize>,
    cap: usize,
}

impl<'m> Oracle<'m> {
    pub fn new(mdp: &'m Mdp) -> Result<Self> {
        let report = validate(mdp);
        if let Some(v) = report.violations.first() {
            return Err(Error::InvalidMdp(v.clone()));
        }
        Ok(Self {
            mdp,
            report,
            max_len: None,
            cap: DEFAULT_CAP,
        })
    }

    /// Longest trajectory enumerated. Defaults to `|S|` on acyclic MDPs
    /// (exhaustive) and `10 |S|` on cyclic ones.
    pub fn max_len(mut self, max_len: Option<usize>) -> Self {
        self.max_len = max_len;
        self
    }

    pub fn cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    fn effective_max_len(&self) -> usize {
        self.max_len.unwrap_or_else(|| {
            if self.report.has_cycles {
                10 * self.mdp.n_states()
            } else {
                self.mdp.n_states()
            }
        })
    }

    fn check_det(&self, what: &'static str) -> Result<()> {
        if self.report.is_deterministic {
            Ok(())
        } else {
            Err(Error::NotDeterministic(what))
        }
    }

    /// Depth-first walk over every trajectory from `start` of length at most
    /// `max_len`, optionally forcing the first action. Returns whether any
    /// prefix was cut by the length limit.
    fn walk(
        &self,
        start: usize,
        first_action: Option<usize>,
        max_len: usize,
        mut visit: impl FnMut(&Leaf<'_>),
    ) -> Result<bool> {
        let mdp = self.mdp;
        let mut truncated = false;
        let mut path: Vec<Step> = Vec::new();
        let mut expanded = 0usize;
        let mut stack = vec![Pending {
            state: start,
            depth: 0,
            step: None,
            reward_sum: 0.0,
            log_lik: 0.0,
        }];
        while let Some(p) = stack.pop() {
            expanded += 1;
            if expanded > self.cap {
                return Err(Error::EnumerationCap { cap: self.cap });
            }
            path.truncate(p.depth.saturating_sub(1));
            if let Some(step) = p.step {
                path.push(step);
            }
            if mdp.is_terminal(p.state) {
                visit(&Leaf {
                    path: &path,
                    terminal: p.state,
                    reward_sum: p.reward_sum,
                    log_lik: p.log_lik,
                });
                continue;
            }
            if p.depth == max_len {
                truncated = true;
                continue;
            }
            let actions = mdp.actions(p.state);
            let range = match (p.depth, first_action) {
                (0, Some(a)) => a..a + 1,
                _ => 0..actions.len(),
            };
            // pushed in reverse so the walk visits actions in index order
            for a in range.rev() {
                for o in actions[a].outcomes.iter().rev() {
                    stack.push(Pending {
                        state: o.next,
                        depth: p.depth + 1,
                        step: Some(Step {
                            state: p.state,
                            action: a,
                            reward: o.reward,
                        }),
                        reward_sum: p.reward_sum + o.reward,
                        log_lik: p.log_lik + o.prob.ln(),
                    });
                }
            }
        }
        Ok(truncated)
    }

    fn sum(
        &self,
        s: usize,
        first_action: Option<usize>,
        beta: f64,
        mu: f64,
        with_likelihood: bool,
    ) -> Result<OracleResult> {
        self.report.check_mu(mu)?;
        let max_len = self.effective_max_len();
        let mut acc = LogSumExp::new();
        let mut count = 0usize;
        let truncated = self.walk(s, first_action, max_len, |leaf| {
            let terminal_reward = self.mdp.terminal_reward(leaf.terminal).unwrap();
            let lik = if with_likelihood { leaf.log_lik } else { 0.0 };
            acc.push(beta * (leaf.reward_sum + terminal_reward) + mu * leaf.path.len() as f64 + lik);
            count += 1;
        })?;
        let log_z = acc.value();
        let tail_bound = if truncated {
            let q = self.report.d as f64 * mu.exp();
            if q < 1.0 {
                (beta * self.report.r_terminal_max).exp() * q.powi(max_len as i32 + 1) / (1.0 - q)
            } else {
                f64::INFINITY
            }
        } else {
            0.0
        };
        let log_tail_bound = if tail_bound == 0.0 {
            0.0
        } else {
            (tail_bound * (-log_z).exp()).ln_1p()
        };
        Ok(OracleResult {
            log_z,
            tail_bound,
            log_tail_bound,
            n_trajectories: count,
            truncated,
        })
    }

    /// `log Z(s)` of a deterministic MDP.
    pub fn z(&self, s: usize, beta: f64, mu: f64) -> Result<OracleResult> {
        self.check_det("trajectory enumeration of Z(s)")?;
        self.sum(s, None, beta, mu, false)
    }

    /// `log Z(s, a)`: trajectories whose first action is `a`.
    pub fn z_sa(&self, s: usize, a: usize, beta: f64, mu: f64) -> Result<OracleResult> {
        self.check_det("trajectory enumeration of Z(s, a)")?;
        if self.mdp.is_terminal(s) {
            return Err(Error::TerminalState(self.mdp.state_name(s).to_string()));
        }
        if a >= self.mdp.actions(s).len() {
            return Err(Error::UnknownAction {
                state: self.mdp.state_name(s).to_string(),
                action: format!("#{a}"),
            });
        }
        self.sum(s, Some(a), beta, mu, false)
    }

    /// Likelihood-weighted sum `sum exp(-beta E + mu |w| + L(w))`.
    pub fn z_stochastic(&self, s: usize, beta: f64, mu: f64) -> Result<OracleResult> {
        self.sum(s, None, beta, mu, true)
    }

    /// Best cumulative reward from `s` and the length-weighted count of the
    /// trajectories attaining it. Cyclic MDPs need an explicit `max_len`.
    pub fn n_max(&self, s: usize, mu: f64) -> Result<NMax> {
        self.check_det("optimal-trajectory counting")?;
        if self.report.has_cycles && self.max_len.is_none() {
            return Err(Error::InvalidConfig(
                "the trajectory set of a cyclic MDP is infinite; pass an explicit max_len".into(),
            ));
        }
        let mut best = f64::NEG_INFINITY;
        let mut count = LogSumExp::new();
        self.walk(s, None, self.effective_max_len(), |leaf| {
            let v = leaf.reward_sum + self.mdp.terminal_reward(leaf.terminal).unwrap();
            let w = mu * leaf.path.len() as f64;
            if v > best + TIE_TOL {
                best = v;
                count = LogSumExp::new();
                count.push(w);
            } else if (v - best).abs() <= TIE_TOL {
                count.push(w);
            }
        })?;
        Ok(NMax {
            v_star: best,
            n_max: count.value().exp(),
        })
    }

    /// Materializes every trajectory from `s`. Intended for small instances.
    pub fn trajectories(&self, s: usize) -> Result<Vec<Trajectory>> {
        let mut out = Vec::new();
        self.walk(s, None, self.effective_max_len(), |leaf| {
            let terminal_reward = self.mdp.terminal_reward(leaf.terminal).unwrap();
            out.push(Trajectory {
                steps: leaf.path.to_vec(),
                terminal_state: leaf.terminal,
                length: leaf.path.len(),
                energy: -(leaf.reward_sum + terminal_reward),
                log_likelihood: leaf.log_lik,
            });
        })?;
        Ok(out)
    }
}

pub fn enumerate_z(
    mdp: &Mdp,
    s: usize,
    beta: f64,
    mu: f64,
    max_len: Option<usize>,
) -> Result<OracleResult> {
    Oracle::new(mdp)?.max_len(max_len).z(s, beta, mu)
}

pub fn enumerate_z_sa(
    mdp: &Mdp,
    s: usize,
    a: usize,
    beta: f64,
    mu: f64,
    max_len: Option<usize>,
) -> Result<OracleResult> {
    Oracle::new(mdp)?.max_len(max_len).z_sa(s, a, beta, mu)
}

pub fn enumerate_z_stochastic(
    mdp: &Mdp,
    s: usize,
    beta: f64,
    mu: f64,
    max_len: Option<usize>,
) -> Result<OracleResult> {
    Oracle::new(mdp)?.max_len(max_len).z_stochastic(s, beta, mu)
}

pub fn enumerate_n_max(mdp: &Mdp, s: usize, mu: f64, max_len: Option<usize>) -> Result<NMax> {
    Oracle::new(mdp)?.max_len(max_len).n_max(s, mu)
}
