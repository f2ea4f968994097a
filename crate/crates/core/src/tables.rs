use crate::error::{Error, Result};
use crate::mdp::Mdp;

/// Per-sweep convergence history of an iterative solver.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    /// Sup-norm change of `log Z` per sweep.
    pub log_change: Vec<f64>,
    /// Sup-norm change of `Z` in linear scale per sweep.
    pub linear_change: Vec<f64>,
}

impl ConvergenceTrace {
    /// Largest ratio between consecutive linear-scale changes, skipping the
    /// first `skip` ratios and steps that did not move.
    pub fn worst_linear_ratio(&self, skip: usize) -> Option<f64> {
        self.linear_change
            .windows(2)
            .skip(skip)
            .filter(|w| w[0] >= f64::MIN_POSITIVE)
            .map(|w| w[1] / w[0])
            .reduce(f64::max)
    }
}

/// Log-partition function per state at a fixed `(beta, mu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZTable {
    pub log_z: Vec<f64>,
    pub beta: f64,
    pub mu: f64,
    /// Sup-norm Bellman residual of `log_z`, in log domain.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Tolerance the table was solved to.
    pub tol: f64,
    pub trace: ConvergenceTrace,
}

impl ZTable {
    pub fn require_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::Unconverged {
                residual: self.residual,
                tol: self.tol,
            })
        }
    }

    /// Sup-norm distance between two tables in log domain.
    pub fn max_abs_diff(&self, other: &ZTable) -> f64 {
        self.log_z
            .iter()
            .zip(&other.log_z)
            .map(|(a, b)| {
                if a == b {
                    0.0
                } else {
                    (a - b).abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueMethod {
    FiniteDifference,
    LinearSystem,
}

/// Value function `V = d log Z / d beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct VTable {
    pub v: Vec<f64>,
    pub beta: f64,
    pub method: ValueMethod,
}

/// Action distribution per state, aligned with `Mdp::actions(s)`.
/// Terminal states have empty rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub probs: Vec<Vec<f64>>,
}

impl PolicyTable {
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }

    /// Largest `|sum_a pi(a|s) - 1|` over non-terminal states.
    pub fn normalization_error(&self) -> f64 {
        self.probs
            .iter()
            .filter(|r| !r.is_empty())
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `(state, action, probability)` triples in index order.
    pub fn entries<'a>(&'a self, mdp: &'a Mdp) -> impl Iterator<Item = (&'a str, &'a str, f64)> + 'a {
        self.probs.iter().enumerate().flat_map(move |(s, row)| {
            row.iter()
                .enumerate()
                .map(move |(a, &p)| (mdp.state_name(s), mdp.actions(s)[a].name.as_str(), p))
        })
    }
}
