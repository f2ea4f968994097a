//! Finite MDP data model.
//!
//! States and actions carry string identifiers in files and are mapped to
//! dense indices in file order. Terminal states have a reward and no
//! actions; every transition outcome carries its own deterministic reward.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on per-(state, action) probability sums when loading a file.
pub const LOAD_PROB_TOL: f64 = 1e-9;
/// Tolerance on per-(state, action) probability sums for a valid MDP.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub name: String,
    pub outcomes: Vec<Outcome>,
}

impl Action {
    /// Expected immediate reward of taking this action.
    pub fn expected_reward(&self) -> f64 {
        self.outcomes.iter().map(|o| o.prob * o.reward).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    names: Vec<String>,
    index: HashMap<String, usize>,
    terminal: Vec<Option<f64>>,
    actions: Vec<Vec<Action>>,
    reward_shift: f64,
}

impl Mdp {
    pub fn n_states(&self) -> usize {
        self.names.len()
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.names[s]
    }

    pub fn state_names(&self) -> &[String] {
        &self.names
    }

    pub fn state_index(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownState(name.to_string()))
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s].is_some()
    }

    pub fn terminal_reward(&self, s: usize) -> Option<f64> {
        self.terminal[s]
    }

    pub fn actions(&self, s: usize) -> &[Action] {
        &self.actions[s]
    }

    pub fn action_index(&self, s: usize, name: &str) -> Result<usize> {
        self.actions[s]
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAction {
                state: self.names[s].clone(),
                action: name.to_string(),
            })
    }

    pub fn terminals(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states()).filter(|&s| self.is_terminal(s))
    }

    pub fn non_terminals(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states()).filter(|&s| !self.is_terminal(s))
    }

    /// Total shift applied to transition rewards by [`normalize_rewards`].
    pub fn reward_shift(&self) -> f64 {
        self.reward_shift
    }

    /// Maximum number of actions over all states (`d`).
    pub fn max_actions(&self) -> usize {
        self.actions.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_deterministic(&self) -> bool {
        self.actions
            .iter()
            .flatten()
            .all(|a| a.outcomes.len() == 1)
    }

    /// Successor and reward of `(s, a)` in a deterministic MDP.
    pub fn successor(&self, s: usize, a: usize) -> (usize, f64) {
        let o = &self.actions[s][a].outcomes[0];
        (o.next, o.reward)
    }

    /// True when every non-terminal state offers the same ordered action names.
    pub fn has_uniform_actions(&self) -> bool {
        let mut it = self.non_terminals();
        let Some(first) = it.next() else {
            return true;
        };
        let names: Vec<&str> = self.actions[first].iter().map(|a| a.name.as_str()).collect();
        it.all(|s| {
            self.actions[s].len() == names.len()
                && self.actions[s]
                    .iter()
                    .zip(&names)
                    .all(|(a, n)| a.name == *n)
        })
    }

    /// Largest terminal reward (the constant `K` of the tail bound), or
    /// `-inf` when there are no terminal states.
    pub fn terminal_reward_max(&self) -> f64 {
        self.terminal
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn transition_rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.actions
            .iter()
            .flatten()
            .flat_map(|a| a.outcomes.iter().map(|o| o.reward))
    }

    /// Detects directed cycles among positive-probability transitions.
    pub fn has_cycles(&self) -> bool {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Open,
            Done,
        }
        let n = self.n_states();
        let mut mark = vec![Mark::New; n];
        for root in 0..n {
            if mark[root] != Mark::New {
                continue;
            }
            // (state, next successor offset to explore)
            let mut stack = vec![(root, 0usize)];
            mark[root] = Mark::Open;
            while let Some(&mut (s, ref mut cursor)) = stack.last_mut() {
                let succ: Vec<usize> = self.actions[s]
                    .iter()
                    .flat_map(|a| a.outcomes.iter().map(|o| o.next))
                    .collect();
                if *cursor < succ.len() {
                    let t = succ[*cursor];
                    *cursor += 1;
                    match mark[t] {
                        Mark::Open => return true,
                        Mark::New => {
                            mark[t] = Mark::Open;
                            stack.push((t, 0));
                        }
                        Mark::Done => {}
                    }
                } else {
                    mark[s] = Mark::Done;
                    stack.pop();
                }
            }
        }
        false
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MdpFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }

    /// Builds an MDP from its file representation, rejecting probability
    /// sums further than [`LOAD_PROB_TOL`] from one. Sums off by more than
    /// [`PROB_TOL`] but within the load tolerance are rescaled.
    pub fn from_file(file: &MdpFile) -> Result<Self> {
        let mut b = MdpBuilder::new();
        for s in &file.states {
            b.state(s)?;
        }
        for (s, r) in &file.terminal {
            b.terminal(s, *r)?;
        }
        for t in &file.transitions {
            let total: f64 = t.to.iter().map(|o| o.prob).sum();
            if (total - 1.0).abs() > LOAD_PROB_TOL {
                return Err(Error::InvalidMdp(format!(
                    "probabilities of ({}, {}) sum to {total}, expected 1 ± {LOAD_PROB_TOL:e}",
                    t.from, t.action
                )));
            }
            let scale = if (total - 1.0).abs() > PROB_TOL { total } else { 1.0 };
            let outcomes: Vec<(&str, f64, f64)> = t
                .to
                .iter()
                .map(|o| (o.state.as_str(), o.prob / scale, o.reward))
                .collect();
            b.transition(&t.from, &t.action, &outcomes)?;
        }
        b.build()
    }

    pub fn to_file(&self) -> MdpFile {
        let terminal = self
            .terminals()
            .map(|s| (self.names[s].clone(), self.terminal[s].unwrap()))
            .collect();
        let transitions = (0..self.n_states())
            .flat_map(|s| {
                self.actions[s].iter().map(move |a| TransitionRecord {
                    from: self.names[s].clone(),
                    action: a.name.clone(),
                    to: a
                        .outcomes
                        .iter()
                        .map(|o| OutcomeRecord {
                            state: self.names[o.next].clone(),
                            prob: o.prob,
                            reward: o.reward,
                        })
                        .collect(),
                })
            })
            .collect();
        MdpFile {
            states: self.names.clone(),
            terminal,
            transitions,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("MDP serialization cannot fail")
    }
}

/// On-disk MDP schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub states: Vec<String>,
    #[serde(default)]
    pub terminal: BTreeMap<String, f64>,
    #[serde(default)]
    pub transitions: Vec<TransitionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRecord {
    pub from: String,
    pub action: String,
    pub to: Vec<OutcomeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRecord {
    pub state: String,
    pub prob: f64,
    pub reward: f64,
}

/// Incremental constructor. Structural errors (unknown or duplicate
/// identifiers) fail here; semantic problems are left to [`validate`].
#[derive(Debug, Default)]
pub struct MdpBuilder {
    names: Vec<String>,
    index: HashMap<String, usize>,
    terminal: Vec<Option<f64>>,
    actions: Vec<Vec<Action>>,
}

impl MdpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&mut self, name: &str) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidMdp(format!("duplicate state `{name}`")));
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.terminal.push(None);
        self.actions.push(Vec::new());
        Ok(id)
    }

    fn lookup(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownState(name.to_string()))
    }

    pub fn terminal(&mut self, name: &str, reward: f64) -> Result<&mut Self> {
        let s = self.lookup(name)?;
        self.terminal[s] = Some(reward);
        Ok(self)
    }

    /// Adds action `action` at `from` with `(next, prob, reward)` outcomes.
    /// Zero-probability outcomes are dropped.
    pub fn transition(
        &mut self,
        from: &str,
        action: &str,
        outcomes: &[(&str, f64, f64)],
    ) -> Result<&mut Self> {
        let s = self.lookup(from)?;
        if self.actions[s].iter().any(|a| a.name == action) {
            return Err(Error::InvalidMdp(format!(
                "duplicate action `{action}` at state `{from}`"
            )));
        }
        let mut out = Vec::with_capacity(outcomes.len());
        for &(next, prob, reward) in outcomes {
            let next = self.lookup(next)?;
            if prob != 0.0 {
                out.push(Outcome { next, prob, reward });
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidMdp(format!(
                "action `{action}` at state `{from}` has no outcome with positive probability"
            )));
        }
        self.actions[s].push(Action {
            name: action.to_string(),
            outcomes: out,
        });
        Ok(self)
    }

    pub fn build(self) -> Result<Mdp> {
        if self.names.is_empty() {
            return Err(Error::InvalidMdp("no states".into()));
        }
        Ok(Mdp {
            names: self.names,
            index: self.index,
            terminal: self.terminal,
            actions: self.actions,
            reward_shift: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub is_deterministic: bool,
    /// Maximum number of actions per state; 0 when no state has actions.
    pub d: usize,
    /// Largest terminal reward, `-inf` without terminal states.
    pub r_terminal_max: f64,
    /// `-log d`; `+inf` when `d = 0`.
    pub mu_threshold: f64,
    pub has_cycles: bool,
    pub has_uniform_actions: bool,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// Convergence warning for `mu` on an acyclic MDP, where the sums stay
    /// finite even above the threshold.
    pub fn mu_warning(&self, mu: f64) -> Option<String> {
        (!self.has_cycles && mu >= self.mu_threshold).then(|| {
            format!(
                "mu = {mu} is not below -log d = {:.6}; accepted because the MDP is acyclic",
                self.mu_threshold
            )
        })
    }

    /// Refuses `mu` when the trajectory sums may diverge.
    pub fn check_mu(&self, mu: f64) -> Result<()> {
        if self.has_cycles && mu >= self.mu_threshold {
            return Err(Error::Divergent {
                mu,
                threshold: self.mu_threshold,
            });
        }
        Ok(())
    }
}

/// Checks the standing assumptions and reports structural facts.
pub fn validate(mdp: &Mdp) -> ValidationReport {
    let mut violations = Vec::new();
    for s in 0..mdp.n_states() {
        let name = mdp.state_name(s);
        match mdp.terminal_reward(s) {
            Some(r) => {
                if !r.is_finite() {
                    violations.push(format!("terminal reward of `{name}` is not finite"));
                }
                if !mdp.actions(s).is_empty() {
                    violations.push(format!("terminal state `{name}` has outgoing transitions"));
                }
            }
            None => {
                if mdp.actions(s).is_empty() {
                    violations.push(format!("non-terminal state `{name}` has no actions"));
                }
            }
        }
        for a in mdp.actions(s) {
            let mut total = 0.0;
            for o in &a.outcomes {
                if !(o.prob >= 0.0) {
                    violations.push(format!(
                        "negative probability {} in ({name}, {})",
                        o.prob, a.name
                    ));
                }
                total += o.prob;
                if !o.reward.is_finite() {
                    violations.push(format!("non-finite reward in ({name}, {})", a.name));
                } else if o.reward > 0.0 {
                    violations.push(format!(
                        "positive transition reward {} in ({name}, {}, {})",
                        o.reward,
                        a.name,
                        mdp.state_name(o.next)
                    ));
                }
            }
            if (total - 1.0).abs() > PROB_TOL {
                violations.push(format!(
                    "probabilities of ({name}, {}) sum to {total}",
                    a.name
                ));
            }
        }
    }
    let d = mdp.max_actions();
    ValidationReport {
        is_deterministic: mdp.is_deterministic(),
        d,
        r_terminal_max: mdp.terminal_reward_max(),
        mu_threshold: -(d as f64).ln(),
        has_cycles: mdp.has_cycles(),
        has_uniform_actions: mdp.has_uniform_actions(),
        violations,
    }
}

/// Shifts all transition rewards by `-R_max` so the largest becomes 0.
/// Terminal rewards are untouched; the shift is accumulated on the result.
pub fn normalize_rewards(mdp: &Mdp) -> Mdp {
    let r_max = mdp
        .transition_rewards()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = mdp.clone();
    if !r_max.is_finite() || r_max == 0.0 {
        return out;
    }
    for o in out
        .actions
        .iter_mut()
        .flatten()
        .flat_map(|a| a.outcomes.iter_mut())
    {
        o.reward -= r_max;
    }
    out.reward_shift += r_max;
    out
}

/// Inverse temperature, chemical potential and iteration controls shared by
/// the planners.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub beta: f64,
    pub mu: f64,
    /// Discount, used only by the Boltzmann baseline.
    pub gamma: f64,
    pub tol: f64,
    /// `None` derives a budget from the contraction factor.
    pub max_iters: Option<usize>,
    pub damping: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            mu: -2.0,
            gamma: 0.99,
            tol: 1e-12,
            max_iters: None,
            damping: 1.0,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn new(beta: f64, mu: f64) -> Self {
        Self {
            beta,
            mu,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if !(self.mu <= 0.0) {
            return bad(format!("mu must be <= 0, got {}", self.mu));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be > 0, got {}", self.tol));
        }
        if self.max_iters == Some(0) {
            return bad("max_iters must be >= 1".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        Ok(())
    }

    /// Iteration budget: `10 * ceil(log(tol) / log(d e^mu)) / damping`,
    /// floored at `max(10 |S|, 1000)` so acyclic instances above the
    /// threshold still finish.
    pub fn iteration_budget(&self, mdp: &Mdp) -> usize {
        if let Some(n) = self.max_iters {
            return n;
        }
        let floor = 10 * mdp.n_states().max(1);
        let rate = (mdp.max_actions().max(1) as f64).ln() + self.mu;
        let est = if rate < 0.0 {
            10.0 * (self.tol.ln() / rate).ceil() / self.damping
        } else {
            0.0
        };
        (est as usize).max(floor).max(1000)
    }
}

/// Checks the config and the MDP assumptions shared by every planner.
pub(crate) fn precheck(mdp: &Mdp, cfg: &SolverConfig) -> Result<ValidationReport> {
    cfg.check()?;
    let report = validate(mdp);
    if let Some(v) = report.violations.first() {
        return Err(Error::InvalidMdp(v.clone()));
    }
    report.check_mu(cfg.mu)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn tree_report() {
        let r = validate(&instances::tree());
        assert_eq!(r.d, 3);
        assert!((r.mu_threshold + 3f64.ln()).abs() < 1e-15);
        assert!((r.mu_threshold - (-1.0986)).abs() < 1e-4);
        assert!(r.is_deterministic);
        assert!(!r.has_cycles);
        assert!(!r.has_uniform_actions);
        assert_eq!(r.r_terminal_max, 1.0);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn single_terminal_state() {
        let mut b = MdpBuilder::new();
        b.state("f").unwrap();
        b.terminal("f", 0.5).unwrap();
        let m = b.build().unwrap();
        let r = validate(&m);
        assert_eq!(r.d, 0);
        assert_eq!(r.mu_threshold, f64::INFINITY);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn positive_reward_is_reported() {
        let mut b = MdpBuilder::new();
        b.state("s").unwrap();
        b.state("f").unwrap();
        b.terminal("f", 0.0).unwrap();
        b.transition("s", "go", &[("f", 1.0, 0.5)]).unwrap();
        let m = b.build().unwrap();
        let r = validate(&m);
        assert_eq!(r.violations.len(), 1);
        assert!(r.violations[0].contains("positive transition reward"));
        assert!(validate(&normalize_rewards(&m)).violations.is_empty());
    }

    #[test]
    fn other_violations() {
        let mut b = MdpBuilder::new();
        b.state("s").unwrap();
        b.state("t").unwrap();
        b.state("f").unwrap();
        b.terminal("f", 0.0).unwrap();
        b.transition("s", "go", &[("f", 0.7, 0.0)]).unwrap();
        b.transition("f", "stay", &[("f", 1.0, 0.0)]).unwrap();
        let r = validate(&b.build().unwrap());
        let joined = r.violations.join("\n");
        assert!(joined.contains("sum to 0.7"), "{joined}");
        assert!(joined.contains("non-terminal state `t` has no actions"));
        assert!(joined.contains("terminal state `f` has outgoing"));
        assert!(r.has_cycles);
    }

    #[test]
    fn normalize_shifts_max_to_zero() {
        let mut b = MdpBuilder::new();
        for s in ["a", "b", "c", "f"] {
            b.state(s).unwrap();
        }
        b.terminal("f", 3.0).unwrap();
        b.transition("a", "x", &[("b", 1.0, -1.0)]).unwrap();
        b.transition("b", "x", &[("c", 1.0, 2.0)]).unwrap();
        b.transition("c", "x", &[("f", 1.0, 0.0)]).unwrap();
        let m = normalize_rewards(&b.build().unwrap());
        let r: Vec<f64> = m.transition_rewards().collect();
        assert_eq!(r, vec![-3.0, 0.0, -2.0]);
        assert_eq!(m.reward_shift(), 2.0);
        assert_eq!(m.terminal_reward(3), Some(3.0));
    }

    #[test]
    fn normalize_identity_cases() {
        let t = instances::tree();
        assert_eq!(normalize_rewards(&t), t);
        let chain = instances::chain(&[-1.0, 0.0, -0.5], 0.0);
        assert_eq!(normalize_rewards(&chain), chain);
    }

    #[test]
    fn load_rejects_bad_probabilities() {
        let text = r#"{"states":["s","f"],"terminal":{"f":0.0},
            "transitions":[{"from":"s","action":"a","to":[{"state":"f","prob":0.9,"reward":0.0}]}]}"#;
        assert!(matches!(Mdp::from_json(text), Err(Error::InvalidMdp(_))));
        let near = r#"{"states":["s","f","g"],"terminal":{"f":0.0,"g":0.0},
            "transitions":[{"from":"s","action":"a","to":[
              {"state":"f","prob":0.3,"reward":0.0},{"state":"g","prob":0.7000000001,"reward":0.0}]}]}"#;
        let m = Mdp::from_json(near).unwrap();
        assert!(validate(&m).violations.is_empty());
    }

    #[test]
    fn load_rejects_unknown_fields_and_states() {
        let extra = r#"{"states":["s"],"terminal":{"s":0.0},"bogus":1}"#;
        assert!(Mdp::from_json(extra).is_err());
        let unknown = r#"{"states":["s"],"terminal":{"x":0.0}}"#;
        assert!(matches!(Mdp::from_json(unknown), Err(Error::UnknownState(_))));
    }

    #[test]
    fn index_order_is_file_order() {
        let t = instances::tree();
        for (i, n) in ["S0", "S1", "S2", "S3", "S4", "S5", "S6", "S7"].iter().enumerate() {
            assert_eq!(t.state_index(n).unwrap(), i);
        }
        assert_eq!(t.action_index(0, "a3").unwrap(), 2);
    }

    #[test]
    fn config_checks() {
        assert!(SolverConfig::default().check().is_ok());
        for bad in [
            SolverConfig { beta: -1.0, ..Default::default() },
            SolverConfig { mu: 0.5, ..Default::default() },
            SolverConfig { gamma: 1.0, ..Default::default() },
            SolverConfig { tol: 0.0, ..Default::default() },
            SolverConfig { max_iters: Some(0), ..Default::default() },
            SolverConfig { damping: 0.0, ..Default::default() },
        ] {
            assert!(bad.check().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn divergence_refusal_only_for_cycles() {
        let cyc = instances::geometric(0.5);
        let r = validate(&cyc);
        assert!(r.has_cycles);
        assert!(r.check_mu(-0.1).is_ok());
        assert!(r.check_mu(0.0).is_err());
        assert!(r.check_mu(0.0).unwrap_err().to_string().contains("-log d"));
        let tree = validate(&instances::tree());
        assert!(tree.check_mu(-0.5).is_ok());
        assert!(tree.mu_warning(-0.5).is_some());
        assert!(tree.mu_warning(-2.0).is_none());
    }
}
