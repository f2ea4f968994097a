//! Bundled and generated MDP instances.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{Mdp, MdpBuilder};

/// The JSON source of the bundled decision-tree fixture.
pub const TREE_JSON: &str = include_str!("../fixtures/tree.json");

/// Decision tree: `S0` branches to `S1` (two leaves), `S2` (one leaf) and
/// `S3` (one leaf). Leaves `S4..S6` pay 1, `S7` pays 0, transitions pay 0.
pub fn tree() -> Mdp {
    Mdp::from_json(TREE_JSON).expect("bundled tree fixture is valid")
}

/// The tree with 0.9/0.1 transition noise on every multi-action state: each
/// action lands on its own child with 0.9 and on the next action's child
/// with 0.1.
pub fn noisy_tree() -> Mdp {
    let base = tree();
    let mut b = MdpBuilder::new();
    for name in base.state_names() {
        b.state(name).unwrap();
    }
    for s in base.terminals() {
        b.terminal(base.state_name(s), base.terminal_reward(s).unwrap())
            .unwrap();
    }
    for s in base.non_terminals() {
        let acts = base.actions(s);
        for (i, a) in acts.iter().enumerate() {
            let (own, r) = base.successor(s, i);
            let own = base.state_name(own);
            if acts.len() == 1 {
                b.transition(base.state_name(s), &a.name, &[(own, 1.0, r)])
                    .unwrap();
            } else {
                let (alt, r2) = base.successor(s, (i + 1) % acts.len());
                b.transition(
                    base.state_name(s),
                    &a.name,
                    &[(own, 0.9, r), (base.state_name(alt), 0.1, r2)],
                )
                .unwrap();
            }
        }
    }
    b.build().unwrap()
}

/// Single-action chain `s0 -> s1 -> ... -> f` with the given step rewards.
pub fn chain(rewards: &[f64], terminal_reward: f64) -> Mdp {
    let mut b = MdpBuilder::new();
    let n = rewards.len();
    for i in 0..n {
        b.state(&format!("s{i}")).unwrap();
    }
    b.state("f").unwrap();
    b.terminal("f", terminal_reward).unwrap();
    for (i, &r) in rewards.iter().enumerate() {
        let next = if i + 1 == n {
            "f".to_string()
        } else {
            format!("s{}", i + 1)
        };
        b.transition(&format!("s{i}"), "go", &[(&next, 1.0, r)])
            .unwrap();
    }
    b.build().unwrap()
}

/// Two states: from `s` the only action terminates with probability `p`
/// and loops back with `1 - p`. All rewards are zero.
pub fn geometric(p: f64) -> Mdp {
    let mut b = MdpBuilder::new();
    b.state("s").unwrap();
    b.state("f").unwrap();
    b.terminal("f", 0.0).unwrap();
    b.transition("s", "go", &[("f", p, 0.0), ("s", 1.0 - p, 0.0)])
        .unwrap();
    b.build().unwrap()
}

/// A bet: `risky` pays a terminal bonus of 10 with probability 0.01 and 0
/// otherwise; `safe` reaches a terminal paying 1 for sure.
pub fn risky_bet() -> Mdp {
    let mut b = MdpBuilder::new();
    for s in ["start", "win", "lose", "safe"] {
        b.state(s).unwrap();
    }
    b.terminal("win", 10.0).unwrap();
    b.terminal("lose", 0.0).unwrap();
    b.terminal("safe", 1.0).unwrap();
    b.transition("start", "risky", &[("lose", 0.99, 0.0), ("win", 0.01, 0.0)])
        .unwrap();
    b.transition("start", "safe", &[("safe", 1.0, 0.0)]).unwrap();
    b.build().unwrap()
}

pub const GRID_ACTIONS: [&str; 4] = ["up", "down", "left", "right"];

/// Deterministic maze on a `rows x cols` grid. Passages form a spanning tree
/// carved by a seeded depth-first search, so every cell has a unique
/// shortest route to the goal in the bottom-right corner. Every move costs
/// -1; moving into a wall or the border leaves the agent in place.
pub fn maze_gridworld(rows: usize, cols: usize, seed: u64) -> Result<Mdp> {
    if rows * cols < 2 {
        return Err(Error::InvalidConfig("maze needs at least two cells".into()));
    }
    let n = rows * cols;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // open[cell][dir] for dir in up, down, left, right
    let mut open = vec![[false; 4]; n];
    let mut seen = vec![false; n];
    let goal = n - 1;
    let mut stack = vec![goal];
    seen[goal] = true;
    let neighbour = |c: usize, dir: usize| -> Option<usize> {
        let (r, k) = (c / cols, c % cols);
        match dir {
            0 if r > 0 => Some(c - cols),
            1 if r + 1 < rows => Some(c + cols),
            2 if k > 0 => Some(c - 1),
            3 if k + 1 < cols => Some(c + 1),
            _ => None,
        }
    };
    while let Some(&c) = stack.last() {
        let fresh: Vec<usize> = (0..4)
            .filter(|&d| neighbour(c, d).is_some_and(|t| !seen[t]))
            .collect();
        if fresh.is_empty() {
            stack.pop();
            continue;
        }
        let dir = fresh[rng.gen_range(0..fresh.len())];
        let t = neighbour(c, dir).unwrap();
        open[c][dir] = true;
        open[t][dir ^ 1] = true;
        seen[t] = true;
        stack.push(t);
    }

    let name = |c: usize| format!("r{}c{}", c / cols, c % cols);
    let mut b = MdpBuilder::new();
    for c in 0..n {
        b.state(&name(c))?;
    }
    b.terminal(&name(goal), 0.0)?;
    for c in 0..goal {
        for (dir, act) in GRID_ACTIONS.iter().enumerate() {
            let next = if open[c][dir] {
                neighbour(c, dir).unwrap()
            } else {
                c
            };
            b.transition(&name(c), act, &[(&name(next), 1.0, -1.0)])?;
        }
    }
    b.build()
}

/// Parameters of [`random_mdp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomMdpSpec {
    pub n_states: usize,
    /// Maximum actions per state.
    pub d: usize,
    /// Successors per stochastic action; ignored when deterministic.
    pub branching: usize,
    pub deterministic: bool,
    pub acyclic: bool,
    pub seed: u64,
}

/// Seeded random MDP satisfying every structural invariant.
///
/// The last `max(1, n/4)` states are terminal. Deterministic instances give
/// state 0 exactly `d` actions and every other state between 1 and `d`;
/// stochastic instances give every state `d` actions (uniform action sets).
/// Acyclic instances only move forward in index order. Cyclic instances may
/// move anywhere, except that each state's first action moves forward, so a
/// terminal is always reachable. Transition rewards are drawn from
/// `{0, -0.25, ..., -1}`, terminal rewards from `{-1, -0.75, ..., 1}`.
pub fn random_mdp(spec: RandomMdpSpec) -> Result<Mdp> {
    let RandomMdpSpec {
        n_states,
        d,
        branching,
        deterministic,
        acyclic,
        seed,
    } = spec;
    if n_states < 2 {
        return Err(Error::InvalidConfig(format!(
            "random MDP needs at least 2 states, got {n_states}"
        )));
    }
    if d < 1 || branching < 1 {
        return Err(Error::InvalidConfig(
            "random MDP needs d >= 1 and branching >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_term = (n_states / 4).max(1);
    let m = n_states - n_term;
    let names: Vec<String> = (0..n_states).map(|i| format!("s{i}")).collect();
    let mut b = MdpBuilder::new();
    for n in &names {
        b.state(n)?;
    }
    for t in m..n_states {
        let r = rng.gen_range(-4i32..=4) as f64 * 0.25;
        b.terminal(&names[t], r)?;
    }
    for s in 0..m {
        let k = if !deterministic || s == 0 {
            d
        } else {
            rng.gen_range(1..=d)
        };
        for a in 0..k {
            let lo = if acyclic || a == 0 { s + 1 } else { 0 };
            let span = n_states - lo;
            let width = if deterministic { 1 } else { branching.min(span) };
            let picks = sample(&mut rng, span, width).into_vec();
            let weights: Vec<f64> = (0..width).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let outcomes: Vec<(&str, f64, f64)> = picks
                .iter()
                .zip(&weights)
                .map(|(&p, &w)| {
                    let r = -(rng.gen_range(0..=4) as f64) * 0.25;
                    (names[lo + p].as_str(), w / total, r)
                })
                .collect();
            b.transition(&names[s], &format!("a{a}"), &outcomes)?;
        }
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::validate;

    fn spec(n: usize, d: usize, br: usize, det: bool, acyc: bool, seed: u64) -> RandomMdpSpec {
        RandomMdpSpec {
            n_states: n,
            d,
            branching: br,
            deterministic: det,
            acyclic: acyc,
            seed,
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = random_mdp(spec(6, 2, 1, true, true, 42)).unwrap();
        let b = random_mdp(spec(6, 2, 1, true, true, 42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
        let c = random_mdp(spec(6, 2, 1, true, true, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn minimal_instance() {
        let m = random_mdp(spec(2, 1, 1, true, true, 7)).unwrap();
        assert_eq!(m.non_terminals().count(), 1);
        assert_eq!(m.terminals().count(), 1);
        assert_eq!(m.actions(0).len(), 1);
        assert_eq!(m.successor(0, 0).0, 1);
        assert!(validate(&m).violations.is_empty());
    }

    #[test]
    fn stochastic_acyclic_instance() {
        let m = random_mdp(spec(8, 3, 2, false, true, 1)).unwrap();
        let r = validate(&m);
        assert!(!r.is_deterministic);
        assert!(!r.has_cycles);
        assert!(r.has_uniform_actions);
        assert_eq!(r.d, 3);
        assert!(r.violations.is_empty(), "{:?}", r.violations);
    }

    #[test]
    fn rejects_impossible_parameters() {
        assert!(random_mdp(spec(1, 1, 1, true, true, 0)).is_err());
        assert!(random_mdp(spec(4, 0, 1, true, true, 0)).is_err());
    }

    #[test]
    fn file_round_trip() {
        for seed in 0..5 {
            let m = random_mdp(spec(7, 3, 2, false, false, seed)).unwrap();
            assert_eq!(Mdp::from_json(&m.to_json()).unwrap(), m);
        }
    }

    #[test]
    fn maze_is_valid_and_uniform() {
        let m = maze_gridworld(4, 4, 11).unwrap();
        let r = validate(&m);
        assert!(r.violations.is_empty());
        assert!(r.is_deterministic && r.has_uniform_actions && r.has_cycles);
        assert_eq!(r.d, 4);
        assert_eq!(m.terminals().collect::<Vec<_>>(), vec![15]);
    }

    #[test]
    fn noisy_tree_is_stochastic_and_valid() {
        let m = noisy_tree();
        let r = validate(&m);
        assert!(!r.is_deterministic);
        assert!(r.violations.is_empty());
    }
}
