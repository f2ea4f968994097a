use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zpart::deterministic::{
    contraction_check, policy_from_z, value_from_z, z_linear_solve, z_power_iteration,
};
use zpart::instances::{random_mdp, RandomMdpSpec};
use zpart::logspace::log_sum_exp;
use zpart::model_free::{z_learning_update, zsa_planning_solve, ZsaTable};
use zpart::oracle::Oracle;
use zpart::stochastic::{
    belief_contraction_check, naive_avg_bellman_solve, variational_fixed_point, variational_policy,
};
use zpart::{Mdp, SolverConfig, ValueMethod};

fn deterministic_mdp() -> impl Strategy<Value = Mdp> {
    (2usize..=8, 1usize..=3, any::<bool>(), any::<u64>()).prop_map(|(n, d, acyclic, seed)| {
        random_mdp(RandomMdpSpec {
            n_states: n,
            d,
            branching: 1,
            deterministic: true,
            acyclic,
            seed,
        })
        .unwrap()
    })
}

fn stochastic_mdp() -> impl Strategy<Value = Mdp> {
    (3usize..=7, 1usize..=3, 1usize..=3, any::<bool>(), any::<u64>()).prop_map(
        |(n, d, branching, acyclic, seed)| {
            random_mdp(RandomMdpSpec {
                n_states: n,
                d,
                branching,
                deterministic: false,
                acyclic,
                seed,
            })
            .unwrap()
        },
    )
}

/// Full depth on acyclic MDPs; on cyclic ones, deep enough for a useful
/// tail bound while keeping `d^L` enumerable.
fn enumeration_depth(m: &Mdp) -> usize {
    if !m.has_cycles() {
        return m.n_states();
    }
    let d = m.max_actions() as f64;
    if d <= 1.0 {
        40
    } else {
        (2e5f64.ln() / d.ln()).floor() as usize
    }
}

/// `mu` safely inside the convergence region for `d <= 3`.
fn mu() -> impl Strategy<Value = f64> {
    -4.0..-1.2f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_and_linear_agree(m in deterministic_mdp(), beta in 0.0..6.0f64, mu in mu()) {
        let cfg = SolverConfig::new(beta, mu);
        let a = z_power_iteration(&m, &cfg).unwrap();
        let b = z_linear_solve(&m, &cfg).unwrap();
        prop_assert!(a.converged);
        prop_assert!(a.max_abs_diff(&b) <= 1e-8);
    }

    #[test]
    fn solver_matches_enumeration(m in deterministic_mdp(), beta in 0.0..5.0f64, mu in mu()) {
        let z = z_power_iteration(&m, &SolverConfig::new(beta, mu)).unwrap();
        let oracle = Oracle::new(&m).unwrap().max_len(Some(enumeration_depth(&m)));
        for s in m.non_terminals() {
            let o = oracle.z(s, beta, mu).unwrap();
            prop_assert!((z.log_z[s] - o.log_z).abs() <= o.log_tail_bound + 1e-8,
                "state {s}: {} vs {} (+{})", z.log_z[s], o.log_z, o.log_tail_bound);
        }
    }

    #[test]
    fn policy_rows_are_distributions(m in deterministic_mdp(), beta in 0.0..50.0f64, mu in mu()) {
        let z = z_power_iteration(&m, &SolverConfig::new(beta, mu)).unwrap();
        let pi = policy_from_z(&m, &z).unwrap();
        prop_assert!(pi.normalization_error() <= 1e-12);
        for s in m.non_terminals() {
            prop_assert!(pi.row(s).iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn operator_contracts(m in deterministic_mdp(), beta in 0.0..5.0f64, mu in mu(), seed in any::<u64>()) {
        let cfg = SolverConfig::new(beta, mu);
        let ratio = contraction_check(&m, &cfg, 20, seed).unwrap();
        prop_assert!(ratio <= m.max_actions() as f64 * mu.exp() * (1.0 + 1e-12));
    }

    #[test]
    fn residuals_shrink_geometrically(m in deterministic_mdp(), beta in 0.0..5.0f64, mu in mu()) {
        let z = z_power_iteration(&m, &SolverConfig::new(beta, mu)).unwrap();
        let q = m.max_actions() as f64 * mu.exp();
        for w in z.trace.linear_change.windows(2).skip(1) {
            if w[0] > 1e-250 {
                prop_assert!(w[1] <= q * w[0] * (1.0 + 1e-9) + 1e-300, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn value_methods_agree(m in deterministic_mdp(), beta in 0.0..5.0f64, mu in mu()) {
        let z = z_power_iteration(&m, &SolverConfig::new(beta, mu)).unwrap();
        let fd = value_from_z(&m, &z, ValueMethod::FiniteDifference).unwrap();
        let lin = value_from_z(&m, &z, ValueMethod::LinearSystem).unwrap();
        for (a, b) in fd.v.iter().zip(&lin.v) {
            prop_assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn z_grows_with_mu(m in deterministic_mdp(), beta in 0.0..5.0f64, mu in -4.0..-1.5f64) {
        let lo = z_power_iteration(&m, &SolverConfig::new(beta, mu)).unwrap();
        let hi = z_power_iteration(&m, &SolverConfig::new(beta, mu + 0.25)).unwrap();
        for s in m.non_terminals() {
            prop_assert!(hi.log_z[s] > lo.log_z[s]);
        }
    }

    #[test]
    fn pair_tables_marginalize(m in deterministic_mdp(), beta in 0.0..5.0f64, mu in mu()) {
        let cfg = SolverConfig::new(beta, mu);
        let pairs = zsa_planning_solve(&m, &cfg).unwrap();
        let states = z_power_iteration(&m, &cfg).unwrap();
        for (a, b) in pairs.marginal().iter().zip(&states.log_z) {
            // relative error in Z is the absolute error in log Z
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn learning_update_is_log_linear(
        x in -20.0..5.0f64, r in -3.0..0.0f64, alpha in 0.0..=1.0f64, succ in proptest::collection::vec(-10.0..3.0f64, 1..4),
    ) {
        let mut b = zpart::MdpBuilder::new();
        for s in ["s", "t", "f"] { b.state(s).unwrap(); }
        b.terminal("f", 0.0).unwrap();
        b.transition("s", "go", &[("t", 1.0, r)]).unwrap();
        for k in 0..succ.len() {
            b.transition("t", &format!("a{k}"), &[("f", 1.0, 0.0)]).unwrap();
        }
        let m = b.build().unwrap();
        let (beta, mu) = (1.3, -2.0);
        let mut table = ZsaTable::initial(&m, beta, mu);
        table.log_z[0][0] = x;
        table.log_z[1] = succ.clone();
        z_learning_update(&mut table, 0, 0, r, 1, false, alpha).unwrap();
        let want = (1.0 - alpha) * x + alpha * (beta * r + mu + log_sum_exp(&succ));
        prop_assert!((table.log_z[0][0] - want).abs() <= 4.0 * f64::EPSILON * want.abs().max(1.0));
    }

    #[test]
    fn jensen_ordering(m in stochastic_mdp(), beta in 0.0..4.0f64, mu in mu()) {
        let cfg = SolverConfig::new(beta, mu);
        let naive = naive_avg_bellman_solve(&m, &cfg).unwrap();
        let var = variational_fixed_point(&m, &cfg).unwrap();
        prop_assert!(naive.converged && var.converged);
        for s in 0..m.n_states() {
            prop_assert!(var.log_z[s] <= naive.log_z[s] + 1e-10);
        }
        prop_assert!(variational_policy(&m, &var).unwrap().normalization_error() <= 1e-10);
    }

    #[test]
    fn belief_operator_contracts(m in stochastic_mdp(), beta in 0.0..4.0f64, mu in mu(), seed in any::<u64>()) {
        let ratio = belief_contraction_check(&m, &SolverConfig::new(beta, mu), 50, seed).unwrap();
        prop_assert!(ratio <= m.max_actions() as f64 * mu.exp() * (1.0 + 1e-9));
    }

    #[test]
    fn log_sum_exp_is_shift_invariant(xs in proptest::collection::vec(-50.0..50.0f64, 1..10), c in -700.0..700.0f64) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let a = log_sum_exp(&xs) + c;
        let b = log_sum_exp(&shifted);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        let direct = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        prop_assert!((log_sum_exp(&xs) - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }
}

#[test]
fn stochastic_enumeration_matches_naive_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10 {
        let m = random_mdp(RandomMdpSpec {
            n_states: rng.gen_range(3..=6),
            d: rng.gen_range(1..=2),
            branching: 2,
            deterministic: false,
            acyclic: rng.gen(),
            seed: rng.gen(),
        })
        .unwrap();
        let z = naive_avg_bellman_solve(&m, &SolverConfig::new(1.0, -1.5)).unwrap();
        let oracle = Oracle::new(&m).unwrap().max_len(Some(if m.has_cycles() { 14 } else { m.n_states() }));
        for s in m.non_terminals() {
            let o = oracle.z_stochastic(s, 1.0, -1.5).unwrap();
            assert!((z.log_z[s] - o.log_z).abs() <= o.log_tail_bound + 1e-8);
        }
    }
}
