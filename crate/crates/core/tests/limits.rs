use zpart::deterministic::{boltzmann_baseline, policy_from_z, z_power_iteration};
use zpart::instances::{self, random_mdp, RandomMdpSpec};
use zpart::oracle::{enumerate_n_max, Oracle};
use zpart::stochastic::{variational_gd, variational_fixed_point, GdInit};
use zpart::SolverConfig;

fn acyclic(seed: u64) -> zpart::Mdp {
    random_mdp(RandomMdpSpec {
        n_states: 8,
        d: 3,
        branching: 1,
        deterministic: true,
        acyclic: true,
        seed,
    })
    .unwrap()
}

#[test]
fn low_temperature_policy_follows_optimal_counts() {
    let mu = -1.5;
    for seed in 0..10 {
        let m = acyclic(seed);
        let z = z_power_iteration(&m, &SolverConfig::new(100.0, mu)).unwrap();
        let pi = policy_from_z(&m, &z).unwrap();
        for s in m.non_terminals() {
            let here = enumerate_n_max(&m, s, mu, None).unwrap();
            let mut weights = Vec::new();
            for a in 0..m.actions(s).len() {
                let (next, r) = m.successor(s, a);
                let there = enumerate_n_max(&m, next, mu, None).unwrap();
                let optimal = (r + there.v_star - here.v_star).abs() < 1e-12;
                weights.push(if optimal { mu.exp() * there.n_max } else { 0.0 });
            }
            let total: f64 = weights.iter().sum();
            assert!((total - here.n_max).abs() < 1e-12 * total);
            for (p, w) in pi.row(s).iter().zip(&weights) {
                assert!((p - w / total).abs() < 1e-6, "seed {seed} state {s}: {p} vs {}", w / total);
            }
        }
    }
}

#[test]
fn high_temperature_policy_counts_trajectories() {
    let mu = -1.5;
    for seed in 0..10 {
        let m = acyclic(seed);
        let z = z_power_iteration(&m, &SolverConfig::new(0.0, mu)).unwrap();
        let pi = policy_from_z(&m, &z).unwrap();
        let oracle = Oracle::new(&m).unwrap();
        for s in m.non_terminals() {
            let counts: Vec<f64> = (0..m.actions(s).len())
                .map(|a| oracle.z_sa(s, a, 0.0, mu).unwrap().log_z.exp())
                .collect();
            let total: f64 = counts.iter().sum();
            for (p, c) in pi.row(s).iter().zip(&counts) {
                assert!((p - c / total).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn boltzmann_baseline_ignores_counts_on_the_tree() {
    let t = instances::tree();
    let cold = boltzmann_baseline(&t, &SolverConfig { gamma: 0.99, ..SolverConfig::new(50.0, -2.0) }).unwrap();
    let ours = policy_from_z(&t, &z_power_iteration(&t, &SolverConfig::new(50.0, -2.0)).unwrap()).unwrap();
    assert!((cold.policy.row(0)[0] - 0.5).abs() < 1e-6);
    assert!((ours.row(0)[0] - 2.0 / 3.0).abs() < 1e-6);
}

#[test]
fn gradient_descent_matches_bellman_solution() {
    for seed in 0..5 {
        let m = acyclic(seed);
        let cfg = SolverConfig::new(1.0, -1.5);
        let reference = z_power_iteration(&m, &cfg).unwrap();
        let fp = variational_fixed_point(&m, &cfg).unwrap();
        assert!(fp.max_abs_diff(&reference) <= 1e-10);
        let gd = variational_gd(&m, &cfg, 1.0, 200_000, GdInit::Random { seed }).unwrap();
        assert!(gd.converged, "seed {seed}: loss {:e}", gd.params.normalized_loss());
        for (a, b) in gd.params.log_theta.iter().zip(&reference.log_z) {
            assert!((a - b).abs() <= 1e-6, "seed {seed}: {a} vs {b}");
        }
    }
}
