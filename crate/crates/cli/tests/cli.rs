use std::path::{Path, PathBuf};
use std::process::Command;

use zpart::deterministic::{policy_from_z, value_from_z, z_power_iteration};
use zpart::instances;
use zpart::stochastic::{variational_fixed_point, variational_policy};
use zpart::{Mdp, SolverConfig, ValueMethod};
use zpart_cli::output::format_number;

fn tree_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/tree.json")
}

fn zpart(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_zpart")).args(args).output().unwrap()
}

fn run_to_string(args: &[&str]) -> String {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut full = vec!["zpart"];
    full.extend_from_slice(args);
    full.extend(["--out", out.to_str().unwrap()]);
    assert_eq!(zpart_cli::run(full), 0, "{args:?}");
    std::fs::read_to_string(out).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn plan_det_matches_closed_form() {
    let text = run_to_string(&["plan-det", tree_path().to_str().unwrap(), "--beta", "1", "--mu", "-2", "--method", "power"]);
    assert!(text.starts_with("state,log_z\n"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 8);
    let s0: f64 = rows[0][1].parse().unwrap();
    assert_eq!(rows[0][0], "S0");
    assert!((s0 - (3.0 * (-3f64).exp() + (-4f64).exp()).ln()).abs() < 1e-12);
}

#[test]
fn commands_are_thin_adapters() {
    let t = instances::tree();
    let path = tree_path();
    let p = path.to_str().unwrap();
    let cfg = SolverConfig::new(5.0, -2.0);
    let z = z_power_iteration(&t, &cfg).unwrap();

    let mut want = String::from("state,log_z\n");
    for (s, x) in z.log_z.iter().enumerate() {
        want += &format!("{},{}\n", t.state_name(s), format_number(*x));
    }
    assert_eq!(run_to_string(&["plan-det", p, "--beta", "5"]), want);

    let pi = policy_from_z(&t, &z).unwrap();
    let mut want = String::from("state,action,prob\n");
    for (s, a, x) in pi.entries(&t) {
        want += &format!("{s},{a},{}\n", format_number(x));
    }
    assert_eq!(run_to_string(&["policy", p, "--beta", "5"]), want);

    let v = value_from_z(&t, &z, ValueMethod::LinearSystem).unwrap();
    let mut want = String::from("state,v\n");
    for (s, x) in v.v.iter().enumerate() {
        want += &format!("{},{}\n", t.state_name(s), format_number(*x));
    }
    assert_eq!(run_to_string(&["value", p, "--beta", "5"]), want);

    let noisy = instances::noisy_tree();
    let dir = tempfile::tempdir().unwrap();
    let np = dir.path().join("noisy.json");
    std::fs::write(&np, noisy.to_json()).unwrap();
    let var = variational_fixed_point(&noisy, &cfg).unwrap();
    let pi = variational_policy(&noisy, &var).unwrap();
    let mut want = String::from("state,action,prob\n");
    for (s, a, x) in pi.entries(&noisy) {
        want += &format!("{s},{a},{}\n", format_number(x));
    }
    assert_eq!(
        run_to_string(&["plan-stoch", np.to_str().unwrap(), "--beta", "5", "--emit", "policy"]),
        want
    );
}

#[test]
fn sweep_rows_are_ordered_by_beta() {
    let text = run_to_string(&["sweep-beta", tree_path().to_str().unwrap(), "--betas", "0,1,5,50", "--mu", "-2"]);
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 4 * 7);
    let betas: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(betas.windows(2).all(|w| w[0] <= w[1]));
    let s0: Vec<f64> = rows[..3].iter().map(|r| r[3].parse().unwrap()).collect();
    for (got, want) in s0.iter().zip([0.5, 0.25, 0.25]) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn validate_reports_structure() {
    let out = zpart(&["validate", tree_path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("d = 3\n"));
    assert!(text.contains("mu_threshold = -1.0986"));
}

#[test]
fn errors_exit_with_code_two() {
    let tree = tree_path();
    let p = tree.to_str().unwrap();
    let missing = zpart(&["plan-det", "/definitely/not/here.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("not/here.json"));

    assert_eq!(zpart(&["plan-det", p, "--bogus"]).status.code(), Some(2));
    assert_eq!(zpart(&["plan-det", p, "--method", "jacobi"]).status.code(), Some(2));
    assert_eq!(zpart(&["learn", p, "--alpha", "1.5"]).status.code(), Some(2));
    assert_eq!(zpart(&["plan-det", p, "--method", "naive"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let noisy = dir.path().join("noisy.json");
    std::fs::write(&noisy, instances::noisy_tree().to_json()).unwrap();
    let refused = zpart(&["plan-det", noisy.to_str().unwrap()]);
    assert_eq!(refused.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&refused.stderr).to_string();
    let want = zpart::Error::NotDeterministic("power iteration").to_string();
    assert!(msg.contains(&want[..want.find("use").unwrap_or(want.len())].trim_end()), "{msg}");

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"states": ["a"], "terminal": {}, "transitions": [], "extra": 1}"#).unwrap();
    assert_eq!(zpart(&["validate", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn divergent_mu_is_refused_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let cyclic = dir.path().join("cyclic.json");
    assert_eq!(
        zpart_cli::run(["zpart", "gen-random", "--states", "6", "--d", "3", "--cyclic", "--seed", "4", "--out", cyclic.to_str().unwrap()]),
        0
    );
    let m = Mdp::load(&cyclic).unwrap();
    let err = zpart::validate(&m).check_mu(-0.5).unwrap_err().to_string();
    let out = zpart(&["plan-det", cyclic.to_str().unwrap(), "--mu", "-0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(String::from_utf8_lossy(&out.stderr).trim_end(), format!("error: {err}"));
    let out_path = dir.path().join("never.csv");
    zpart(&["plan-det", cyclic.to_str().unwrap(), "--mu", "-0.5", "--out", out_path.to_str().unwrap()]);
    assert!(!out_path.exists());
}

#[test]
fn generator_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for extra in [vec![], vec!["--stochastic"], vec!["--cyclic"], vec!["--maze", "3x4"]] {
        let path = dir.path().join("g.json");
        let mut args = vec!["zpart", "gen-random", "--seed", "3", "--out", path.to_str().unwrap()];
        args.extend(extra.iter().copied());
        assert_eq!(zpart_cli::run(args), 0);
        let m = Mdp::load(&path).unwrap();
        assert_eq!(Mdp::from_json(&m.to_json()).unwrap(), m);
        let again = std::fs::read_to_string(&path).unwrap();
        assert_eq!(again.trim_end(), m.to_json().trim_end());
    }
}

#[test]
fn json_output_has_records() {
    let text = run_to_string(&["plan-det", tree_path().to_str().unwrap(), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows[0]["state"], "S0");
    assert!(rows[0]["log_z"].is_number());
}

#[test]
fn learn_writes_log_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.json");
    let log = dir.path().join("log.csv");
    let table = dir.path().join("table.csv");
    assert_eq!(zpart_cli::run(["zpart", "gen-random", "--maze", "3x3", "--out", grid.to_str().unwrap()]), 0);
    let code = zpart_cli::run([
        "zpart", "learn", grid.to_str().unwrap(), "--episodes", "30", "--seed", "2",
        "--out", log.to_str().unwrap(), "--table-out", table.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let log = std::fs::read_to_string(log).unwrap();
    assert!(log.starts_with("episode,return,length,delta,truncated\n"));
    assert_eq!(log.lines().count(), 31);
    let table = std::fs::read_to_string(table).unwrap();
    assert_eq!(table.lines().count(), 1 + 8 * 4);
}

#[test]
fn oracle_and_contraction_commands() {
    let p = tree_path();
    let text = run_to_string(&["oracle", p.to_str().unwrap(), "--state", "S0"]);
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 1);
    let z0: f64 = rows[0][1].parse().unwrap();
    assert!((z0 - (3.0 * (-3f64).exp() + (-4f64).exp()).ln()).abs() < 1e-14);
    assert_eq!(rows[0][4], "4");

    let text = run_to_string(&["check-contraction", p.to_str().unwrap()]);
    for row in csv_rows(&text) {
        assert_eq!(row[3], "true", "{row:?}");
    }
}
