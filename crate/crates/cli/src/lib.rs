//! Command-line front end: loads MDP files, runs planners, learners and
//! the enumeration oracle, and writes result tables.

pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use zpart::deterministic::{
    boltzmann_baseline, contraction_check, policy_from_z, value_from_z,
};
use zpart::instances::{maze_gridworld, random_mdp, RandomMdpSpec};
use zpart::model_free::{run_episodes, AgentConfig, AlphaSchedule};
use zpart::oracle::{Oracle, DEFAULT_CAP};
use zpart::solver::solver;
use zpart::stochastic::{
    belief_contraction_check, naive_avg_bellman_solve, naive_value_diagnostic, params_to_table,
    variational_gd, variational_policy, GdInit, NaiveDiagnostic,
};
use zpart::{validate, Mdp, PolicyTable, SolverConfig, ValueMethod, ZTable};

pub use output::{emit_table, Cell, Format, Table};

#[derive(Debug, Parser)]
#[command(name = "zpart", version, about = "Partition-function planning and learning in finite MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    beta: f64,
    #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
    mu: f64,
    /// Discount of the Boltzmann baseline.
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    damping: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            beta: self.beta,
            mu: self.mu,
            gamma: self.gamma,
            tol: self.tol,
            max_iters: self.max_iters,
            damping: self.damping,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ValueArg {
    /// Finite difference of `log Z` in `beta`.
    Fd,
    /// Linear policy-evaluation system.
    Linear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StochEmit {
    Z,
    Policy,
    Weights,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check an MDP file and print its structural report.
    Validate {
        mdp: PathBuf,
        /// Also check this chemical potential against the MDP.
        #[arg(long, allow_negative_numbers = true)]
        mu: Option<f64>,
    },
    /// Brute-force trajectory enumeration.
    Oracle {
        mdp: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Longest trajectory enumerated (transitions).
        #[arg(long)]
        max_len: Option<usize>,
        /// Maximum number of expanded prefixes.
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: usize,
        /// Restrict to one state.
        #[arg(long)]
        state: Option<String>,
        /// Report optimal return and length-weighted optimal count instead.
        #[arg(long)]
        n_max: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Solve for `log Z` on a deterministic MDP.
    PlanDet {
        mdp: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value = "power")]
        method: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Value function `d log Z / d beta`.
    Value {
        mdp: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value = "power")]
        method: String,
        #[arg(long, value_enum, default_value_t = ValueArg::Linear)]
        value_method: ValueArg,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Policy induced by `Z`.
    Policy {
        mdp: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value = "power")]
        method: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Boltzmann policy over expected discounted returns, for comparison.
    BaselineBoltzmann {
        mdp: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sampled contraction ratios against the bound `d exp(mu)`.
    CheckContraction {
        mdp: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Solve a stochastic MDP.
    PlanStoch {
        mdp: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value = "variational-fp")]
        method: String,
        /// Initial step of the gradient method.
        #[arg(long, default_value_t = 1.0)]
        lr: f64,
        /// Step budget of the gradient method.
        #[arg(long, default_value_t = 100_000)]
        iters: usize,
        /// `z`, the realistic `policy`, or the naive `weights` diagnostic.
        #[arg(long, value_enum, default_value_t = StochEmit::Z)]
        emit: StochEmit,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Episodic Z-learning against a simulator of the MDP.
    Learn {
        mdp: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
        mu: f64,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// constant, visit-count or harmonic.
        #[arg(long, default_value = "visit-count")]
        schedule: String,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value = "epsilon-greedy")]
        exploration: String,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Fixed start state; uniform over non-terminal states otherwise.
        #[arg(long)]
        start: Option<String>,
        /// Also write the learned table with greedy and proportional policies.
        #[arg(long)]
        table_out: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Policies over a list of `beta` values.
    SweepBeta {
        mdp: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
        #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
        mu: f64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        damping: f64,
        #[arg(long, default_value = "power")]
        method: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write a seeded random MDP (or maze gridworld) as JSON.
    GenRandom {
        #[arg(long, default_value_t = 8)]
        states: usize,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, default_value_t = 2)]
        branching: usize,
        #[arg(long)]
        stochastic: bool,
        #[arg(long)]
        cyclic: bool,
        /// Maze gridworld `ROWSxCOLS` instead of a random MDP.
        #[arg(long)]
        maze: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Core(zpart::Error),
    Io { path: PathBuf, source: std::io::Error },
    Usage(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Usage(m) => f.write_str(m),
        }
    }
}

impl From<zpart::Error> for CliError {
    fn from(e: zpart::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 on success, 2 on any usage, input or solver error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load(path: &Path) -> CliResult<Mdp> {
    Mdp::load(path).map_err(|e| match e {
        zpart::Error::Io(source) => CliError::Io {
            path: path.to_owned(),
            source,
        },
        other => CliError::Core(other),
    })
}

fn emit(table: &Table, out: &OutArgs) -> CliResult<()> {
    emit_table(table, out.format, out.out.as_deref()).map_err(|source| CliError::Io {
        path: out.out.clone().unwrap_or_else(|| "<stdout>".into()),
        source,
    })
}

fn state_arg(mdp: &Mdp, name: &Option<String>) -> CliResult<Option<usize>> {
    name.as_deref()
        .map(|n| mdp.state_index(n))
        .transpose()
        .map_err(CliError::from)
}

/// Solves with a registered method, checking it suits the command.
fn solve(mdp: &Mdp, cfg: &SolverConfig, method: &str, stochastic: bool) -> CliResult<ZTable> {
    let s = solver(method)?;
    if s.stochastic() != stochastic {
        let want = if stochastic { "plan-stoch" } else { "plan-det, value, policy and sweep-beta" };
        return Err(CliError::Usage(format!("method '{method}' is not available for {want}")));
    }
    let z = s.solve(mdp, cfg)?;
    z.require_converged()?;
    Ok(z)
}

fn z_table(mdp: &Mdp, z: &ZTable) -> Table {
    let mut t = Table::new(&["state", "log_z"]);
    for (s, &x) in z.log_z.iter().enumerate() {
        t.push(vec![mdp.state_name(s).into(), x.into()]);
    }
    t
}

fn policy_rows(mdp: &Mdp, pi: &PolicyTable) -> Table {
    let mut t = Table::new(&["state", "action", "prob"]);
    for (s, a, p) in pi.entries(mdp) {
        t.push(vec![s.into(), a.into(), p.into()]);
    }
    t
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Validate { mdp, mu } => cmd_validate(&mdp, mu),
        Command::Oracle {
            mdp,
            solver,
            max_len,
            cap,
            state,
            n_max,
            out,
        } => {
            let m = load(&mdp)?;
            let cfg = solver.config();
            let oracle = Oracle::new(&m)?.max_len(max_len).cap(cap);
            let states: Vec<usize> = match state_arg(&m, &state)? {
                Some(s) => vec![s],
                None => (0..m.n_states()).collect(),
            };
            let table = if n_max {
                let mut t = Table::new(&["state", "v_star", "n_max"]);
                for s in states {
                    let r = oracle.n_max(s, cfg.mu)?;
                    t.push(vec![m.state_name(s).into(), r.v_star.into(), r.n_max.into()]);
                }
                t
            } else {
                let mut t = Table::new(&[
                    "state",
                    "log_z",
                    "tail_bound",
                    "log_tail_bound",
                    "n_trajectories",
                    "truncated",
                ]);
                for s in states {
                    let r = if m.is_deterministic() {
                        oracle.z(s, cfg.beta, cfg.mu)?
                    } else {
                        oracle.z_stochastic(s, cfg.beta, cfg.mu)?
                    };
                    t.push(vec![
                        m.state_name(s).into(),
                        r.log_z.into(),
                        r.tail_bound.into(),
                        r.log_tail_bound.into(),
                        r.n_trajectories.into(),
                        r.truncated.into(),
                    ]);
                }
                t
            };
            emit(&table, &out)
        }
        Command::PlanDet { mdp, solver, method, out } => {
            let m = load(&mdp)?;
            let z = solve(&m, &solver.config(), &method, false)?;
            emit(&z_table(&m, &z), &out)
        }
        Command::Value {
            mdp,
            solver,
            method,
            value_method,
            out,
        } => {
            let m = load(&mdp)?;
            let z = solve(&m, &solver.config(), &method, false)?;
            let vm = match value_method {
                ValueArg::Fd => ValueMethod::FiniteDifference,
                ValueArg::Linear => ValueMethod::LinearSystem,
            };
            let v = value_from_z(&m, &z, vm)?;
            let mut t = Table::new(&["state", "v"]);
            for (s, &x) in v.v.iter().enumerate() {
                t.push(vec![m.state_name(s).into(), x.into()]);
            }
            emit(&t, &out)
        }
        Command::Policy { mdp, solver, method, out } => {
            let m = load(&mdp)?;
            let z = solve(&m, &solver.config(), &method, false)?;
            emit(&policy_rows(&m, &policy_from_z(&m, &z)?), &out)
        }
        Command::BaselineBoltzmann { mdp, solver, out } => {
            let m = load(&mdp)?;
            let b = boltzmann_baseline(&m, &solver.config())?;
            if !b.converged {
                return Err(zpart::Error::Unconverged {
                    residual: b.residual,
                    tol: solver.tol,
                }
                .into());
            }
            let mut t = Table::new(&["state", "action", "prob", "v_state"]);
            for (s, a, p) in b.policy.entries(&m) {
                let v = b.v.v[m.state_index(s)?];
                t.push(vec![s.into(), a.into(), p.into(), v.into()]);
            }
            emit(&t, &out)
        }
        Command::CheckContraction { mdp, solver, trials, out } => {
            let m = load(&mdp)?;
            emit(&contraction_table(&m, &solver.config(), trials)?, &out)
        }
        Command::PlanStoch {
            mdp,
            solver,
            method,
            lr,
            iters,
            emit: what,
            out,
        } => {
            let m = load(&mdp)?;
            let cfg = solver.config();
            let z = if method == "variational-gd" {
                let r = variational_gd(&m, &cfg, lr, iters, GdInit::Random { seed: cfg.seed })?;
                let z = params_to_table(&m, &r, cfg.tol);
                if !r.converged {
                    return Err(CliError::Usage(format!(
                        "variational-gd stopped after {} steps with normalized loss {:e}; raise --iters",
                        r.accepted_steps,
                        r.params.normalized_loss()
                    )));
                }
                z
            } else {
                solve(&m, &cfg, &method, true)?
            };
            let table = match (what, method.as_str()) {
                (StochEmit::Z, _) => z_table(&m, &z),
                (StochEmit::Policy, "naive") => {
                    return Err(CliError::Usage(format!(
                        "the naive construction has no realistic policy; use --emit weights ({})",
                        NaiveDiagnostic::WARNING
                    )))
                }
                (StochEmit::Policy, _) => policy_rows(&m, &variational_policy(&m, &z)?),
                (StochEmit::Weights, "naive") => weights_table(&m, &z)?,
                (StochEmit::Weights, _) => {
                    return Err(CliError::Usage("--emit weights requires --method naive".into()))
                }
            };
            emit(&table, &out)
        }
        Command::Learn {
            mdp,
            beta,
            mu,
            alpha,
            schedule,
            epsilon,
            exploration,
            episodes,
            seed,
            max_steps,
            start,
            table_out,
            out,
        } => {
            let m = load(&mdp)?;
            let cfg = AgentConfig {
                alpha,
                schedule: AlphaSchedule::parse(&schedule)?,
                epsilon,
                exploration,
                beta,
                mu,
                episodes,
                seed,
                max_steps,
                start: state_arg(&m, &start)?,
            };
            let log = run_episodes(&m, &cfg)?;
            let mut t = Table::new(&["episode", "return", "length", "delta", "truncated"]);
            for e in &log.episodes {
                t.push(vec![
                    e.episode.into(),
                    e.ret.into(),
                    e.length.into(),
                    e.delta.into(),
                    e.truncated.into(),
                ]);
            }
            emit(&t, &out)?;
            if let Some(path) = table_out {
                let greedy = log.table.greedy();
                let prop = log.table.proportional_policy();
                let mut t = Table::new(&["state", "action", "log_z", "greedy", "z_prob"]);
                for s in m.non_terminals() {
                    for (a, act) in m.actions(s).iter().enumerate() {
                        t.push(vec![
                            m.state_name(s).into(),
                            act.name.as_str().into(),
                            log.table.log_z[s][a].into(),
                            (greedy[s] == Some(a)).into(),
                            prop.row(s)[a].into(),
                        ]);
                    }
                }
                emit(
                    &t,
                    &OutArgs {
                        out: Some(path),
                        format: out.format,
                    },
                )?;
            }
            Ok(())
        }
        Command::SweepBeta {
            mdp,
            betas,
            mu,
            tol,
            max_iters,
            damping,
            method,
            out,
        } => {
            let m = load(&mdp)?;
            let base = SolverConfig {
                tol,
                max_iters,
                damping,
                ..SolverConfig::new(1.0, mu)
            };
            emit(&sweep(&m, &base, &betas, &method)?, &out)
        }
        Command::GenRandom {
            states,
            d,
            branching,
            stochastic,
            cyclic,
            maze,
            seed,
            out,
        } => {
            let m = match maze {
                Some(dims) => {
                    let (r, c) = parse_dims(&dims)?;
                    maze_gridworld(r, c, seed)?
                }
                None => random_mdp(RandomMdpSpec {
                    n_states: states,
                    d,
                    branching,
                    deterministic: !stochastic,
                    acyclic: !cyclic,
                    seed,
                })?,
            };
            let mut text = m.to_json();
            text.push('\n');
            match out {
                Some(p) => output::write_atomic(&p, &text).map_err(|source| CliError::Io { path: p, source }),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn cmd_validate(path: &Path, mu: Option<f64>) -> CliResult<()> {
    let m = load(path)?;
    let r = validate(&m);
    println!("states: {}", m.n_states());
    println!("terminal: {}", m.terminals().count());
    println!("deterministic: {}", r.is_deterministic);
    println!("d = {}", r.d);
    println!("mu_threshold = {}", r.mu_threshold);
    println!("r_terminal_max = {}", r.r_terminal_max);
    println!("cycles: {}", r.has_cycles);
    println!("uniform_actions: {}", r.has_uniform_actions);
    for v in &r.violations {
        println!("violation: {v}");
    }
    if !r.is_valid() {
        return Err(zpart::Error::InvalidMdp(r.violations.join("; ")).into());
    }
    if let Some(mu) = mu {
        r.check_mu(mu)?;
        if let Some(w) = r.mu_warning(mu) {
            eprintln!("warning: {w}");
        }
    }
    println!("valid: true");
    Ok(())
}

fn contraction_table(m: &Mdp, cfg: &SolverConfig, trials: usize) -> CliResult<Table> {
    let report = validate(m);
    let bound = report.d as f64 * cfg.mu.exp();
    let mut t = Table::new(&["check", "ratio", "bound", "holds"]);
    let mut push = |name: &str, ratio: f64| {
        t.push(vec![
            name.into(),
            ratio.into(),
            bound.into(),
            (ratio <= bound * (1.0 + 1e-12)).into(),
        ])
    };
    let z = if report.is_deterministic {
        push("operator", contraction_check(m, cfg, trials, cfg.seed)?);
        solve(m, &SolverConfig { damping: 1.0, ..cfg.clone() }, "power", false)?
    } else {
        naive_avg_bellman_solve(m, &SolverConfig { damping: 1.0, ..cfg.clone() })?
    };
    if report.has_uniform_actions {
        push("belief", belief_contraction_check(m, cfg, trials, cfg.seed)?);
    }
    push("residual", z.trace.worst_linear_ratio(1).unwrap_or(0.0));
    Ok(t)
}

fn weights_table(m: &Mdp, z: &ZTable) -> CliResult<Table> {
    let diag = naive_value_diagnostic(m, z)?;
    eprintln!("warning: {}", NaiveDiagnostic::WARNING);
    let mut t = Table::new(&["state", "action", "next", "prob", "weight"]);
    for s in m.non_terminals() {
        for (a, ws) in m.actions(s).iter().zip(&diag.weights[s]) {
            for (o, w) in a.outcomes.iter().zip(ws) {
                t.push(vec![
                    m.state_name(s).into(),
                    a.name.as_str().into(),
                    m.state_name(o.next).into(),
                    o.prob.into(),
                    (*w).into(),
                ]);
            }
        }
    }
    Ok(t)
}

/// One policy row per `(beta, state, action)`. Each `beta` is solved on its
/// own thread; rows are assembled in the order of `betas`.
pub fn sweep(m: &Mdp, base: &SolverConfig, betas: &[f64], method: &str) -> CliResult<Table> {
    let results: Vec<CliResult<PolicyTable>> = std::thread::scope(|scope| {
        let handles: Vec<_> = betas
            .iter()
            .map(|&beta| {
                let cfg = SolverConfig { beta, ..base.clone() };
                scope.spawn(move || -> CliResult<PolicyTable> {
                    let z = solve(m, &cfg, method, false)?;
                    Ok(policy_from_z(m, &z)?)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut t = Table::new(&["beta", "state", "action", "prob"]);
    for (&beta, pi) in betas.iter().zip(results) {
        for (s, a, p) in pi?.entries(m) {
            t.push(vec![beta.into(), s.into(), a.into(), p.into()]);
        }
    }
    Ok(t)
}

fn parse_dims(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("--maze expects ROWSxCOLS, got '{s}'"));
    let (r, c) = s.split_once('x').ok_or_else(bad)?;
    Ok((r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?))
}
