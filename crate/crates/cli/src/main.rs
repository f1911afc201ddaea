//! Command-line surface: finite-game solving, order scanning, quadratic
//! stationarity analysis, hierarchical training, and checkpoint evaluation.
//!
//! Every command writes its outputs plus a run manifest into `--out`.
//! Exit codes: 0 success, 2 validation errors, 3 runtime/numerical errors.

mod svg;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;

use stackorder::envs::{make_builtin, EnvError, EnvParams};
use stackorder::equilibrium::{
    order_scan, pareto_compare, pure_nash, se_backward_induction, EquilibriumError,
    ParetoRelation,
};
use stackorder::games::{
    builtin, load_game, ExecutionOrder, Game, GameError, GroupScheme, MatrixGame,
};
use stackorder::hpa::{
    evaluate_trace, load_artifacts, train, HpaConfig, HpaError, TrainedArtifacts,
};
use stackorder::policy::PolicyError;
use stackorder::smg::{Env, SmgError};
use stackorder::stationarity::{
    continuous_se, lm_minimize, rank_test, stack_joint_system, SolvabilityReport,
    StationarityError, Verdict, DEFAULT_RANK_TOL,
};

#[derive(Parser)]
#[command(name = "stackorder", version, about = "Execution-order analysis and scheduling for sequential games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a finite game: pure Nash set, leader-optimal outcome, Pareto relations.
    Solve {
        /// Game file path or built-in name (fig1_left, fig1_right, fig2).
        game: String,
        /// Report the pure Nash set.
        #[arg(long)]
        ne: bool,
        /// Report the leader-optimal solution.
        #[arg(long)]
        se: bool,
        /// Execution order as comma-separated group indices (default: identity).
        #[arg(long)]
        ordering: Option<String>,
        /// Agent grouping, e.g. `0,1|2` (default: one group per agent).
        #[arg(long)]
        groups: Option<String>,
        #[arg(long, default_value = "stackorder-out")]
        out: PathBuf,
    },
    /// Solve every execution order, export CSV, and report whether the
    /// equilibrium shifts.
    OrderScan {
        game: String,
        #[arg(long)]
        groups: Option<String>,
        #[arg(long, default_value = "stackorder-out")]
        out: PathBuf,
    },
    /// Dual-ordering solvability analysis of a quadratic game.
    Stationarity {
        /// Quadratic game file.
        game: String,
        #[arg(long)]
        ord1: String,
        #[arg(long)]
        ord2: String,
        /// Residual threshold for the damped least-squares verdict.
        #[arg(long, default_value_t = 1e-8)]
        eps: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        /// Relative tolerance of the numerical rank test.
        #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
        rank_tol: f64,
        #[arg(long, default_value = "stackorder-out")]
        out: PathBuf,
    },
    /// Train the hierarchical order scheduler on a built-in environment.
    Train {
        /// Environment name (iterated_fig2, switching_leader,
        /// iterated:<path>, switching:<path0>,<path1>).
        #[arg(long)]
        env: String,
        /// JSON config mirroring the trainer's field names.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        groups: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate trained checkpoints: mean team return and per-state option
    /// histogram.
    Eval {
        /// Run directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Environment override (default: the one recorded at training).
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "stackorder-out")]
        out: PathBuf,
    },
}

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<GameError> for CliError {
    fn from(e: GameError) -> Self {
        match e {
            GameError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EquilibriumError> for CliError {
    fn from(e: EquilibriumError) -> Self {
        match e {
            EquilibriumError::Game(g) => g.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<StationarityError> for CliError {
    fn from(e: StationarityError) -> Self {
        match e {
            StationarityError::NonFiniteResidual => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Game(g) => g.into(),
            EnvError::Equilibrium(q) => q.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<HpaError> for CliError {
    fn from(e: HpaError) -> Self {
        match e {
            HpaError::Config { .. } | HpaError::Artifacts(_) => {
                CliError::Validation(e.to_string())
            }
            HpaError::Game(g) => g.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SmgError> for CliError {
    fn from(e: SmgError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RunManifest {
    command: String,
    /// Resolved configuration: re-running with these values reproduces the
    /// outputs byte-for-byte (deterministic commands).
    config: serde_json::Value,
    seed: Option<u64>,
    tool_version: String,
    started_unix_ms: u128,
    finished_unix_ms: u128,
    outputs: Vec<String>,
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

struct OutDir {
    dir: PathBuf,
    outputs: Vec<String>,
    started: u128,
}

impl OutDir {
    fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
            started: unix_ms(),
        })
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        std::fs::write(self.dir.join(name), contents)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn record(&mut self, names: &[String]) {
        self.outputs.extend_from_slice(names);
    }

    fn finish(
        mut self,
        command: &str,
        config: serde_json::Value,
        seed: Option<u64>,
    ) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: command.to_string(),
            config,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms: self.started,
            finished_unix_ms: unix_ms(),
            outputs: {
                self.outputs.push("manifest.json".to_string());
                self.outputs.clone()
            },
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

fn load_game_arg(arg: &str) -> Result<Game, CliError> {
    if let Some(game) = builtin(arg) {
        return Ok(game);
    }
    Ok(load_game(arg)?)
}

fn matrix_game(arg: &str) -> Result<MatrixGame, CliError> {
    match load_game_arg(arg)? {
        Game::Matrix(g) => Ok(g),
        Game::Quadratic(g) => Err(CliError::Validation(format!(
            "`{}` is a quadratic game; this command needs a matrix game",
            g.name()
        ))),
    }
}

fn resolve_scheme(groups: &Option<String>, agents: usize) -> Result<GroupScheme, CliError> {
    match groups {
        Some(spec) => {
            let scheme: GroupScheme = spec.parse()?;
            if scheme.agent_count() != agents {
                return Err(CliError::Validation(format!(
                    "groups cover {} agents, game has {agents}",
                    scheme.agent_count()
                )));
            }
            Ok(scheme)
        }
        None => Ok(GroupScheme::singletons(agents)),
    }
}

fn fmt_joint(joint: &[usize]) -> String {
    let parts: Vec<String> = joint.iter().map(|a| a.to_string()).collect();
    format!("({})", parts.join(","))
}

fn fmt_payoffs(payoffs: &[f64]) -> String {
    let parts: Vec<String> = payoffs.iter().map(|p| format!("{p}")).collect();
    format!("({})", parts.join(", "))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SolveReport {
    game: String,
    nash: Vec<SolveOutcome>,
    leader_optimal: Vec<SolveSolution>,
    pareto: Vec<String>,
}

#[derive(Serialize)]
struct SolveOutcome {
    joint_action: Vec<usize>,
    payoffs: Vec<f64>,
}

#[derive(Serialize)]
struct SolveSolution {
    ordering: String,
    joint_action: Vec<usize>,
    payoffs: Vec<f64>,
}

fn cmd_solve(
    game_arg: &str,
    ne: bool,
    se: bool,
    ordering: &Option<String>,
    groups: &Option<String>,
    out: &Path,
) -> Result<(), CliError> {
    let game = matrix_game(game_arg)?;
    let scheme = resolve_scheme(groups, game.players())?;
    let ordering = match ordering {
        Some(text) => text.parse::<ExecutionOrder>()?,
        None => ExecutionOrder::identity(scheme.group_count()),
    };
    let (want_ne, want_se) = if ne || se { (ne, se) } else { (true, true) };
    let mut dir = OutDir::create(out)?;

    println!("game: {} ({} players)", game.name(), game.players());

    let mut nash_outcomes = Vec::new();
    if want_ne {
        for joint in pure_nash(&game) {
            let payoffs = game.payoff(&joint)?;
            println!("NE {} payoffs {}", fmt_joint(&joint), fmt_payoffs(&payoffs));
            nash_outcomes.push(SolveOutcome {
                joint_action: joint,
                payoffs,
            });
        }
        if nash_outcomes.is_empty() {
            println!("NE: none (no pure-strategy equilibrium)");
        }
    }

    let mut solutions = Vec::new();
    let mut pareto_lines = Vec::new();
    if want_se {
        let solution = se_backward_induction(&game, &ordering, &scheme)?;
        println!(
            "SE [{}] {} payoffs {}",
            solution.ordering,
            fmt_joint(&solution.joint_action),
            fmt_payoffs(&solution.payoffs)
        );
        for outcome in &nash_outcomes {
            let relation = pareto_compare(&solution.payoffs, &outcome.payoffs)?;
            let text = match relation {
                ParetoRelation::Dominates => "Pareto-dominates",
                ParetoRelation::Dominated => "is Pareto-dominated by",
                ParetoRelation::Incomparable => "is Pareto-incomparable with",
                ParetoRelation::Equal => "coincides with",
            };
            let line = format!(
                "SE [{}] {text} NE {}",
                solution.ordering,
                fmt_joint(&outcome.joint_action)
            );
            println!("{line}");
            pareto_lines.push(line);
        }
        solutions.push(SolveSolution {
            ordering: solution.ordering.to_string(),
            joint_action: solution.joint_action.clone(),
            payoffs: solution.payoffs.clone(),
        });
    }

    let report = SolveReport {
        game: game.name().to_string(),
        nash: nash_outcomes,
        leader_optimal: solutions,
        pareto: pareto_lines,
    };
    let mut text =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    dir.write("report.json", text.as_bytes())?;
    dir.finish(
        "solve",
        serde_json::json!({
            "game": game_arg,
            "ne": want_ne,
            "se": want_se,
            "ordering": ordering.to_string(),
            "groups": groups,
        }),
        None,
    )
}

fn cmd_order_scan(game_arg: &str, groups: &Option<String>, out: &Path) -> Result<(), CliError> {
    let game = matrix_game(game_arg)?;
    let scheme = resolve_scheme(groups, game.players())?;
    let report = order_scan(&game, &scheme)?;
    let csv = report.to_csv();
    let mut dir = OutDir::create(out)?;
    dir.write("scan.csv", csv.as_bytes())?;
    print!("{csv}");
    println!("SE-SHIFT: {}", if report.se_shift { "yes" } else { "no" });
    dir.finish(
        "order-scan",
        serde_json::json!({ "game": game_arg, "groups": groups }),
        None,
    )
}

#[derive(Serialize)]
struct StationarityOutput {
    per_ordering_equilibria: Vec<SolveEquilibrium>,
    rank: SolvabilityReport,
    lm: SolvabilityReport,
}

#[derive(Serialize)]
struct SolveEquilibrium {
    ordering: String,
    strategy: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_stationarity(
    game_arg: &str,
    ord1: &str,
    ord2: &str,
    eps: f64,
    max_iter: usize,
    rank_tol: f64,
    out: &Path,
) -> Result<(), CliError> {
    let game = match load_game_arg(game_arg)? {
        Game::Quadratic(g) => g,
        Game::Matrix(g) => {
            return Err(CliError::Validation(format!(
                "`{}` is a matrix game; stationarity analysis needs a quadratic game",
                g.name()
            )))
        }
    };
    let ord1: ExecutionOrder = ord1.parse()?;
    let ord2: ExecutionOrder = ord2.parse()?;
    if ord1 == ord2 {
        return Err(StationarityError::IdenticalOrderings.into());
    }

    let mut equilibria = Vec::new();
    for ordering in [&ord1, &ord2] {
        let (pi, _) = continuous_se(&game, ordering)?;
        println!(
            "SE under [{ordering}]: {}",
            fmt_payoffs(&pi)
        );
        equilibria.push(SolveEquilibrium {
            ordering: ordering.to_string(),
            strategy: pi,
        });
    }

    let system = stack_joint_system(&game, &ord1, &ord2)?;
    let rank = rank_test(&system, rank_tol)?;
    match rank.verdict {
        Verdict::Solvable => println!(
            "rank test: solvable (rank {} = {})",
            rank.rank_a.unwrap_or(0),
            rank.rank_ab.unwrap_or(0)
        ),
        Verdict::Unsolvable => println!(
            "rank test: unsolvable (rank {} != {})",
            rank.rank_a.unwrap_or(0),
            rank.rank_ab.unwrap_or(0)
        ),
    }
    let lm = lm_minimize(&system, &vec![0.0; system.dim()], eps, max_iter)?;
    println!(
        "damped least squares: {} after {} accepted steps, residual {:e} (threshold {:e})",
        match lm.verdict {
            Verdict::Solvable => "solvable",
            Verdict::Unsolvable => "unsolvable",
        },
        lm.iterations,
        lm.residual,
        eps
    );
    println!("candidate strategy: {}", fmt_payoffs(&lm.candidate));

    let mut dir = OutDir::create(out)?;
    let output = StationarityOutput {
        per_ordering_equilibria: equilibria,
        rank,
        lm,
    };
    let mut text =
        serde_json::to_string_pretty(&output).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    dir.write("solvability.json", text.as_bytes())?;
    dir.finish(
        "stationarity",
        serde_json::json!({
            "game": game_arg,
            "ord1": ord1.to_string(),
            "ord2": ord2.to_string(),
            "eps": eps,
            "max_iter": max_iter,
            "rank_tol": rank_tol,
        }),
        None,
    )
}

fn cmd_train(
    env_name: &str,
    config: &Option<PathBuf>,
    seed: Option<u64>,
    groups: &Option<String>,
    out: &Path,
) -> Result<(), CliError> {
    let mut cfg: HpaConfig = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("config: {e}")))?
        }
        None => HpaConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(CliError::from)?;

    let params = EnvParams {
        horizon: cfg.horizon,
        window: cfg.k,
        discount: cfg.gamma,
    };
    let mut env = make_builtin(env_name, &params)?;
    let scheme = resolve_scheme(groups, env.contract().agents())?;

    let artifacts = train(&mut env, &scheme, &cfg)?;
    // STACKORDER_LOG is the only environment knob: anything but the empty
    // value turns on per-run progress details on stderr.
    if std::env::var("STACKORDER_LOG").is_ok_and(|v| !v.is_empty()) {
        for row in artifacts.metrics.rows.iter().step_by(500) {
            eprintln!(
                "episode {}: steps {} return {:.4} entropy {:.4}",
                row.episode, row.env_steps, row.mean_team_return, row.upper_entropy
            );
        }
    }
    let mut dir = OutDir::create(out)?;
    let written = artifacts.write_to_dir(out, env_name, &params)?;
    dir.record(
        &written
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect::<Vec<_>>(),
    );
    dir.write("curves.svg", curves_svg(&artifacts).as_bytes())?;

    if let Some(last) = artifacts.metrics.rows.last() {
        println!(
            "trained {} episodes ({} env steps); final mean team return {:.4}",
            artifacts.metrics.rows.len(),
            last.env_steps,
            last.mean_team_return
        );
        for (label, freq) in artifacts
            .metrics
            .option_labels
            .iter()
            .zip(&last.option_freq)
        {
            println!("  option {label}: selection frequency {freq:.3}");
        }
    } else {
        println!("trained 0 episodes; initial checkpoints written");
    }
    println!("artifacts in {}", out.display());

    let config_echo =
        serde_json::to_value(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    dir.finish(
        "train",
        serde_json::json!({
            "env": env_name,
            "groups": groups,
            "config": config_echo,
        }),
        Some(cfg.seed),
    )
}

fn curves_svg(artifacts: &TrainedArtifacts) -> String {
    let returns = svg::Series {
        label: "mean team return".to_string(),
        values: artifacts
            .metrics
            .rows
            .iter()
            .map(|r| r.mean_team_return)
            .collect(),
    };
    let freq_series: Vec<svg::Series> = artifacts
        .metrics
        .option_labels
        .iter()
        .enumerate()
        .map(|(idx, label)| svg::Series {
            label: format!("option {label}"),
            values: artifacts
                .metrics
                .rows
                .iter()
                .map(|r| r.option_freq[idx])
                .collect(),
        })
        .collect();
    svg::curves_svg(
        "mean team return per episode",
        std::slice::from_ref(&returns),
        "option selection frequency per episode",
        &freq_series,
    )
}

fn cmd_eval(
    checkpoint: &Path,
    env_override: &Option<String>,
    episodes: usize,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let loaded = load_artifacts(checkpoint)?;
    let env_name = env_override
        .clone()
        .unwrap_or_else(|| loaded.env_name.clone());
    let mut env = make_builtin(&env_name, &loaded.env_params)?;

    let contract = env.contract().clone();
    if contract.agents() != loaded.lower.len()
        || contract.state_count() != loaded.upper.state_count()
        || loaded
            .lower
            .first()
            .is_some_and(|ag| ag.encoder.action_counts != contract.action_counts)
    {
        return Err(CliError::Validation(format!(
            "checkpoint/environment mismatch: checkpoint has {} agents over {} states, `{env_name}` has {} agents over {} states",
            loaded.lower.len(),
            loaded.upper.state_count(),
            contract.agents(),
            contract.state_count(),
        )));
    }

    let (report, trace) = evaluate_trace(
        &mut env,
        &loaded.upper,
        &loaded.lower,
        &loaded.scheme,
        loaded.config.k,
        episodes,
        seed,
    )?;
    println!(
        "mean team return per step: {:.4} over {} episodes",
        report.mean_team_return_per_step, report.episodes
    );
    println!("option choices per state ({} boundaries):", report.boundaries);
    for (state, counts) in report.option_histogram.iter().enumerate() {
        let cells: Vec<String> = counts
            .iter()
            .zip(&loaded.options)
            .map(|(c, o)| format!("[{o}]={c}"))
            .collect();
        println!("  state {state}: {}", cells.join(" "));
    }

    let mut dir = OutDir::create(out)?;
    let mut text =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    dir.write("eval.json", text.as_bytes())?;
    dir.write(
        "trajectory.csv",
        stackorder::smg::trajectory_csv(&trace).as_bytes(),
    )?;
    dir.finish(
        "eval",
        serde_json::json!({
            "checkpoint": checkpoint.display().to_string(),
            "env": env_name,
            "episodes": episodes,
        }),
        Some(seed),
    )
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve {
            game,
            ne,
            se,
            ordering,
            groups,
            out,
        } => cmd_solve(&game, ne, se, &ordering, &groups, &out),
        Command::OrderScan { game, groups, out } => cmd_order_scan(&game, &groups, &out),
        Command::Stationarity {
            game,
            ord1,
            ord2,
            eps,
            max_iter,
            rank_tol,
            out,
        } => cmd_stationarity(&game, &ord1, &ord2, eps, max_iter, rank_tol, &out),
        Command::Train {
            env,
            config,
            seed,
            groups,
            out,
        } => cmd_train(&env, &config, seed, &groups, &out),
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
            out,
        } => cmd_eval(&checkpoint, &env, episodes, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code())
        }
    }
}
