use crate::error::CliError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(
    name = "snell-mesh",
    version,
    about = "Optimal stopping with multiplicative criteria: exact oracles, particle simulation and mesh pricing"
)]
pub struct Cli {
    /// Builtin model name (toychain, ar1) or path to a model definition file.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Particle count N.
    #[arg(long = "n-particles", global = true)]
    pub n_particles: Option<usize>,
    /// Independent runs for Monte Carlo suites.
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    /// Selection level applied at every step (requires epsilon * ||G_k|| <= 1).
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, env = "SNELL_MESH_OUT")]
    pub out: Option<PathBuf>,
    /// Without a subcommand the suites listed in the config file are run.
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact envelope, flow and verification on a finite model.
    Oracle(OracleArgs),
    /// One particle run; per-step criteria masses.
    Simulate(SimulateArgs),
    /// One particle run followed by the mesh estimator.
    Price(PriceArgs),
    /// Error against the oracle over a grid of particle counts.
    Convergence(ConvergenceArgs),
    /// One-sided high-bias check.
    Bias(BiasArgs),
    /// Theoretical error bound and concentration tail check.
    Bound(BoundArgs),
    /// Perturbation inequality on random perturbations of the model.
    Robustness(RobustnessArgs),
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub path_cap: Option<u128>,
    #[arg(long)]
    pub policy_cap: Option<u128>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Also write every particle position.
    #[arg(long)]
    pub dump_particles: bool,
}

#[derive(Debug, Args)]
pub struct PriceArgs {
    /// Query state at time 0.
    #[arg(long)]
    pub state: Option<String>,
    /// Also write the estimate at every mesh point.
    #[arg(long)]
    pub levels: bool,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long)]
    pub state: Option<String>,
    /// Error orders, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<u32>>,
    /// Particle counts, comma separated.
    #[arg(long = "n-list", value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct BiasArgs {
    #[arg(long)]
    pub state: Option<String>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long)]
    pub state: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<u32>>,
    /// Deviation levels for the tail check, comma separated.
    #[arg(long = "eps-grid", value_delimiter = ',')]
    pub eps_grid: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub perturbations: Option<usize>,
    #[arg(long)]
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Oracle,
    Simulate,
    Price,
    Convergence,
    Bias,
    Bound,
    Robustness,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Oracle => "oracle",
            Suite::Simulate => "simulate",
            Suite::Price => "price",
            Suite::Convergence => "convergence",
            Suite::Bias => "bias",
            Suite::Bound => "bound",
            Suite::Robustness => "robustness",
        }
    }

    fn default_runs(self) -> usize {
        match self {
            Suite::Convergence => 200,
            Suite::Bias => 500,
            Suite::Bound => 2000,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileCaps {
    paths: Option<u128>,
    policies: Option<u128>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileThresholds {
    slope_min: Option<f64>,
    slope_max: Option<f64>,
    bias_se_multiplier: Option<f64>,
    concentration_se_multiplier: Option<f64>,
    robustness_tolerance: Option<f64>,
}

/// Run configuration file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    suites: Option<Vec<Suite>>,
    model: Option<String>,
    seed: Option<u64>,
    n_particles: Option<usize>,
    runs: Option<usize>,
    epsilon: Option<f64>,
    out: Option<PathBuf>,
    state: Option<String>,
    p: Option<Vec<u32>>,
    n_list: Option<Vec<usize>>,
    eps_grid: Option<Vec<f64>>,
    perturbations: Option<usize>,
    perturbation_scale: Option<f64>,
    dump_particles: Option<bool>,
    levels: Option<bool>,
    #[serde(default)]
    caps: FileCaps,
    #[serde(default)]
    thresholds: FileThresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Caps {
    pub paths: u128,
    pub policies: u128,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub slope_min: f64,
    pub slope_max: f64,
    pub bias_se_multiplier: f64,
    pub concentration_se_multiplier: f64,
    pub robustness_tolerance: f64,
}

/// Fully resolved settings, echoed into every JSON artifact and the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub suites: Vec<Suite>,
    pub model: String,
    pub seed: u64,
    pub n_particles: usize,
    pub runs: usize,
    pub epsilon: Option<f64>,
    pub out: PathBuf,
    pub state: String,
    pub p: Vec<u32>,
    pub n_list: Vec<usize>,
    pub eps_grid: Vec<f64>,
    pub perturbations: usize,
    pub perturbation_scale: f64,
    pub dump_particles: bool,
    pub levels: bool,
    pub caps: Caps,
    pub thresholds: Thresholds,
    /// Config file the values were read from, if any.
    pub config_file: Option<PathBuf>,
}

fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.to_string().trim_end())))
}

/// Merges flags, environment, config file and defaults, in that order of
/// precedence, and checks the invariants.
pub fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let file = match &cli.config {
        Some(path) => read_file_config(path)?,
        None => FileConfig::default(),
    };
    let suites = match &cli.command {
        Some(cmd) => vec![suite_of(cmd)],
        None => file.suites.clone().unwrap_or_default(),
    };
    let mut state = None;
    let mut p = None;
    let mut n_list = None;
    let mut eps_grid = None;
    let mut dump_particles = false;
    let mut levels = false;
    let mut perturbations = None;
    let mut scale = None;
    let mut path_cap = None;
    let mut policy_cap = None;
    match &cli.command {
        Some(Command::Oracle(a)) => {
            path_cap = a.path_cap;
            policy_cap = a.policy_cap;
        }
        Some(Command::Simulate(a)) => dump_particles = a.dump_particles,
        Some(Command::Price(a)) => {
            state = a.state.clone();
            levels = a.levels;
        }
        Some(Command::Convergence(a)) => {
            state = a.state.clone();
            p = a.p.clone();
            n_list = a.n_list.clone();
        }
        Some(Command::Bias(a)) => state = a.state.clone(),
        Some(Command::Bound(a)) => {
            state = a.state.clone();
            p = a.p.clone();
            eps_grid = a.eps_grid.clone();
        }
        Some(Command::Robustness(a)) => {
            perturbations = a.perturbations;
            scale = a.scale;
        }
        None => {}
    }

    let default_runs = suites.iter().map(|s| s.default_runs()).max().unwrap_or(1);
    let config = RunConfig {
        model: cli.model.clone().or(file.model).unwrap_or_else(|| "toychain".into()),
        seed: cli.seed.or(file.seed).unwrap_or(0),
        n_particles: cli.n_particles.or(file.n_particles).unwrap_or(1000),
        runs: cli.runs.or(file.runs).unwrap_or(default_runs),
        epsilon: cli.epsilon.or(file.epsilon),
        out: cli.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("snell-mesh-out")),
        state: state.or(file.state).unwrap_or_else(|| "0".into()),
        p: p.or(file.p).unwrap_or_else(|| vec![1, 2, 4]),
        n_list: n_list.or(file.n_list).unwrap_or_else(|| vec![250, 1000, 4000, 16000]),
        eps_grid: eps_grid.or(file.eps_grid).unwrap_or_else(|| vec![0.05, 0.1, 0.2]),
        perturbations: perturbations.or(file.perturbations).unwrap_or(100),
        perturbation_scale: scale.or(file.perturbation_scale).unwrap_or(0.3),
        dump_particles: dump_particles || file.dump_particles.unwrap_or(false),
        levels: levels || file.levels.unwrap_or(false),
        caps: Caps {
            paths: path_cap.or(file.caps.paths).unwrap_or(1_000_000),
            policies: policy_cap.or(file.caps.policies).unwrap_or(1 << 20),
        },
        thresholds: Thresholds {
            slope_min: file.thresholds.slope_min.unwrap_or(-0.65),
            slope_max: file.thresholds.slope_max.unwrap_or(-0.35),
            bias_se_multiplier: file.thresholds.bias_se_multiplier.unwrap_or(2.0),
            concentration_se_multiplier: file.thresholds.concentration_se_multiplier.unwrap_or(3.0),
            robustness_tolerance: file.thresholds.robustness_tolerance.unwrap_or(1e-10),
        },
        suites,
        config_file: cli.config.clone(),
    };
    check(&config)?;
    Ok(config)
}

fn suite_of(cmd: &Command) -> Suite {
    match cmd {
        Command::Oracle(_) => Suite::Oracle,
        Command::Simulate(_) => Suite::Simulate,
        Command::Price(_) => Suite::Price,
        Command::Convergence(_) => Suite::Convergence,
        Command::Bias(_) => Suite::Bias,
        Command::Bound(_) => Suite::Bound,
        Command::Robustness(_) => Suite::Robustness,
    }
}

fn check(c: &RunConfig) -> Result<(), CliError> {
    let fail = |m: String| Err(CliError::Usage(m));
    if c.n_particles == 0 {
        return fail("n_particles must be at least 1".into());
    }
    if c.runs == 0 {
        return fail("runs must be at least 1".into());
    }
    if c.n_list.is_empty() || c.n_list.contains(&0) {
        return fail("n_list must hold particle counts >= 1".into());
    }
    if c.p.is_empty() || c.p.contains(&0) {
        return fail("p must hold orders >= 1".into());
    }
    if c.eps_grid.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return fail("eps_grid values must be finite and non-negative".into());
    }
    if !(c.perturbation_scale.is_finite() && c.perturbation_scale >= 0.0) {
        return fail("perturbation_scale must be finite and non-negative".into());
    }
    if let Some(e) = c.epsilon {
        if !(e.is_finite() && e >= 0.0) {
            return fail(format!("epsilon must be finite and non-negative, got {e}"));
        }
    }
    if c.thresholds.slope_min > c.thresholds.slope_max {
        return fail("thresholds.slope_min exceeds thresholds.slope_max".into());
    }
    Ok(())
}
