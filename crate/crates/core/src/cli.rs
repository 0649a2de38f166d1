//! The `qnet` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime
//! error. Tables go to `--out` (or the config's output path, or stdout);
//! diagnostics go to stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, RunConfig};
use crate::env::Target;
use crate::marl::{self, LearnError, PolicySource};
use crate::metrics::{self, fmt_float, Metadata, MetricsTrace};
use crate::seed;
use crate::stochastic::{self, StochasticError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const EVAL_HEADER: &str = "episode,cost";
pub const ORACLE_HEADER: &str = "agent,target,fraction";

#[derive(Debug, Parser)]
#[command(name = "qnet", version, about = "Quantum computing network offloading simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed, overriding the config's.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output CSV, overriding the config's; stdout when neither is set.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the multi-agent learners and write the episode trace.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "N")]
        episodes: Option<u32>,
        /// Where to save the trained policy.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint or a baseline by name.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint path, or one of random, greedy, all-local, all-cloud.
        #[arg(long, value_name = "PATH|NAME")]
        policy: String,
    },
    /// Evaluate a named baseline policy.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = PolicySource::BASELINES)]
        name: String,
    },
    /// Exhaustive stationary-action search on a small instance.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Check a configuration and list every violation.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Usage(String),
    Config(ConfigError),
    Runtime(String),
}

impl From<LearnError> for Failure {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::UnknownPolicy(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<StochasticError> for Failure {
    fn from(e: StochasticError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<metrics::MetricsError> for Failure {
    fn from(e: metrics::MetricsError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Parses `args` (including the program name) and runs one command.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{text}") } else { write!(stdout, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(message)) => {
            let _ = writeln!(stderr, "error: {message}");
            EXIT_USAGE
        }
        Err(Failure::Config(e)) => {
            match &e {
                ConfigError::Validation(violations) => {
                    let _ = writeln!(stderr, "error: {} invalid field(s)", violations.len());
                    for v in violations {
                        let _ = writeln!(stderr, "  {v}");
                    }
                }
                other => {
                    let _ = writeln!(stderr, "error: {other}");
                }
            }
            EXIT_CONFIG
        }
        Err(Failure::Runtime(message)) => {
            let _ = writeln!(stderr, "error: {message}");
            EXIT_RUNTIME
        }
    }
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn emit(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(path) => metrics::write_file(path, text).map_err(Failure::from),
        None => stdout.write_all(text.as_bytes()).map_err(|e| Failure::Runtime(format!("stdout: {e}"))),
    }
}

fn out_path<'a>(common: &'a Common, config: &'a RunConfig) -> Option<&'a Path> {
    common.out.as_deref().or(config.output.metrics.as_deref())
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Train { common, episodes, checkpoint } => {
            let mut config = load(&common)?;
            if let Some(n) = episodes {
                config.train.episodes = n;
                config = config.validate().map_err(Failure::Config)?;
            }
            let outcome = marl::train(&config.env_config(), &config.train, config.seed)?;
            let trace = MetricsTrace { metadata: Metadata::new(config.hash(), config.seed), rows: outcome.stats.clone() };
            trace.check()?;
            if let Some(path) = checkpoint.as_deref().or(config.output.checkpoint.as_deref()) {
                marl::save_policy(&outcome.policy(), path)?;
            }
            emit(out_path(&common, &config), &trace.to_csv(), stdout)
        }
        Command::Eval { common, policy } => {
            let config = load(&common)?;
            let source = PolicySource::parse(&policy)?;
            evaluate(&common, &config, &source, &policy, stdout)
        }
        Command::Baseline { common, name } => {
            let config = load(&common)?;
            let source = PolicySource::baseline(&name)?;
            evaluate(&common, &config, &source, &name, stdout)
        }
        Command::Oracle { common } => {
            let config = load(&common)?;
            let env_config = config.env_config();
            let scenarios = stochastic::sample_scenarios(
                &env_config,
                config.oracle.scenarios,
                seed::child_seed(config.seed, "oracle", 0),
            )?;
            let result = stochastic::exhaustive_oracle(&env_config, config.oracle.grid_points, &scenarios)?;
            let rows: Vec<Vec<String>> = result
                .actions
                .iter()
                .enumerate()
                .map(|(agent, a)| vec![agent.to_string(), target_name(a.target), fmt_float(a.fraction)])
                .collect();
            let extra = [
                ("expected_cost", fmt_float(result.estimate.mean)),
                ("std_error", fmt_float(result.estimate.std_error)),
                ("candidates", result.candidates.to_string()),
            ];
            let text = metrics::render_table(&Metadata::new(config.hash(), config.seed), &extra, ORACLE_HEADER, &rows);
            emit(out_path(&common, &config), &text, stdout)
        }
        Command::Validate { common } => {
            let config = load(&common)?;
            let text = format!("# config_hash={}\nvalid\n", config.hash());
            emit(common.out.as_deref(), &text, stdout)
        }
    }
}

fn evaluate(
    common: &Common,
    config: &RunConfig,
    source: &PolicySource,
    label: &str,
    stdout: &mut dyn Write,
) -> Result<(), Failure> {
    let evaluation = marl::evaluate(&config.env_config(), source, config.eval.episodes, config.seed)?;
    let rows: Vec<Vec<String>> = evaluation
        .episode_costs
        .iter()
        .enumerate()
        .map(|(ep, cost)| vec![ep.to_string(), fmt_float(*cost)])
        .collect();
    let extra = [("policy", label.to_string()), ("mean_cost", fmt_float(evaluation.mean))];
    let text = metrics::render_table(&Metadata::new(config.hash(), config.seed), &extra, EVAL_HEADER, &rows);
    emit(out_path(common, config), &text, stdout)
}

fn target_name(target: Target) -> String {
    match target {
        Target::Local => "local".to_string(),
        Target::Edge(j) => format!("edge{j}"),
        Target::Cloud => "cloud".to_string(),
    }
}
