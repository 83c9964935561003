//! `postsample` command line: generate synthetic telemetry, build a
//! reference profile, run detection, RCA and sampling, and score runs.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use postsample_core::config::ConfigError;
use postsample_core::io::IoError;
use postsample_core::pipeline::PipelineError;
use postsample_core::profile::ProfileError;
use postsample_eval::BenchError;
use postsample_synth::{GenError, ScenarioError};
use thiserror::Error;
use toml::Value;

pub use commands::{cmd_eval, cmd_generate, cmd_profile, cmd_run, RunSummary};
pub use config::{defaults_listing, parse_assignment, RunConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        if e.is_not_found() {
            CliError::Data(format!("file not found: {e}"))
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<ProfileError> for CliError {
    fn from(e: ProfileError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "postsample", version, about = "Diagnosis-aware sampling of traces and logs")]
pub struct Cli {
    /// TOML configuration file
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Base directory for every relative path
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Worker threads, 0 for all processors
    #[arg(long, global = true, value_name = "N")]
    pub parallelism: Option<usize>,
    /// Override any configuration key, e.g. --set detect.trace_k=4
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_assignment)]
    pub overrides: Vec<(String, Value)>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate fault-free and production telemetry with ground truth
    Generate {
        #[arg(long, value_name = "FILE")]
        scenario: Option<PathBuf>,
    },
    /// Build the reference profile from fault-free telemetry
    Profile {
        #[arg(long, value_name = "DIR")]
        fault_free: Option<PathBuf>,
        /// Output profile file
        #[arg(long, value_name = "FILE")]
        profile: Option<PathBuf>,
    },
    /// Detect, diagnose and sample production telemetry
    Run {
        #[arg(long, value_name = "DIR")]
        production: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        profile: Option<PathBuf>,
        /// Output directory for the run files
        #[arg(long, value_name = "DIR")]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Score a run against ground truth
    Eval {
        #[arg(long, value_name = "DIR")]
        run_dir: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        ground_truth: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<f64>>,
        /// Any of full, edge_only, analysis_only, uniform
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        /// Output CSV file
        #[arg(long, value_name = "FILE")]
        results: Option<PathBuf>,
    },
}

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_owned())
    }
}

fn path_value(p: &Path) -> Value {
    Value::String(absolute(p).to_string_lossy().into_owned())
}

impl Cli {
    /// `--set` assignments followed by the dedicated flags, in precedence
    /// order.
    pub fn overrides(&self) -> Result<Vec<(String, Value)>, CliError> {
        let mut out = self.overrides.clone();
        let mut set = |key: &str, value: Value| out.push((key.to_owned(), value));
        if let Some(seed) = self.seed {
            let seed = i64::try_from(seed).map_err(|_| CliError::Config(format!("seed: {seed} is too large")))?;
            set("seed", Value::Integer(seed));
        }
        if let Some(dir) = &self.out_dir {
            set("paths.out_dir", path_value(dir));
        }
        if let Some(n) = self.parallelism {
            set("parallelism", Value::Integer(n as i64));
        }
        match &self.command {
            Command::Generate { scenario } => {
                if let Some(p) = scenario {
                    set("paths.scenario", path_value(p));
                }
            }
            Command::Profile { fault_free, profile } => {
                if let Some(p) = fault_free {
                    set("paths.fault_free", path_value(p));
                }
                if let Some(p) = profile {
                    set("paths.profile", path_value(p));
                }
            }
            Command::Run {
                production,
                profile,
                run_dir,
                budget,
            } => {
                if let Some(p) = production {
                    set("paths.production", path_value(p));
                }
                if let Some(p) = profile {
                    set("paths.profile", path_value(p));
                }
                if let Some(p) = run_dir {
                    set("paths.run_dir", path_value(p));
                }
                if let Some(b) = budget {
                    set("sampler.budget", Value::Float(*b));
                }
            }
            Command::Eval {
                run_dir,
                ground_truth,
                budgets,
                variants,
                results,
            } => {
                if let Some(p) = run_dir {
                    set("paths.run_dir", path_value(p));
                }
                if let Some(p) = ground_truth {
                    set("paths.ground_truth", path_value(p));
                }
                if let Some(b) = budgets {
                    set("eval.budgets", Value::Array(b.iter().map(|x| Value::Float(*x)).collect()));
                }
                if let Some(v) = variants {
                    set(
                        "eval.variants",
                        Value::Array(v.iter().map(|x| Value::String(x.trim().to_owned())).collect()),
                    );
                }
                if let Some(p) = results {
                    set("paths.results", path_value(p));
                }
            }
        }
        Ok(out)
    }

    pub fn effective_config(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(self.config.as_deref(), &self.overrides()?)
    }
}

/// Runs one subcommand under the configured thread count and prints a
/// one-line summary to stderr.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = cli.effective_config()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| CliError::Config(format!("parallelism: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Generate { .. } => {
            let scenario = cmd_generate(&config)?;
            eprintln!(
                "generated {} fault(s) into {}",
                scenario.faults.len(),
                config.paths.out_dir.display()
            );
            Ok(())
        }
        Command::Profile { .. } => {
            let profile = cmd_profile(&config)?;
            eprintln!(
                "profiled {} services over {} windows into {}",
                profile.services.len(),
                profile.fault_free_windows,
                config.paths.resolve(&config.paths.profile).display()
            );
            Ok(())
        }
        Command::Run { .. } => {
            let s = cmd_run(&config)?;
            eprintln!(
                "{} windows ({} anomalous): kept {}/{} traces and {}/{} logs in {}",
                s.windows,
                s.anomalous_windows,
                s.selected_traces,
                s.traces,
                s.selected_logs,
                s.logs,
                s.run_dir.display()
            );
            if s.rejected_traces > 0 {
                eprintln!("{} malformed traces were skipped", s.rejected_traces);
            }
            Ok(())
        }
        Command::Eval { .. } => {
            let rows = cmd_eval(&config)?;
            eprintln!(
                "wrote {} rows to {}",
                rows.len(),
                config.paths.resolve(&config.paths.results).display()
            );
            Ok(())
        }
    })
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let command = Cli::command().after_help(defaults_listing());
    let cli = match command.try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("postsample: {e}");
            e.exit_code()
        }
    }
}
