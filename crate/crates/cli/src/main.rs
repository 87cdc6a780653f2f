//! Command-line entry point binding fixtures, pipelines, policies, and
//! analysis into reproducible runs.
//!
//! Exit codes: 0 when the command completed (even if runs inside it recorded
//! failures), 2 for configuration or usage problems, 3 for environment and
//! I/O problems.

mod cmd_analyze;
mod cmd_fixtures;
mod cmd_full;
mod cmd_simplified;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Environment variable holding the bearer credential for remote policies.
pub const POLICY_TOKEN_ENV: &str = "BUILDGYM_POLICY_TOKEN";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing paths, malformed inputs: exit 2.
    Config(String),
    /// Filesystem or environment failures mid-run: exit 3.
    Io(String),
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError::Config(message.into())
    }

    fn io(message: impl Into<String>) -> Self {
        CliError::Io(message.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(message) => write!(f, "configuration error: {message}"),
            CliError::Io(message) => write!(f, "I/O error: {message}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Io(err.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "buildgym",
    about = "Sandboxed environment and evaluation harness for automated build-repair agents",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Manage fixture corpora: scaffold, list, verify, measure build times.
    Fixtures(cmd_fixtures::FixturesArgs),
    /// Run the iterative repair pipeline per fixture.
    Full(cmd_full::FullArgs),
    /// Run one-shot batch rollouts over a problem set.
    Simplified(cmd_simplified::SimplifiedArgs),
    /// Evaluation-only mode: repeated runs with confidence intervals.
    Evaluate(cmd_simplified::EvaluateArgs),
    /// Analyze trajectory logs: categories, tokens, turns, transitions.
    Analyze(cmd_analyze::AnalyzeArgs),
}

/// Numeric knobs shared across run commands; every value can also come from a
/// JSON config file (flags win).
#[derive(Args, Debug, Clone, Default)]
pub struct KnobArgs {
    /// JSON config file with the same keys as these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Tool-call cap per episode (50 full, 30 simplified by default).
    #[arg(long)]
    pub max_tool_calls: Option<u32>,
    /// Wall-clock cap per episode, seconds.
    #[arg(long)]
    pub max_wall_time: Option<f64>,
    /// Hard stop for the iterative loop.
    #[arg(long)]
    pub loop_cap: Option<u32>,
    /// Attempts per error signature.
    #[arg(long)]
    pub retry_cap: Option<u32>,
    /// Similar-error Jaccard threshold in (0, 1].
    #[arg(long)]
    pub similarity_threshold: Option<f64>,
    /// Bound on concurrent builds.
    #[arg(long)]
    pub max_concurrent_builds: Option<usize>,
    /// Problems per concurrent batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Rollouts per problem.
    #[arg(long)]
    pub rollouts: Option<usize>,
    /// Evaluation repeats.
    #[arg(long)]
    pub repeats: Option<u32>,
    /// Keep problems whose fixture builds faster than this many seconds.
    #[arg(long)]
    pub build_time_filter: Option<f64>,
    /// Per-tool wall-clock budget, seconds.
    #[arg(long)]
    pub tool_timeout: Option<f64>,
    /// Per-build wall-clock budget, seconds.
    #[arg(long)]
    pub build_timeout: Option<f64>,
    /// Base seed for run and episode derivation.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fixtures(args) => cmd_fixtures::run(args),
        Command::Full(args) => cmd_full::run(args),
        Command::Simplified(args) => cmd_simplified::run_simplified(args),
        Command::Evaluate(args) => cmd_simplified::run_evaluate(args),
        Command::Analyze(args) => cmd_analyze::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("buildgym: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
