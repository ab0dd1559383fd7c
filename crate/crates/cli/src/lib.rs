//! Command-line driver: compile circuits to pulses, simulate pulse programs,
//! print circuit unitaries and run parametric sweeps.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "qoc", version, about = "Gate-to-pulse compiler and pulse simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile a circuit into an optimal pulse program.
    Compile(CompileArgs),
    /// Simulate a pulse program and write the observable trajectory as CSV.
    Simulate(SimulateArgs),
    /// Print the unitary matrix of a circuit.
    Unitary(UnitaryArgs),
    /// Compile and simulate a one-parameter circuit over a list of values.
    Sweep(SweepArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OptimizerArgs {
    /// GRAPE, GOAT or krotov.
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub max_time: f64,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub amplitude_bound: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub accept_threshold: Option<f64>,
    /// Extra optimizer option as `key=<json>`, e.g. `control-funcs=["sin(t)"]`.
    #[arg(long = "set", value_name = "KEY=JSON")]
    pub extra: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct CompileArgs {
    pub circuit: PathBuf,
    pub model: PathBuf,
    #[command(flatten)]
    pub opt: OptimizerArgs,
    /// Pulse program path (default: `<circuit stem>.pulse.json`).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    pub pulse: PathBuf,
    pub model: PathBuf,
    /// One symbol per qubit, qubit 0 first: 0, 1, +, -, r (+i) or l (−i).
    #[arg(long)]
    pub initial_state: Option<String>,
    /// Extra comma-separated operator expressions to report, e.g. `Z0*Z1`.
    #[arg(long, value_delimiter = ',')]
    pub observables: Vec<String>,
    /// Adds amplitude damping with this T1 on every qubit.
    #[arg(long)]
    pub t1: Option<f64>,
    /// Static LO detuning δ applied to every qubit.
    #[arg(long, allow_hyphen_values = true)]
    pub lo_delta: Option<f64>,
    /// CSV path; standard output when omitted.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct UnitaryArgs {
    pub circuit: PathBuf,
    /// Free-parameter bindings, `name=value`.
    #[arg(long, value_delimiter = ',')]
    pub bind: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    pub circuit: PathBuf,
    pub model: PathBuf,
    /// Comma-separated parameter values; expressions such as `pi/2` allowed.
    #[arg(long, allow_hyphen_values = true)]
    pub values: String,
    #[command(flatten)]
    pub opt: OptimizerArgs,
    /// CSV path; standard output when omitted.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Failure with its process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Exit code 1.
    Io(String),
    /// Exit code 2: malformed input, unknown names, invalid options.
    Input(String),
    /// Exit code 3: optimization or simulation did not reach its target.
    Convergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Input(_) => 2,
            CliError::Convergence(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(m) | CliError::Input(m) | CliError::Convergence(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

/// Parses `args` (including the program name), runs the command and returns
/// what it printed to standard output.
pub fn run<I, T>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&args).map_err(|e| CliError::Input(e.to_string()))?;
    commands::dispatch(cli.command)
}

/// Entry point used by the binary.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if let Err(e) = Cli::try_parse_from(&args) {
        // help and version requests also arrive here
        let _ = e.print();
        return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
    }
    match run(args) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
