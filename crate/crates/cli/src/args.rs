use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "qerr",
    version,
    about = "Error accumulation in quantum circuits as coupled Markov chains"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML file with defaults for any flag; flags win over the file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Fail with exit code 3 on numerical-health warnings and require --seed
    /// for randomized commands.
    #[arg(long, global = true)]
    pub strict: bool,

    /// Output file (stdout when absent).
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Also write a gnuplot script next to --output.
    #[arg(long, global = true)]
    pub gnuplot: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact curves for random circuits with gates drawn from a distribution.
    AnalyzeRandom(AnalyzeRandom),
    /// Exact curves for a fixed gate sequence.
    AnalyzeFixed(AnalyzeFixed),
    /// Monte Carlo estimates of the same curves.
    Simulate(Simulate),
    /// Continuous rotation-error model on the Bloch sphere.
    Continuous(Continuous),
    /// Search for an equivalent circuit with lower error accumulation.
    Anneal(Anneal),
    /// Count the states reachable from an initial state.
    Reachable(Reachable),
    /// Print a group's order and generators, optionally export its table.
    GroupInfo(GroupInfo),
    /// Compare analytic and Monte Carlo CSV files point by point.
    Compare(Compare),
}

#[derive(Debug, Args)]
pub struct StateArgs {
    /// Group name, e.g. pauli:1, clifford:2.
    #[arg(long)]
    pub group: Option<String>,

    /// Faultless initial state: "|0>", "|+>", "sqrt(7/10)|0>+sqrt(3/10)|1>" or [[re,im],...].
    #[arg(long)]
    pub state: Option<String>,

    /// Faulty initial state (defaults to --state).
    #[arg(long)]
    pub faulty_state: Option<String>,

    /// Error model: none, pauli-channel:r, clifford-channel:r,
    /// pauli-product:pI,pX,pY,pZ;..., or a JSON/TOML file.
    #[arg(long)]
    pub error: Option<String>,

    /// Schatten norm order: a number >= 1 or inf.
    #[arg(long)]
    pub p: Option<String>,

    /// Error thresholds (repeat or comma-separate).
    #[arg(long, value_delimiter = ',')]
    pub delta: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeRandom {
    #[command(flatten)]
    pub common: StateArgs,

    /// Gate distribution: uniform or point:<gate>.
    #[arg(long)]
    pub kappa: Option<String>,

    /// Number of gates.
    #[arg(long)]
    pub tau: Option<usize>,

    /// Also report the largest gate count with P[max error] <= gamma.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeFixed {
    #[command(flatten)]
    pub common: StateArgs,

    /// Circuit file, one gate per line.
    #[arg(long)]
    pub circuit: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimModeArg {
    Random,
    Fixed,
    Rb,
}

#[derive(Debug, Args)]
pub struct Simulate {
    #[command(flatten)]
    pub common: StateArgs,

    #[arg(long, value_enum)]
    pub mode: Option<SimModeArg>,

    #[arg(long)]
    pub kappa: Option<String>,

    #[arg(long)]
    pub tau: Option<usize>,

    /// Circuit file for --mode fixed.
    #[arg(long)]
    pub circuit: Option<PathBuf>,

    #[arg(long)]
    pub runs: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct Continuous {
    /// Fixed kick angle in radians.
    #[arg(long)]
    pub alpha: Option<f64>,

    /// JSON kick mixture: [[angle, weight], ...] or {"per_step": [[[angle, weight], ...], ...]}.
    #[arg(long)]
    pub mixture_file: Option<PathBuf>,

    /// Depolarization probability per gate.
    #[arg(long)]
    pub q: Option<f64>,

    #[arg(long)]
    pub t_max: Option<usize>,

    #[arg(long)]
    pub delta: Option<f64>,

    /// Series truncation: adaptive or a fixed term count.
    #[arg(long)]
    pub truncation: Option<String>,

    /// Sphere-walk runs for the Monte Carlo columns (0 disables them).
    #[arg(long)]
    pub runs: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleArg {
    CLog,
    Guaranteed,
    Constant,
}

#[derive(Debug, Args)]
pub struct Anneal {
    #[command(flatten)]
    pub common: StateArgs,

    #[arg(long)]
    pub circuit: Option<PathBuf>,

    /// p-error or p-max-error.
    #[arg(long)]
    pub objective: Option<String>,

    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,

    /// C in T = C / ln(eta + 1).
    #[arg(long)]
    pub c: Option<f64>,

    /// M in T = tau M / ln(eta).
    #[arg(long)]
    pub m: Option<f64>,

    /// Temperature of the constant schedule.
    #[arg(long)]
    pub temperature: Option<f64>,

    #[arg(long)]
    pub iterations: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Independent restarts; the best result is kept.
    #[arg(long)]
    pub restarts: Option<usize>,

    /// Restrict to these gates, e.g. "I,X,Y,Z,H,CNOT".
    #[arg(long)]
    pub gate_subset: Option<String>,

    /// Where to write the best circuit (stderr summary only when absent).
    #[arg(long)]
    pub best_circuit: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Reachable {
    pub group: String,

    /// Initial state (defaults to |0...0>).
    #[arg(long)]
    pub state: Option<String>,

    /// Also print every reachable state.
    #[arg(long)]
    pub list: bool,
}

#[derive(Debug, Args)]
pub struct GroupInfo {
    pub group: String,

    /// Write the full table as JSON to this file.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Compare {
    pub analytic: PathBuf,
    pub empirical: PathBuf,

    /// Runs behind the empirical file (read from its `runs` column when absent).
    #[arg(long)]
    pub runs: Option<usize>,

    /// Agreement radius in standard errors.
    #[arg(long, default_value_t = 3.0)]
    pub z: f64,

    /// Fraction of points that must agree.
    #[arg(long, default_value_t = 0.95)]
    pub min_fraction: f64,
}
