//! `vo-bench`: runs the synthetic studies and dataset evaluations of
//! `vo-core` and writes one CSV per run.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.

mod commands;
mod convert;
pub mod table;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use convert::parse_flat_csv;

#[derive(Debug, Parser)]
#[command(name = "vo-bench", version, about = "Benchmarks for 5-DoF relative pose + 1-DoF translation magnitude odometry")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-trial maximum errors of the 5+1-DoF and 6-DoF estimators on
    /// synthetic sequences.
    CompareEstimators(CompareArgs),
    /// Per-frame errors of both estimators on synthetic sequences.
    ErrorPerFrame(CompareArgs),
    /// Relative pose accuracy against the functional weight.
    SweepWeight(SweepWeightArgs),
    /// Relative pose accuracy against the initial guess error Γ.
    SweepGuess(SweepGuessArgs),
    /// Full odometry sessions on synthetic sequences.
    RunVo(RunVoArgs),
    /// Relative pose accuracy on a correspondence dataset.
    DatasetEval(DatasetEvalArgs),
    /// Writes a correspondence dataset in the native text format.
    DatasetConvert(DatasetConvertArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Master seed; every trial derives its own seed from it.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long, env = "VO_BENCH_JOBS", value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DepthModeArg {
    Constant,
    Known,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    /// True rotation with jitter, as from a gyro.
    Gyro,
    /// Previous frame's estimate with jitter.
    Previous,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, value_enum, default_value_t = DepthModeArg::Constant)]
    pub depth_mode: DepthModeArg,
    #[arg(long, value_enum, default_value_t = PriorArg::Gyro)]
    pub prior: PriorArg,
    #[arg(long, default_value_t = 37, value_parser = clap::value_parser!(u64).range(2..))]
    pub frames: u64,
    #[arg(long, default_value_t = 0.75, value_parser = non_negative)]
    pub pixel_sigma: f64,
    #[arg(long, default_value_t = 0.0, value_parser = outlier_rate)]
    pub outlier_rate: f64,
    /// Functional weight W of the relative pose solver.
    #[arg(long, default_value_t = 50.0, value_parser = non_negative)]
    pub weight: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepWeightArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_value = "0,15,50,250,1000", value_parser = non_negative)]
    pub weights: Vec<f64>,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    /// Start every trial from the ground truth shrunk by Γ instead of a
    /// random rotation and direction error.
    #[arg(long, value_parser = unit_interval)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0.75, value_parser = non_negative)]
    pub pixel_sigma: f64,
    #[arg(long, default_value_t = 170, value_parser = clap::value_parser!(u64).range(5..))]
    pub points: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepGuessArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.3,0.5,0.9", value_parser = unit_interval)]
    pub gammas: Vec<f64>,
    /// Correspondence dataset; without it, synthetic narrow-field-of-view
    /// records are generated.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Number of synthetic records.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub records: u64,
    #[arg(long, default_value_t = 50.0, value_parser = non_negative)]
    pub weight: f64,
}

#[derive(Debug, Clone, Args)]
pub struct RunVoArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, default_value_t = 37, value_parser = clap::value_parser!(u64).range(2..))]
    pub frames: u64,
    #[arg(long, default_value_t = 25.0, value_parser = non_negative)]
    pub rotation_deg: f64,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub translation_m: f64,
    #[arg(long, default_value_t = 0.75, value_parser = non_negative)]
    pub pixel_sigma: f64,
    /// Feed the true rotation, jittered by up to this many degrees per
    /// axis, as a gyro prior.
    #[arg(long, value_parser = non_negative)]
    pub gyro_noise_deg: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct DatasetEvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0.0, value_parser = unit_interval)]
    pub gamma: f64,
    #[arg(long, default_value_t = 50.0, value_parser = non_negative)]
    pub weight: f64,
    /// Keep at most this many records per sequence.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub subsample: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConvertFrom {
    /// The native text format (useful with --subsample).
    Native,
    /// CSV with one correspondence per row:
    /// pair_id,sequence,qw,qx,qy,qz,tx,ty,tz,fx,fy,fz,fx2,fy2,fz2
    FlatCsv,
    /// Generated two-view records.
    Synthetic,
}

#[derive(Debug, Clone, Args)]
pub struct DatasetConvertArgs {
    #[arg(long, value_enum)]
    pub from: ConvertFrom,
    /// Input file for `native` and `flat-csv`.
    #[arg(long, required_if_eq_any = [("from", "native"), ("from", "flat-csv")])]
    pub input: Option<PathBuf>,
    /// Output dataset path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Number of synthetic records.
    #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u64).range(1..))]
    pub records: u64,
    /// Sequence name of synthetic records.
    #[arg(long, default_value = "synthetic")]
    pub sequence: String,
    /// Synthetic records without pixel noise; for other sources, marks
    /// every record noiseless.
    #[arg(long)]
    pub noiseless: bool,
    /// Narrow-field-of-view, short-baseline synthetic records.
    #[arg(long)]
    pub low_parallax: bool,
    /// Keep at most this many records per sequence.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub subsample: Option<u64>,
}

fn parse_real(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("{s:?} is not a number"))?;
    if !v.is_finite() {
        return Err(format!("{s:?} is not finite"));
    }
    Ok(v)
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v = parse_real(s)?;
    if v < 0.0 {
        return Err(format!("{v} is negative"));
    }
    Ok(v)
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v = parse_real(s)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("{v} is outside [0, 1]"));
    }
    Ok(v)
}

fn outlier_rate(s: &str) -> Result<f64, String> {
    let v = parse_real(s)?;
    if !(0.0..1.0).contains(&v) {
        return Err(format!("{v} is outside [0, 1)"));
    }
    Ok(v)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
