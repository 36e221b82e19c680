use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use chisigma_core::error::Error;

mod commands;

/// Gaussian noise level and degrees of freedom of magnitude MRI data.
#[derive(Debug, Parser)]
#[command(name = "chisigma", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate σ_g and N for every slice of a 4D NIfTI volume.
    Estimate(EstimateArgs),
    /// Generate a noisy synthetic phantom and its ground truth.
    Simulate(SimulateArgs),
    /// Score an estimate report against simulated ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Moments,
    Mle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Uniform,
    Sphere,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GeometryArg {
    Spheres,
    Ball,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Input volume (.nii or .nii.gz).
    input: PathBuf,
    /// Two-sided rejection probability.
    #[arg(long, default_value_t = 0.05)]
    p: f64,
    /// Number of σ candidates in the first pass.
    #[arg(long, default_value_t = 50)]
    grid: usize,
    #[arg(long, default_value_t = 1.0)]
    nmin: f64,
    #[arg(long, default_value_t = 12.0)]
    nmax: f64,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Moments)]
    estimator: EstimatorArg,
    /// Known N; σ is then estimated with N held fixed.
    #[arg(long)]
    fixed_n: Option<f64>,
    #[arg(long, value_enum, default_value_t = AxisArg::Z)]
    axis: AxisArg,
    #[arg(long)]
    out_report: Option<PathBuf>,
    /// Stacked per-slice noise masks as uint8 NIfTI.
    #[arg(long)]
    out_mask: Option<PathBuf>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Worker threads, a positive integer or `auto` (also CHI_SIGMA_THREADS).
    #[arg(long)]
    threads: Option<String>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Spatial size as X,Y,Z.
    #[arg(long, value_parser = parse_dims, default_value = "64,64,50")]
    dims: [usize; 3],
    #[arg(long, default_value_t = 65)]
    volumes: usize,
    #[arg(long, default_value_t = 30.0)]
    snr: f64,
    /// Number of receiver channels N; must be an integer.
    #[arg(long, default_value_t = 1.0)]
    ncoils: f64,
    #[arg(long, value_enum, default_value_t = ProfileArg::Uniform)]
    profile: ProfileArg,
    #[arg(long, default_value_t = 1.75)]
    tau_max: f64,
    #[arg(long, value_enum, default_value_t = GeometryArg::Spheres)]
    geometry: GeometryArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_dims(raw: &str) -> Result<[usize; 3], String> {
    let parts: Vec<_> = raw.split(',').map(|p| p.trim().parse::<usize>()).collect();
    match parts.as_slice() {
        [Ok(x), Ok(y), Ok(z)] => Ok([*x, *y, *z]),
        _ => Err(format!("expected X,Y,Z with three integers, got '{raw}'")),
    }
}

/// Why a command stopped early.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
    AllSlicesFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::AllSlicesFailed => 3,
            Failure::Core(e) => match e {
                Error::Config(_) | Error::Phantom(_) | Error::Domain { .. } => 1,
                Error::Io { .. }
                | Error::MalformedHeader(_)
                | Error::UnsupportedDatatype(_)
                | Error::DimensionOverflow(_)
                | Error::Schema(_)
                | Error::Mismatch(_) => 2,
                _ => 3,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(msg) => f.write_str(msg),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::AllSlicesFailed => f.write_str("estimation failed on every slice"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Estimate(args) => commands::estimate(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::Evaluate(args) => commands::evaluate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
