//! `rrnit`: run, compare and verify iterated Tikhonov experiments.

mod commands;
mod methods;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rrnit_core::io::TraceFormat;
use rrnit_core::linop::Boundary;
use rrnit_core::multiplier::WarmStart;
use rrnit_core::problems::XStar;
use rrnit_core::Method;

const EXIT_CODES: &str = "\
Exit codes:
  0   run stopped by the discrepancy principle / all checks passed
  1   verify: at least one check failed
  2   run stopped at --max-outer (compare: some run did not reach the discrepancy stop)
  3   run stopped because a multiplier search or linear solve failed
  4   gnit/sit run flagged unstable
  64  bad command-line usage
  65  malformed trace, manifest or image
  66  input file missing
  74  I/O error while writing output";

#[derive(Parser, Debug)]
#[command(name = "rrnit", version, about = "Range-relaxed iterated Tikhonov experiments", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one method on one problem and write its trace and manifest.
    Run(RunArgs),
    /// Run several methods over noise levels and seeds; print an "N (k)" table.
    Compare(CompareArgs),
    /// Re-check a written trace against its manifest.
    Verify(VerifyArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ProblemKind {
    Hilbert,
    Deblur,
}

#[derive(Args, Debug, Clone)]
struct ProblemArgs {
    #[arg(long, value_enum, default_value = "hilbert")]
    problem: ProblemKind,
    /// Hilbert matrix size.
    #[arg(long, default_value_t = 25)]
    n: usize,
    /// Hilbert ground truth.
    #[arg(long, default_value = "ones")]
    x_star: XStar,
    /// Deblur input image (PGM); a checkerboard is used when absent.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Checkerboard side length.
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Checkerboard cell size.
    #[arg(long, default_value_t = 4)]
    cell: usize,
    #[arg(long, default_value_t = 9)]
    psf_size: usize,
    #[arg(long, default_value_t = 1.5)]
    sigma: f64,
    #[arg(long, default_value = "periodic")]
    boundary: Boundary,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Residual contraction factor (rrnit).
    #[arg(long, default_value_t = 0.2)]
    p: f64,
    /// Geometric ratio (gnit).
    #[arg(long, default_value_t = 2.0)]
    q: f64,
    /// Constant multiplier (sit).
    #[arg(long, default_value_t = 2.0)]
    lambda_bar: f64,
    /// Discrepancy factor; defaults to 2 for hilbert and 3 for deblur.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    max_outer: usize,
    /// Greedy Newton numerator G instead of G - delta^2.
    #[arg(long, overrides_with = "no_m1")]
    m1: bool,
    #[arg(long, overrides_with = "m1")]
    no_m1: bool,
    /// Over-relaxed Newton steps.
    #[arg(long, overrides_with = "no_m2")]
    m2: bool,
    #[arg(long, overrides_with = "m2")]
    no_m2: bool,
    /// Warm-started first multiplier guess.
    #[arg(long, overrides_with = "no_m3")]
    m3: bool,
    #[arg(long, overrides_with = "m3")]
    no_m3: bool,
    #[arg(long, default_value = "extrapolate")]
    warm_start: WarmStart,
    /// Relative tolerance of the inner CG solves.
    #[arg(long, default_value_t = 1e-10)]
    solver_tol: f64,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "rrnit")]
    method: Method,
    /// Relative noise level ||y_delta - y|| / ||y||.
    #[arg(long, default_value_t = 1e-5)]
    noise_level: f64,
    /// Trace output path; the manifest is written next to it.
    #[arg(long, default_value = "trace.csv")]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    format: TraceFormat,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Method spec, repeatable: `rrnit`, `gnit:q=3`, `sit:lambda-bar=2`,
    /// `rrnit:p=0.1:m2=off`.
    #[arg(long = "method", required = true)]
    methods: Vec<String>,
    /// Relative noise levels (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "1e-3,1e-4,1e-5")]
    noise_levels: Vec<f64>,
    /// Seeds (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    /// Summary output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: TraceFormat,
    /// Evaluate runs one after another.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Trace file written by `rrnit run`.
    trace: PathBuf,
    /// Manifest; defaults to `<trace stem>.manifest.json` next to the trace.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Also re-run the solver and require a bit-identical trace.
    #[arg(long)]
    rerun: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(commands::EXIT_USAGE),
            };
        }
    };
    let code = match cli.command {
        Command::Run(args) => commands::run(args),
        Command::Compare(args) => commands::compare(args),
        Command::Verify(args) => commands::verify(args),
    };
    ExitCode::from(code)
}
