use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rrnit_core::batch::{self, CompareCell, MethodSpec};
use rrnit_core::io::{self, fmt_real, RunManifest, TraceFormat, TraceHeader};
use rrnit_core::iteration::{verify_trace, CheckStatus};
use rrnit_core::problems::{ImageSource, ProblemSpec};
use rrnit_core::{run as run_solver, Error, Mode, RunTrace, SolverConfig, StopReason};

use crate::methods::parse_method_spec;
use crate::{CompareArgs, ProblemArgs, ProblemKind, RunArgs, SolverArgs, VerifyArgs};

pub const EXIT_VERIFY_FAILED: u8 = 1;
pub const EXIT_MAX_OUTER: u8 = 2;
pub const EXIT_INNER_FAILURE: u8 = 3;
pub const EXIT_UNSTABLE: u8 = 4;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_DATA: u8 = 65;
pub const EXIT_NO_INPUT: u8 = 66;
pub const EXIT_IO: u8 = 74;

fn exit_for_error(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => EXIT_USAGE,
        Error::Malformed(_) | Error::Json(_) => EXIT_DATA,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_NO_INPUT,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_INNER_FAILURE,
    }
}

fn fail(context: &str, e: &Error) -> u8 {
    eprintln!("rrnit: {context}: {e}");
    exit_for_error(e)
}

fn exit_for_stop(reason: StopReason) -> u8 {
    match reason {
        StopReason::Discrepancy => 0,
        StopReason::MaxOuter => EXIT_MAX_OUTER,
        StopReason::InnerFailure => EXIT_INNER_FAILURE,
        StopReason::Unstable => EXIT_UNSTABLE,
    }
}

fn problem_spec(args: &ProblemArgs, noise_level: f64) -> Result<ProblemSpec, Error> {
    Ok(match args.problem {
        ProblemKind::Hilbert => ProblemSpec::Hilbert {
            n: args.n,
            x_star: args.x_star,
            noise_level,
            seed: args.seed,
        },
        ProblemKind::Deblur => {
            let image = match &args.image {
                Some(path) => ImageSource::Pgm {
                    path: std::fs::canonicalize(path)?,
                },
                None => ImageSource::Checkerboard {
                    size: args.size,
                    cell: args.cell,
                },
            };
            ProblemSpec::Deblur {
                image,
                psf_size: args.psf_size,
                sigma: args.sigma,
                boundary: args.boundary,
                noise_level,
                seed: args.seed,
            }
        }
    })
}

fn solver_config(args: &SolverArgs, problem: ProblemKind) -> SolverConfig {
    let mut cfg = SolverConfig {
        p: args.p,
        q: args.q,
        lambda_bar: args.lambda_bar,
        tau: args.tau.unwrap_or(match problem {
            ProblemKind::Hilbert => 2.0,
            ProblemKind::Deblur => 3.0,
        }),
        max_outer: args.max_outer,
        ..Default::default()
    };
    cfg.multiplier.greedy = !args.no_m1;
    cfg.multiplier.over_relax = !args.no_m2;
    cfg.multiplier.warm_start = !args.no_m3;
    cfg.multiplier.warm_start_mode = args.warm_start;
    cfg.multiplier.solve.tol = args.solver_tol;
    cfg
}

fn write_trace(trace: &RunTrace, path: &Path, format: TraceFormat) -> Result<(), Error> {
    let out = BufWriter::new(File::create(path)?);
    match format {
        TraceFormat::Csv => io::write_trace_csv(trace, out),
        TraceFormat::Json => io::write_trace_json(trace, out),
    }
}

pub fn run(args: RunArgs) -> u8 {
    let spec = match problem_spec(&args.problem, args.noise_level) {
        Ok(s) => s,
        Err(e) => return fail("problem", &e),
    };
    let mut config = solver_config(&args.solver, args.problem.problem);
    config.method = args.method;
    if let Err(e) = config.validate() {
        return fail("configuration", &e);
    }
    let started = io::unix_ms_now();
    let problem = match spec.build() {
        Ok(p) => p,
        Err(e) => return fail("building problem", &e),
    };
    let trace = match run_solver(&problem, &config) {
        Ok(t) => t,
        Err(e) => return fail("run", &e),
    };
    let finished = io::unix_ms_now();

    if let Err(e) = write_trace(&trace, &args.out, args.format) {
        return fail(&format!("writing {}", args.out.display()), &e);
    }
    let manifest_path = io::manifest_path_for(&args.out);
    let manifest = RunManifest {
        tool: "rrnit".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        problem: spec.clone(),
        config,
        seed: spec.seed(),
        rng: io::RNG_DESCRIPTION.into(),
        trace_file: args
            .out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        trace_format: args.format,
        run: TraceHeader::of(&trace),
        started_unix_ms: started,
        finished_unix_ms: finished,
        notes: vec!["noise_level is relative to ||y||; delta is absolute".into()],
    };
    if let Err(e) = io::write_manifest(&manifest_path, &manifest) {
        return fail(&format!("writing {}", manifest_path.display()), &e);
    }

    println!(
        "{} stopped by {} after {} steps, {} linear solves; residual {} (tau*delta = {})",
        trace.method,
        trace.stop_reason.name(),
        trace.iterations(),
        trace.total_linear_solves(),
        fmt_real(trace.final_residual()),
        fmt_real(trace.tau * trace.delta),
    );
    if let Some(err) = trace.final_error() {
        println!("error ||x* - x_k|| = {}", fmt_real(err));
    }
    if let Some(msg) = &trace.failure {
        eprintln!("rrnit: {msg}");
    }
    println!("trace: {}\nmanifest: {}", args.out.display(), manifest_path.display());
    exit_for_stop(trace.stop_reason)
}

fn write_summary(cells: &[CompareCell], path: &Path, format: TraceFormat) -> Result<(), Error> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        TraceFormat::Json => serde_json::to_writer_pretty(&mut out, cells)?,
        TraceFormat::Csv => {
            writeln!(out, "noise_level,method,median_linear_solves,median_iterations,entry,discrepancy_runs,runs")?;
            for c in cells {
                let stopped = c.runs.iter().filter(|r| r.stop_reason == StopReason::Discrepancy).count();
                writeln!(
                    out,
                    "{},{},{},{},\"{}\",{},{}",
                    fmt_real(c.noise_level),
                    c.method,
                    c.median_linear_solves,
                    c.median_iterations,
                    c.table_entry(),
                    stopped,
                    c.runs.len()
                )?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn print_table(cells: &[CompareCell], methods: &[MethodSpec], levels: &[f64]) {
    let width = methods.iter().map(|m| m.label.len()).max().unwrap_or(6).max(6);
    print!("{:width$}", "method");
    for level in levels {
        print!("  {:>14}", format!("{level:e}"));
    }
    println!();
    for m in methods {
        print!("{:width$}", m.label);
        for level in levels {
            let cell = cells.iter().find(|c| c.method == m.label && c.noise_level == *level);
            let entry = cell.map_or_else(String::new, |c| {
                let mark = if c.all_discrepancy() { "" } else { "*" };
                format!("{}{mark}", c.table_entry())
            });
            print!("  {entry:>14}");
        }
        println!();
    }
}

pub fn compare(args: CompareArgs) -> u8 {
    let spec = match problem_spec(&args.problem, args.noise_levels.first().copied().unwrap_or(0.0)) {
        Ok(s) => s,
        Err(e) => return fail("problem", &e),
    };
    if args.noise_levels.is_empty() || args.seeds.is_empty() {
        eprintln!("rrnit: need at least one noise level and one seed");
        return EXIT_USAGE;
    }
    let base = solver_config(&args.solver, args.problem.problem);
    let mut methods = Vec::new();
    for m in &args.methods {
        match parse_method_spec(m, &base) {
            Ok(config) => methods.push(MethodSpec {
                label: m.clone(),
                config,
            }),
            Err(msg) => {
                eprintln!("rrnit: {msg}");
                return EXIT_USAGE;
            }
        }
    }
    let mode = if args.sequential { Mode::Sequential } else { Mode::default() };
    let cells = match batch::compare(&spec, &methods, &args.noise_levels, &args.seeds, mode) {
        Ok(c) => c,
        Err(e) => return fail("compare", &e),
    };

    println!("total linear solves (outer steps), median over {} seeds", args.seeds.len());
    print_table(&cells, &methods, &args.noise_levels);
    let complete = cells.iter().all(CompareCell::all_discrepancy);
    if !complete {
        println!("* some runs did not stop by the discrepancy principle");
    }
    if let Some(path) = &args.out {
        if let Err(e) = write_summary(&cells, path, args.format) {
            return fail(&format!("writing {}", path.display()), &e);
        }
        println!("summary: {}", path.display());
    }
    if complete {
        0
    } else {
        EXIT_MAX_OUTER
    }
}

pub fn verify(args: VerifyArgs) -> u8 {
    let manifest_path: PathBuf = args.manifest.clone().unwrap_or_else(|| io::manifest_path_for(&args.trace));
    let manifest = match io::read_manifest(&manifest_path) {
        Ok(m) => m,
        Err(e) => return fail(&format!("reading {}", manifest_path.display()), &e),
    };
    let trace = match io::read_trace_for(&manifest, &manifest_path, Some(&args.trace)) {
        Ok(t) => t,
        Err(e) => return fail(&format!("reading {}", args.trace.display()), &e),
    };
    let problem = match manifest.problem.build() {
        Ok(p) => p,
        Err(e) => return fail("rebuilding problem", &e),
    };

    let report = verify_trace(&trace, &problem, &manifest.config);
    for check in &report.checks {
        match &check.status {
            CheckStatus::Pass => println!("PASS  {}", check.name),
            CheckStatus::Fail(detail) => println!("FAIL  {}: {detail}", check.name),
            CheckStatus::NotApplicable(detail) => println!("SKIP  {}: {detail}", check.name),
        }
    }
    let mut ok = report.all_passed();

    if args.rerun {
        match run_solver(&problem, &manifest.config) {
            Ok(again) if again.records == trace.records && again.stop_reason == trace.stop_reason => {
                println!("PASS  rerun:bit-identical")
            }
            Ok(again) => {
                ok = false;
                let first = again
                    .records
                    .iter()
                    .zip(&trace.records)
                    .position(|(a, b)| a != b)
                    .unwrap_or(again.records.len().min(trace.records.len()));
                println!("FAIL  rerun:bit-identical: traces differ from step {}", first + 1);
            }
            Err(e) => {
                ok = false;
                println!("FAIL  rerun:bit-identical: {e}");
            }
        }
    }
    if ok {
        0
    } else {
        EXIT_VERIFY_FAILED
    }
}
