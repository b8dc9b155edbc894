//! File formats: PGM images, CSV/JSON traces and run manifests.
//!
//! CSV traces have a fixed header
//!
//! ```text
//! k,lambda,residual,error,inner_iters,cum_linear_solves,linear_solves,krylov_iters,step_norm_sq,prev_grad_sq,gain,model_error_sq
//! ```
//!
//! with reals written in scientific notation with 17 significant digits and
//! empty cells for quantities that need a ground truth. Run-level fields
//! (method, noise level, stop reason, ...) live in the manifest. JSON traces
//! are the serialized [`RunTrace`] and are self-contained.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::iteration::{IterationRecord, Method, RunTrace, SolverConfig, StopReason};
use crate::problems::ProblemSpec;

pub const CSV_COLUMNS: [&str; 12] = [
    "k",
    "lambda",
    "residual",
    "error",
    "inner_iters",
    "cum_linear_solves",
    "linear_solves",
    "krylov_iters",
    "step_norm_sq",
    "prev_grad_sq",
    "gain",
    "model_error_sq",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for TraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TraceFormat::Csv),
            "json" => Ok(TraceFormat::Json),
            other => Err(Error::invalid(format!("unknown trace format `{other}`"))),
        }
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(trace: &RunTrace, mut out: W) -> Result<()> {
    writeln!(out, "{}", CSV_COLUMNS.join(","))?;
    for r in &trace.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.k,
            fmt_real(r.lambda),
            fmt_real(r.residual),
            fmt_opt(r.error),
            r.inner_iterations,
            r.cumulative_linear_solves,
            r.linear_solves,
            r.krylov_iterations,
            fmt_real(r.step_norm_sq),
            fmt_real(r.prev_grad_sq),
            fmt_opt(r.gain),
            fmt_opt(r.model_error_sq),
        )?;
    }
    Ok(())
}

/// Run-level fields that a CSV trace does not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub method: Method,
    pub delta: f64,
    pub tau: f64,
    pub initial_residual: f64,
    pub initial_error: Option<f64>,
    pub stop_reason: StopReason,
    pub k_star: Option<usize>,
    pub failure: Option<String>,
    pub iterations: usize,
    pub total_linear_solves: usize,
}

impl TraceHeader {
    pub fn of(trace: &RunTrace) -> Self {
        TraceHeader {
            method: trace.method,
            delta: trace.delta,
            tau: trace.tau,
            initial_residual: trace.initial_residual,
            initial_error: trace.initial_error,
            stop_reason: trace.stop_reason,
            k_star: trace.k_star,
            failure: trace.failure.clone(),
            iterations: trace.records.len(),
            total_linear_solves: trace.total_linear_solves(),
        }
    }
}

fn parse_field<T: std::str::FromStr>(line: usize, name: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Malformed(format!("line {line}: cannot parse {name} from `{s}`")))
}

fn parse_opt(line: usize, name: &str, s: &str) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_field(line, name, s).map(Some)
    }
}

pub fn read_trace_csv<R: BufRead>(input: R, header: &TraceHeader) -> Result<RunTrace> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Malformed("empty trace file".into()))??;
    let cols: Vec<&str> = first.trim().split(',').collect();
    if cols != CSV_COLUMNS {
        return Err(Error::Malformed(format!("unexpected CSV header `{}`", first.trim())));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != CSV_COLUMNS.len() {
            return Err(Error::Malformed(format!(
                "line {lineno}: expected {} fields, found {}",
                CSV_COLUMNS.len(),
                f.len()
            )));
        }
        records.push(IterationRecord {
            k: parse_field(lineno, "k", f[0])?,
            lambda: parse_field(lineno, "lambda", f[1])?,
            residual: parse_field(lineno, "residual", f[2])?,
            error: parse_opt(lineno, "error", f[3])?,
            inner_iterations: parse_field(lineno, "inner_iters", f[4])?,
            cumulative_linear_solves: parse_field(lineno, "cum_linear_solves", f[5])?,
            linear_solves: parse_field(lineno, "linear_solves", f[6])?,
            krylov_iterations: parse_field(lineno, "krylov_iters", f[7])?,
            step_norm_sq: parse_field(lineno, "step_norm_sq", f[8])?,
            prev_grad_sq: parse_field(lineno, "prev_grad_sq", f[9])?,
            gain: parse_opt(lineno, "gain", f[10])?,
            model_error_sq: parse_opt(lineno, "model_error_sq", f[11])?,
        });
    }
    if records.len() != header.iterations {
        return Err(Error::Malformed(format!(
            "trace has {} rows but the manifest records {} iterations",
            records.len(),
            header.iterations
        )));
    }
    Ok(RunTrace {
        method: header.method,
        delta: header.delta,
        tau: header.tau,
        initial_residual: header.initial_residual,
        initial_error: header.initial_error,
        records,
        stop_reason: header.stop_reason,
        k_star: header.k_star,
        failure: header.failure.clone(),
        final_iterate: Vec::new(),
    })
}

pub fn write_trace_json<W: Write>(trace: &RunTrace, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, trace)?;
    Ok(())
}

pub fn read_trace_json<R: std::io::Read>(input: R) -> Result<RunTrace> {
    serde_json::from_reader(input).map_err(|e| Error::Malformed(format!("trace JSON: {e}")))
}

/// Everything needed to rebuild and re-verify a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub problem: ProblemSpec,
    pub config: SolverConfig,
    pub seed: u64,
    /// Noise generator identification.
    pub rng: String,
    pub trace_file: String,
    pub trace_format: TraceFormat,
    pub run: TraceHeader,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub notes: Vec<String>,
}

pub const RNG_DESCRIPTION: &str = "ChaCha8Rng (rand_chacha 0.9) seed_from_u64, StandardNormal (rand_distr 0.5)";

pub fn unix_ms_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Manifest path next to a trace: `trace.csv` -> `trace.manifest.json`.
pub fn manifest_path_for(trace_path: &Path) -> std::path::PathBuf {
    let stem = trace_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".into());
    trace_path.with_file_name(format!("{stem}.manifest.json"))
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let f = fs::File::create(path)?;
    serde_json::to_writer_pretty(f, manifest)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let f = fs::File::open(path)?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Malformed(format!("manifest: {e}")))
}

/// Reads the trace a manifest points to (relative paths resolve against
/// the manifest's directory).
pub fn read_trace_for(manifest: &RunManifest, manifest_path: &Path, trace_path: Option<&Path>) -> Result<RunTrace> {
    let path = match trace_path {
        Some(p) => p.to_path_buf(),
        None => {
            let p = Path::new(&manifest.trace_file);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                manifest_path.parent().unwrap_or(Path::new(".")).join(p)
            }
        }
    };
    let f = BufReader::new(fs::File::open(&path)?);
    match manifest.trace_format {
        TraceFormat::Csv => read_trace_csv(f, &manifest.run),
        TraceFormat::Json => read_trace_json(f),
    }
}

fn next_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        match byte[0] {
            b'#' if tok.is_empty() => {
                let mut rest = Vec::new();
                r.read_until(b'\n', &mut rest)?;
            }
            c if c.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            c => tok.push(c),
        }
    }
    if tok.is_empty() {
        return Err(Error::Malformed("PGM: unexpected end of header".into()));
    }
    String::from_utf8(tok).map_err(|_| Error::Malformed("PGM: non-ASCII header".into()))
}

/// Reads an 8- or 16-bit grayscale PGM (`P5` binary or `P2` ASCII),
/// scaling samples to `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<Grid> {
    let mut r = BufReader::new(fs::File::open(path)?);
    read_pgm_from(&mut r)
}

pub fn read_pgm_from<R: BufRead>(r: &mut R) -> Result<Grid> {
    let magic = next_token(r)?;
    let width: usize = next_token(r)?.parse().map_err(|_| Error::Malformed("PGM: bad width".into()))?;
    let height: usize = next_token(r)?.parse().map_err(|_| Error::Malformed("PGM: bad height".into()))?;
    let maxval: u32 = next_token(r)?.parse().map_err(|_| Error::Malformed("PGM: bad maxval".into()))?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Malformed(format!("PGM: invalid header {width}x{height} maxval {maxval}")));
    }
    let n = width * height;
    let scale = 1.0 / maxval as f64;
    let data: Vec<f64> = match magic.as_str() {
        "P5" => {
            let bytes_per = if maxval < 256 { 1 } else { 2 };
            let mut buf = vec![0u8; n * bytes_per];
            r.read_exact(&mut buf)
                .map_err(|_| Error::Malformed("PGM: truncated pixel data".into()))?;
            if bytes_per == 1 {
                buf.iter().map(|&b| b as f64 * scale).collect()
            } else {
                buf.chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
                    .collect()
            }
        }
        "P2" => (0..n)
            .map(|_| {
                next_token(r)?
                    .parse::<u32>()
                    .map(|v| v as f64 * scale)
                    .map_err(|_| Error::Malformed("PGM: bad sample".into()))
            })
            .collect::<Result<_>>()?,
        other => return Err(Error::Malformed(format!("PGM: unsupported magic `{other}`"))),
    };
    Grid::new(height, width, data)
}

/// Writes an 8-bit binary PGM, clamping samples to `[0, 1]`.
pub fn write_pgm(path: &Path, image: &Grid) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write!(f, "P5\n{} {}\n255\n", image.cols(), image.rows())?;
    let bytes: Vec<u8> = image
        .as_slice()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    f.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iteration::run;
    use crate::problems::{make_hilbert_problem, XStar};
    use std::io::Cursor;

    fn sample_trace() -> RunTrace {
        let p = make_hilbert_problem(8, XStar::Ones, 1e-3, 0).unwrap();
        run(&p, &SolverConfig::default()).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = sample_trace();
        let mut buf = Vec::new();
        write_trace_csv(&t, &mut buf).unwrap();
        let back = read_trace_csv(Cursor::new(buf), &TraceHeader::of(&t)).unwrap();
        assert_eq!(back.records, t.records);
        assert_eq!(back.k_star, t.k_star);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let t = sample_trace();
        let mut buf = Vec::new();
        write_trace_json(&t, &mut buf).unwrap();
        let back = read_trace_json(Cursor::new(buf)).unwrap();
        assert_eq!(back.records, t.records);
        assert_eq!(back.stop_reason, t.stop_reason);
    }

    #[test]
    fn malformed_csv_rejected() {
        let t = sample_trace();
        let h = TraceHeader::of(&t);
        assert!(matches!(read_trace_csv(Cursor::new(""), &h), Err(Error::Malformed(_))));
        assert!(matches!(read_trace_csv(Cursor::new("a,b\n"), &h), Err(Error::Malformed(_))));
        let bad = format!("{}\n1,x,2,,0,1,1,0,0,0,,\n", CSV_COLUMNS.join(","));
        assert!(matches!(read_trace_csv(Cursor::new(bad), &h), Err(Error::Malformed(_))));
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_real(0.1), "1.0000000000000001e-1");
        let x = std::f64::consts::PI / 7.0;
        assert_eq!(fmt_real(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn pgm_8bit_and_16bit() {
        let mut p5 = b"P5\n# comment\n3 2\n255\n".to_vec();
        p5.extend_from_slice(&[0, 51, 255, 102, 153, 204]);
        let g = read_pgm_from(&mut Cursor::new(p5)).unwrap();
        assert_eq!((g.rows(), g.cols()), (2, 3));
        assert_eq!(g.get(0, 2), 1.0);
        assert!((g.get(1, 0) - 0.4).abs() < 1e-15);

        let mut p5 = b"P5 2 1 65535\n".to_vec();
        p5.extend_from_slice(&[0xff, 0xff, 0x80, 0x00]);
        let g = read_pgm_from(&mut Cursor::new(p5)).unwrap();
        assert_eq!(g.get(0, 0), 1.0);
        assert!((g.get(0, 1) - 32768.0 / 65535.0).abs() < 1e-15);

        let p2 = "P2\n2 2\n4\n0 1\n2 4\n";
        let g = read_pgm_from(&mut Cursor::new(p2)).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.25, 0.5, 1.0]);

        assert!(read_pgm_from(&mut Cursor::new("P6 1 1 255\n\0\0\0")).is_err());
        assert!(read_pgm_from(&mut Cursor::new("P5 4 4 255\n\0")).is_err());
    }

    #[test]
    fn pgm_write_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let g = Grid::from_fn(4, 5, |r, c| ((r * 5 + c) as f64) / 19.0).unwrap();
        write_pgm(&path, &g).unwrap();
        let back = read_pgm(&path).unwrap();
        for (a, b) in back.as_slice().iter().zip(g.as_slice()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn manifest_paths() {
        assert_eq!(
            manifest_path_for(Path::new("/tmp/out/run1.csv")),
            Path::new("/tmp/out/run1.manifest.json")
        );
    }
}
