//! Multi-run comparisons (method x noise level x seed), evaluated in
//! parallel when enabled. Every run is deterministic, so the summary does
//! not depend on the execution mode.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::{self, Mode};
use crate::iteration::{run, RunTrace, SolverConfig, StopReason};
use crate::problems::ProblemSpec;

/// A labelled solver configuration taking part in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub label: String,
    pub config: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub total_linear_solves: usize,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub final_error: Option<f64>,
}

/// One cell of the summary table: a method at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareCell {
    pub method: String,
    pub noise_level: f64,
    pub median_linear_solves: f64,
    pub median_iterations: f64,
    pub runs: Vec<SeedOutcome>,
}

impl CompareCell {
    /// `"N (k)"`: total linear solves with the iteration count in parentheses.
    pub fn table_entry(&self) -> String {
        format!("{} ({})", fmt_count(self.median_linear_solves), fmt_count(self.median_iterations))
    }

    pub fn all_discrepancy(&self) -> bool {
        self.runs.iter().all(|r| r.stop_reason == StopReason::Discrepancy)
    }
}

fn fmt_count(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.1}")
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs a batch of independent `(problem, config)` jobs.
pub fn run_batch(jobs: &[(ProblemSpec, SolverConfig)], mode: Mode) -> Vec<Result<RunTrace>> {
    exec::map(mode, jobs, |(spec, cfg)| {
        let problem = spec.build()?;
        run(&problem, cfg)
    })
}

/// Runs every method on `spec` at every noise level and seed and returns
/// one cell per (noise level, method), levels outermost.
pub fn compare(
    spec: &ProblemSpec,
    methods: &[MethodSpec],
    noise_levels: &[f64],
    seeds: &[u64],
    mode: Mode,
) -> Result<Vec<CompareCell>> {
    let mut jobs = Vec::new();
    for &level in noise_levels {
        for m in methods {
            for &seed in seeds {
                jobs.push((spec.with_noise_level(level).with_seed(seed), m.config.clone()));
            }
        }
    }
    let results = run_batch(&jobs, mode);
    let mut traces = results.into_iter();
    let mut cells = Vec::new();
    for &level in noise_levels {
        for m in methods {
            let mut runs = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let t = traces.next().expect("one result per job")?;
                runs.push(SeedOutcome {
                    seed,
                    total_linear_solves: t.total_linear_solves(),
                    iterations: t.iterations(),
                    stop_reason: t.stop_reason,
                    final_error: t.final_error(),
                });
            }
            let mut solves: Vec<f64> = runs.iter().map(|r| r.total_linear_solves as f64).collect();
            let mut iters: Vec<f64> = runs.iter().map(|r| r.iterations as f64).collect();
            cells.push(CompareCell {
                method: m.label.clone(),
                noise_level: level,
                median_linear_solves: median(&mut solves),
                median_iterations: median(&mut iters),
                runs,
            });
        }
    }
    Ok(cells)
}
