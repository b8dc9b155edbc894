//! Outer iteration drivers and trace verification.
//!
//! All three methods share the step `x_k = pi_k(lambda_k)` and stop at the
//! first `k` with `||A x_k - y_delta|| <= tau * delta`; they differ only in
//! how `lambda_k` is chosen:
//!
//! * `rrnit`: any multiplier putting the residual in `[delta, theta_k]`,
//!   found by [`crate::multiplier::solve_range`];
//! * `gnit`: `lambda_k = q^k`;
//! * `sit`: `lambda_k = lambda_bar`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linop::{operator_norm_estimate, LinearOperator};
use crate::multiplier::{lower_bound_from_norms, solve_range, MultiplierOptions, RangeTarget};
use crate::problems::Problem;
use crate::tikhonov::tikhonov_step;
use crate::vector::{dist_sq, norm, norm_sq};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Rrnit,
    Gnit,
    Sit,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rrnit => "rrnit",
            Method::Gnit => "gnit",
            Method::Sit => "sit",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rrnit" => Ok(Method::Rrnit),
            "gnit" => Ok(Method::Gnit),
            "sit" => Ok(Method::Sit),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    /// Residual contraction factor for `rrnit`, in `(0, 1)`.
    pub p: f64,
    /// Geometric ratio for `gnit`, `> 1`.
    pub q: f64,
    /// Constant multiplier for `sit`.
    pub lambda_bar: f64,
    /// Discrepancy factor, `> 1`.
    pub tau: f64,
    pub max_outer: usize,
    pub multiplier: MultiplierOptions,
    /// `gnit`/`sit` runs are flagged unstable once the residual stays above
    /// `instability_factor` times its running minimum for
    /// `instability_window` consecutive steps.
    pub instability_factor: f64,
    pub instability_window: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::Rrnit,
            p: 0.2,
            q: 2.0,
            lambda_bar: 2.0,
            tau: 2.0,
            max_outer: 1000,
            multiplier: MultiplierOptions::default(),
            instability_factor: 10.0,
            instability_window: 3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::invalid(format!("p must lie in (0, 1), got {}", self.p)));
        }
        if !(self.tau > 1.0) {
            return Err(Error::invalid(format!("tau must exceed 1, got {}", self.tau)));
        }
        if !(self.q > 1.0) {
            return Err(Error::invalid(format!("q must exceed 1, got {}", self.q)));
        }
        if !(self.lambda_bar > 0.0 && self.lambda_bar.is_finite()) {
            return Err(Error::invalid(format!("lambda_bar must be positive, got {}", self.lambda_bar)));
        }
        if self.max_outer == 0 {
            return Err(Error::invalid("max_outer must be at least 1"));
        }
        Ok(())
    }
}

/// One accepted outer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub lambda: f64,
    /// `||A x_k - y_delta||`
    pub residual: f64,
    /// `||x_star - x_k||`
    pub error: Option<f64>,
    pub inner_iterations: usize,
    pub linear_solves: usize,
    pub cumulative_linear_solves: usize,
    pub krylov_iterations: usize,
    /// `||x_k - x_{k-1}||^2`
    pub step_norm_sq: f64,
    /// `||A*(A x_{k-1} - y_delta)||^2`
    pub prev_grad_sq: f64,
    /// `||x_star - x_{k-1}||^2 - ||x_star - x_k||^2`, evaluated as
    /// `<x_k - x_{k-1}, 2 x_star - x_{k-1} - x_k>` to avoid cancellation.
    pub gain: Option<f64>,
    /// `||A (x_star - x_k)||^2`
    pub model_error_sq: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Discrepancy,
    MaxOuter,
    InnerFailure,
    Unstable,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Discrepancy => "discrepancy",
            StopReason::MaxOuter => "max-outer",
            StopReason::InnerFailure => "inner-failure",
            StopReason::Unstable => "unstable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub method: Method,
    pub delta: f64,
    pub tau: f64,
    pub initial_residual: f64,
    pub initial_error: Option<f64>,
    pub records: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    /// Discrepancy stopping index; `None` unless `stop_reason` is `Discrepancy`.
    pub k_star: Option<usize>,
    /// Diagnostic from the step that ended the run, if it failed.
    pub failure: Option<String>,
    #[serde(skip)]
    pub final_iterate: Vec<f64>,
}

impl RunTrace {
    pub fn total_linear_solves(&self) -> usize {
        self.records.last().map_or(0, |r| r.cumulative_linear_solves)
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_residual(&self) -> f64 {
        self.records.last().map_or(self.initial_residual, |r| r.residual)
    }

    pub fn final_error(&self) -> Option<f64> {
        self.records.last().map_or(self.initial_error, |r| r.error)
    }

    /// `sum_k ||x_k - x_{k-1}||^2`, finite for exact-data runs.
    pub fn step_tail_sum(&self) -> f64 {
        self.records.iter().map(|r| r.step_norm_sq).sum()
    }
}

struct Recorder<'a> {
    problem: &'a Problem,
    records: Vec<IterationRecord>,
    cumulative: usize,
}

impl<'a> Recorder<'a> {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        k: usize,
        lambda: f64,
        residual: f64,
        x_prev: &[f64],
        x_new: &[f64],
        prev_grad_sq: f64,
        inner_iterations: usize,
        linear_solves: usize,
        krylov_iterations: usize,
    ) {
        self.cumulative += linear_solves;
        let op = &self.problem.operator;
        let (error, gain, model_error_sq) = match &self.problem.x_star {
            Some(xs) => {
                let gain: f64 = x_new
                    .iter()
                    .zip(x_prev)
                    .zip(xs)
                    .map(|((xn, xp), s)| (xn - xp) * (2.0 * s - xp - xn))
                    .sum();
                let diff: Vec<f64> = xs.iter().zip(x_new).map(|(s, xn)| s - xn).collect();
                let a_diff = op.apply(&diff).expect("x_star has domain dimension");
                (Some(norm(&diff)), Some(gain), Some(norm_sq(&a_diff)))
            }
            None => (None, None, None),
        };
        self.records.push(IterationRecord {
            k,
            lambda,
            residual,
            error,
            inner_iterations,
            linear_solves,
            cumulative_linear_solves: self.cumulative,
            krylov_iterations,
            step_norm_sq: dist_sq(x_new, x_prev),
            prev_grad_sq,
            gain,
            model_error_sq,
        });
    }
}

fn residual_vec(op: &dyn LinearOperator, x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut r = op.apply(x).expect("iterate has domain dimension");
    for (ri, yi) in r.iter_mut().zip(y) {
        *ri -= yi;
    }
    r
}

fn grad_sq(op: &dyn LinearOperator, res: &[f64]) -> f64 {
    norm_sq(&op.apply_adjoint(res).expect("residual has range dimension"))
}

fn check_problem(problem: &Problem) -> Result<()> {
    let op = &problem.operator;
    crate::linop::check_len(op.domain_dim(), problem.x0.len())?;
    crate::linop::check_len(op.range_dim(), problem.y_delta.len())?;
    if !(problem.delta >= 0.0) {
        return Err(Error::invalid("noise level must be nonnegative"));
    }
    Ok(())
}

fn start(problem: &Problem, method: Method, tau: f64) -> (RunTrace, Vec<f64>, f64) {
    let res = residual_vec(problem.operator.as_ref(), &problem.x0, &problem.y_delta);
    let r0 = norm(&res);
    let trace = RunTrace {
        method,
        delta: problem.delta,
        tau,
        initial_residual: r0,
        initial_error: problem.x_star.as_ref().map(|xs| dist_sq(xs, &problem.x0).sqrt()),
        records: Vec::new(),
        stop_reason: StopReason::MaxOuter,
        k_star: None,
        failure: None,
        final_iterate: Vec::new(),
    };
    (trace, problem.x0.clone(), r0)
}

/// Runs whichever method `config.method` selects.
pub fn run(problem: &Problem, config: &SolverConfig) -> Result<RunTrace> {
    match config.method {
        Method::Rrnit => run_rrnit(problem, config),
        Method::Gnit => run_gnit(problem, config),
        Method::Sit => run_sit(problem, config),
    }
}

/// Range-relaxed nonstationary iterated Tikhonov.
pub fn run_rrnit(problem: &Problem, config: &SolverConfig) -> Result<RunTrace> {
    config.validate()?;
    check_problem(problem)?;
    let op = problem.operator.as_ref();
    let y = &problem.y_delta;
    let delta = problem.delta;
    let bound = config.tau * delta;

    let (mut trace, mut x, mut r) = start(problem, Method::Rrnit, config.tau);
    let mut rec = Recorder {
        problem,
        records: Vec::new(),
        cumulative: 0,
    };
    let mut history: Vec<f64> = Vec::new();

    if r <= bound {
        trace.stop_reason = StopReason::Discrepancy;
        trace.k_star = Some(0);
    } else {
        for k in 1..=config.max_outer {
            let target = RangeTarget::new(delta, config.p, r)?;
            let prev_grad_sq = grad_sq(op, &residual_vec(op, &x, y));
            let step = match solve_range(op, &x, y, &target, k, &history, &config.multiplier) {
                Ok(s) => s,
                Err(e) => {
                    trace.stop_reason = StopReason::InnerFailure;
                    trace.failure = Some(format!("k = {k}: {e}"));
                    break;
                }
            };
            rec.push(
                k,
                step.lambda,
                step.accepted_residual,
                &x,
                &step.candidate,
                prev_grad_sq,
                step.inner_iterations,
                step.linear_solves,
                step.krylov_iterations,
            );
            history.push(step.lambda);
            x = step.candidate;
            r = step.accepted_residual;
            if r <= bound {
                trace.stop_reason = StopReason::Discrepancy;
                trace.k_star = Some(k);
                break;
            }
        }
    }
    trace.records = rec.records;
    trace.final_iterate = x;
    Ok(trace)
}

fn run_scheduled(
    problem: &Problem,
    config: &SolverConfig,
    method: Method,
    schedule: impl Fn(usize) -> f64,
) -> Result<RunTrace> {
    config.validate()?;
    check_problem(problem)?;
    let op = problem.operator.as_ref();
    let y = &problem.y_delta;
    let bound = config.tau * problem.delta;

    let (mut trace, mut x, r0) = start(problem, method, config.tau);
    let mut rec = Recorder {
        problem,
        records: Vec::new(),
        cumulative: 0,
    };
    let mut running_min = r0;
    let mut above = 0;

    if r0 <= bound {
        trace.stop_reason = StopReason::Discrepancy;
        trace.k_star = Some(0);
    } else {
        for k in 1..=config.max_outer {
            let lambda = schedule(k);
            if !(lambda.is_finite() && lambda > 0.0) {
                trace.stop_reason = StopReason::Unstable;
                trace.failure = Some(format!("k = {k}: multiplier {lambda} is not representable"));
                break;
            }
            let prev_grad_sq = grad_sq(op, &residual_vec(op, &x, y));
            let step = match tikhonov_step(op, &x, y, lambda, &config.multiplier.solve) {
                Ok(s) => s,
                Err(e) => {
                    trace.stop_reason = StopReason::InnerFailure;
                    trace.failure = Some(format!("k = {k}: {e}"));
                    break;
                }
            };
            let r = step.residual();
            rec.push(k, lambda, r, &x, &step.candidate, prev_grad_sq, 0, 1, step.krylov_iterations);
            x = step.candidate;
            if r <= bound {
                trace.stop_reason = StopReason::Discrepancy;
                trace.k_star = Some(k);
                break;
            }
            running_min = running_min.min(r);
            if r > config.instability_factor * running_min {
                above += 1;
                if above >= config.instability_window {
                    trace.stop_reason = StopReason::Unstable;
                    trace.failure = Some(format!(
                        "k = {k}: residual {r:e} above {}x its minimum {running_min:e} for {above} steps",
                        config.instability_factor
                    ));
                    break;
                }
            } else {
                above = 0;
            }
        }
    }
    trace.records = rec.records;
    trace.final_iterate = x;
    Ok(trace)
}

/// Geometric nonstationary iterated Tikhonov, `lambda_k = q^k`.
pub fn run_gnit(problem: &Problem, config: &SolverConfig) -> Result<RunTrace> {
    let q = config.q;
    run_scheduled(problem, config, Method::Gnit, |k| q.powi(k as i32))
}

/// Stationary iterated Tikhonov, `lambda_k = lambda_bar`.
pub fn run_sit(problem: &Problem, config: &SolverConfig) -> Result<RunTrace> {
    let l = config.lambda_bar;
    run_scheduled(problem, config, Method::Sit, |_| l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail(String),
    NotApplicable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        !self.checks.iter().any(|c| matches!(c.status, CheckStatus::Fail(_)))
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| matches!(c.status, CheckStatus::Fail(_)))
    }

    pub fn get(&self, name: &str) -> Option<&CheckStatus> {
        self.checks.iter().find(|c| c.name == name).map(|c| &c.status)
    }

    fn push(&mut self, name: &str, status: CheckStatus) {
        self.checks.push(CheckOutcome {
            name: name.to_string(),
            status,
        });
    }
}

pub const CHECK_DISCREPANCY: &str = "discrepancy-semantics";
pub const CHECK_COST: &str = "cumulative-solves-increasing";
pub const CHECK_DECAY: &str = "a:residual-decay";
pub const CHECK_GAIN: &str = "b:gain-identity";
pub const CHECK_ERROR_MONOTONE: &str = "b:error-nonincreasing";
pub const CHECK_LOWER_BOUND: &str = "c:lambda-lower-bound";
pub const CHECK_STOP_BOUND: &str = "d:stopping-index-bound";
pub const CHECK_EXACT_BOUND: &str = "e:exact-data-lambda-bound";

/// Relative tolerance of the per-step gain identity.
pub const GAIN_RTOL: f64 = 1e-6;

fn first_failure<I>(iter: I) -> CheckStatus
where
    I: IntoIterator<Item = Option<String>>,
{
    match iter.into_iter().flatten().next() {
        Some(msg) => CheckStatus::Fail(msg),
        None => CheckStatus::Pass,
    }
}

/// Upper bound on the discrepancy stopping index of an `rrnit` run.
pub fn stopping_index_bound(initial_residual: f64, delta: f64, tau: f64, p: f64) -> f64 {
    ((initial_residual - delta) / ((tau - 1.0) * delta)).ln() / p.ln().abs() + 1.0
}

/// Checks a trace against the properties every `rrnit` run must satisfy.
///
/// Discrepancy semantics and cost accounting are checked for all methods;
/// the remaining checks apply to `rrnit` only.
pub fn verify_trace(trace: &RunTrace, problem: &Problem, config: &SolverConfig) -> VerifyReport {
    let mut report = VerifyReport::default();
    let bound = trace.tau * trace.delta;
    let recs = &trace.records;
    let residual_before = |i: usize| if i == 0 { trace.initial_residual } else { recs[i - 1].residual };

    // Discrepancy: every residual before k* is above tau*delta, the one at k* is not.
    let status = match (trace.stop_reason, trace.k_star) {
        (StopReason::Discrepancy, Some(ks)) if ks == recs.len() => {
            let earlier = (0..ks).map(residual_before).position(|r| !(r > bound));
            let last = if ks == 0 { trace.initial_residual } else { recs[ks - 1].residual };
            match earlier {
                Some(i) => CheckStatus::Fail(format!("residual at k = {i} already below tau*delta")),
                None if last <= bound => CheckStatus::Pass,
                None => CheckStatus::Fail(format!("residual {last:e} at k* exceeds tau*delta = {bound:e}")),
            }
        }
        (StopReason::Discrepancy, ks) => CheckStatus::Fail(format!(
            "k* = {ks:?} inconsistent with {} records",
            recs.len()
        )),
        (_, Some(ks)) => CheckStatus::Fail(format!("k* = {ks} recorded without a discrepancy stop")),
        (_, None) => first_failure((0..=recs.len()).map(|i| {
            let r = residual_before(i);
            (!(r > bound)).then(|| format!("residual {r:e} at k = {i} is below tau*delta but the run continued"))
        })),
    };
    report.push(CHECK_DISCREPANCY, status);

    report.push(
        CHECK_COST,
        first_failure(recs.iter().enumerate().map(|(i, rec)| {
            let prev = if i == 0 { 0 } else { recs[i - 1].cumulative_linear_solves };
            (rec.cumulative_linear_solves <= prev)
                .then(|| format!("cumulative solves not increasing at k = {}", rec.k))
        })),
    );

    if trace.method != Method::Rrnit {
        let na = || CheckStatus::NotApplicable(format!("not applicable to {}", trace.method));
        for name in [CHECK_DECAY, CHECK_GAIN, CHECK_ERROR_MONOTONE, CHECK_LOWER_BOUND, CHECK_STOP_BOUND, CHECK_EXACT_BOUND] {
            report.push(name, na());
        }
        return report;
    }

    let delta = trace.delta;
    let p = config.p;

    // (a) (r_k - delta) <= p (r_{k-1} - delta), no tolerance.
    report.push(
        CHECK_DECAY,
        first_failure(recs.iter().enumerate().map(|(i, rec)| {
            let prev = residual_before(i);
            (!(rec.residual - delta <= p * (prev - delta))).then(|| {
                format!(
                    "k = {}: r_k - delta = {:e} > p (r_(k-1) - delta) = {:e}",
                    rec.k,
                    rec.residual - delta,
                    p * (prev - delta)
                )
            })
        })),
    );

    // (b) gain identity and error monotonicity.
    match &problem.x_star {
        Some(xs) => {
            let op = problem.operator.as_ref();
            let r_star = norm_sq(&residual_vec(op, xs, &problem.y_delta));
            let mut fail = None;
            for rec in recs {
                let (Some(gain), Some(me)) = (rec.gain, rec.model_error_sq) else {
                    fail = Some(format!("k = {}: ground-truth diagnostics missing", rec.k));
                    break;
                };
                let rhs = rec.step_norm_sq + rec.lambda * me + rec.lambda * (rec.residual * rec.residual - r_star);
                let scale = gain.abs().max(rhs.abs());
                if !((gain - rhs).abs() <= GAIN_RTOL * scale) {
                    fail = Some(format!(
                        "k = {}: gain {gain:e} vs identity {rhs:e} (rel. diff {:e})",
                        rec.k,
                        (gain - rhs).abs() / scale
                    ));
                    break;
                }
            }
            report.push(CHECK_GAIN, fail.map_or(CheckStatus::Pass, CheckStatus::Fail));

            let errors: Vec<Option<f64>> = std::iter::once(trace.initial_error)
                .chain(recs.iter().map(|r| r.error))
                .collect();
            report.push(
                CHECK_ERROR_MONOTONE,
                first_failure(errors.windows(2).enumerate().map(|(i, w)| match (w[0], w[1]) {
                    (Some(a), Some(b)) if b <= a => None,
                    (Some(a), Some(b)) => Some(format!("error grows at k = {}: {a:e} -> {b:e}", i + 1)),
                    _ => Some(format!("error missing at k = {}", i + 1)),
                })),
            );
        }
        None => {
            report.push(CHECK_GAIN, CheckStatus::NotApplicable("no ground truth".into()));
            report.push(CHECK_ERROR_MONOTONE, CheckStatus::NotApplicable("no ground truth".into()));
        }
    }

    // (c) lambda_k >= (r_{k-1} - mu_k) r_{k-1} / ||A*(A x_{k-1} - y)||^2
    report.push(
        CHECK_LOWER_BOUND,
        first_failure(recs.iter().enumerate().map(|(i, rec)| {
            match lower_bound_from_norms(residual_before(i), rec.prev_grad_sq, rec.residual) {
                Ok(lb) if rec.lambda >= lb => None,
                Ok(lb) => Some(format!("k = {}: lambda {:e} below bound {lb:e}", rec.k, rec.lambda)),
                Err(e) => Some(format!("k = {}: {e}", rec.k)),
            }
        })),
    );

    // (d) k* <= |ln p|^-1 ln[(r_0 - delta) / ((tau - 1) delta)] + 1
    let status = match trace.k_star {
        Some(ks) if delta > 0.0 && trace.stop_reason == StopReason::Discrepancy => {
            if ks == 0 {
                CheckStatus::Pass
            } else {
                let b = stopping_index_bound(trace.initial_residual, delta, trace.tau, p);
                if (ks as f64) <= b {
                    CheckStatus::Pass
                } else {
                    CheckStatus::Fail(format!("k* = {ks} exceeds bound {b:.4}"))
                }
            }
        }
        _ => CheckStatus::NotApplicable("no discrepancy stop with delta > 0".into()),
    };
    report.push(CHECK_STOP_BOUND, status);

    // (e) exact data: lambda_k >= (1 - p) / ||A||^2
    let status = if delta == 0.0 {
        match operator_norm_estimate(problem.operator.as_ref(), 500, 0) {
            Ok(na) if na > 0.0 => {
                // The power estimate is a slight underestimate; allow for it.
                let lb = (1.0 - p) / (na * na) * (1.0 - 1e-9);
                first_failure(recs.iter().map(|rec| {
                    (!(rec.lambda >= lb)).then(|| format!("k = {}: lambda {:e} below (1-p)/||A||^2 = {lb:e}", rec.k, rec.lambda))
                }))
            }
            Ok(_) => CheckStatus::NotApplicable("zero operator".into()),
            Err(e) => CheckStatus::Fail(e.to_string()),
        }
    } else {
        CheckStatus::NotApplicable("noisy data".into())
    };
    report.push(CHECK_EXACT_BOUND, status);

    report
}
