//! Choosing the Lagrange multiplier of one outer step.
//!
//! At outer step `k` we need any `lambda > 0` whose step lands in the
//! residual window
//!
//! ```text
//! delta <= ||A pi(lambda) - y|| <= theta = p ||A x_prev - y|| + (1 - p) delta
//! ```
//!
//! `G(lambda)` is continuous and strictly decreasing, so the feasible set is
//! an interval. It is located with a Newton iteration on `G` that can be
//! made greedy (aim at `G = 0` instead of `delta^2`), over-relaxed (step
//! factor doubled while far above the window) and warm-started from earlier
//! multipliers. Overshooting below `delta` falls back to bisection in
//! `log lambda`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linop::{check_len, LinearOperator};
use crate::tikhonov::{g_derivative, g_value, SolveOptions, StepResult};
use crate::vector::{dot, norm, norm_sq};

/// Residual window for one outer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeTarget {
    pub delta: f64,
    /// Upper residual bound `p * r_prev + (1 - p) * delta`.
    pub theta: f64,
    pub p: f64,
    /// `r_prev = ||A x_prev - y||`.
    pub current_residual: f64,
}

impl RangeTarget {
    pub fn new(delta: f64, p: f64, current_residual: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("p must lie in (0, 1), got {p}")));
        }
        if !(delta >= 0.0) {
            return Err(Error::invalid(format!("noise level must be nonnegative, got {delta}")));
        }
        if !(current_residual > delta) {
            return Err(Error::AssumptionViolated(format!(
                "current residual {current_residual:e} does not exceed the noise level {delta:e}"
            )));
        }
        Ok(RangeTarget {
            delta,
            theta: p * current_residual + (1.0 - p) * delta,
            p,
            current_residual,
        })
    }

    /// Residual too large. Written as `(mu - delta) > p (r_prev - delta)`
    /// so that accepted steps satisfy the decay bound exactly in floating
    /// point.
    pub fn is_above(&self, mu: f64) -> bool {
        mu - self.delta > self.p * (self.current_residual - self.delta)
    }

    pub fn is_below(&self, mu: f64) -> bool {
        mu < self.delta
    }

    pub fn accepts(&self, mu: f64) -> bool {
        !self.is_above(mu) && !self.is_below(mu)
    }
}

/// How the first multiplier guess is extrapolated for `k >= 3`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmStart {
    /// `lambda_{k-1}^2 / lambda_{k-2}` (linear in `log lambda`).
    #[default]
    Extrapolate,
    /// `lambda_{k-1}`.
    Previous,
}

impl std::str::FromStr for WarmStart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extrapolate" => Ok(WarmStart::Extrapolate),
            "previous" => Ok(WarmStart::Previous),
            other => Err(Error::invalid(format!("unknown warm-start mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierOptions {
    /// Newton numerator `G` instead of `G - delta^2`.
    pub greedy: bool,
    /// Double the step factor while `G` of the previous iterate exceeds `2 theta^2`.
    pub over_relax: bool,
    /// Initial guess from the lower bound / previous multipliers.
    pub warm_start: bool,
    pub warm_start_mode: WarmStart,
    /// Initial guess when `warm_start` is off.
    pub cold_lambda: f64,
    pub max_inner: usize,
    pub max_bisections: usize,
    pub solve: SolveOptions,
}

impl Default for MultiplierOptions {
    fn default() -> Self {
        MultiplierOptions {
            greedy: true,
            over_relax: true,
            warm_start: true,
            warm_start_mode: WarmStart::Extrapolate,
            cold_lambda: 1.0,
            max_inner: 50,
            max_bisections: 60,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierResult {
    pub lambda: f64,
    pub candidate: Vec<f64>,
    /// `mu = ||A candidate - y||`
    pub accepted_residual: f64,
    pub initial_lambda: f64,
    /// Newton steps taken (failed inner iterations).
    pub inner_iterations: usize,
    /// Extra evaluations spent recovering from an overshoot below `delta`.
    pub bisections: usize,
    pub linear_solves: usize,
    pub krylov_iterations: usize,
    /// Relaxation factor used for each Newton step.
    pub omega_history: Vec<f64>,
}

/// Lower bound on the multiplier whose step has residual exactly `mu`:
/// `(r - mu) r / ||A*(A x_prev - y)||^2` with `r = ||A x_prev - y||`.
pub fn lambda_lower_bound(
    op: &dyn LinearOperator,
    x_prev: &[f64],
    y_delta: &[f64],
    mu: f64,
) -> Result<f64> {
    check_len(op.range_dim(), y_delta.len())?;
    let mut res = op.apply(x_prev)?;
    for (ri, yi) in res.iter_mut().zip(y_delta) {
        *ri -= yi;
    }
    let r = norm(&res);
    let grad_sq = norm_sq(&op.apply_adjoint(&res)?);
    lower_bound_from_norms(r, grad_sq, mu)
}

/// Same bound from precomputed `r` and `||A*(A x_prev - y)||^2`.
pub fn lower_bound_from_norms(residual: f64, grad_sq: f64, mu: f64) -> Result<f64> {
    if !(mu < residual) {
        return Err(Error::AssumptionViolated(format!(
            "target residual {mu:e} is not below the current residual {residual:e}"
        )));
    }
    if grad_sq == 0.0 {
        return Err(Error::AssumptionViolated(
            "A*(A x - y) vanishes; x is already a least-squares solution".into(),
        ));
    }
    Ok((residual - mu) * residual / grad_sq)
}

/// Starting multiplier `lambda_{k,0}` for outer step `k` (1-based).
///
/// `history` holds the accepted `lambda_1 .. lambda_{k-1}`.
pub fn initial_guess(
    k: usize,
    history: &[f64],
    op: &dyn LinearOperator,
    x_prev: &[f64],
    y_delta: &[f64],
    theta: f64,
    mode: WarmStart,
) -> Result<f64> {
    match k {
        0 => Err(Error::invalid("outer iteration index starts at 1")),
        1 => lambda_lower_bound(op, x_prev, y_delta, theta),
        _ => {
            let last = *history
                .get(k - 2)
                .ok_or_else(|| Error::invalid(format!("history too short for k = {k}")))?;
            if k == 2 || mode == WarmStart::Previous {
                return Ok(last);
            }
            let before = history[k - 3];
            let guess = last * last / before;
            if guess > 0.0 && guess.is_finite() {
                Ok(guess)
            } else {
                Err(Error::invalid(format!(
                    "log-linear extrapolation from {before:e}, {last:e} is not a positive finite multiplier"
                )))
            }
        }
    }
}

struct Search<'a> {
    op: &'a dyn LinearOperator,
    x_prev: &'a [f64],
    y_delta: &'a [f64],
    target: RangeTarget,
    opts: &'a MultiplierOptions,
    linear_solves: usize,
    krylov_iterations: usize,
    /// Evaluations spent in the overshoot fallback.
    fallback_probes: usize,
}

impl Search<'_> {
    fn eval(&mut self, lambda: f64) -> Result<StepResult> {
        let s = g_value(self.op, self.x_prev, self.y_delta, lambda, &self.opts.solve)?;
        self.linear_solves += s.linear_solves;
        self.krylov_iterations += s.krylov_iterations;
        Ok(s)
    }

    /// Like `eval`, but a trial multiplier whose linear solve fails to
    /// converge is reported as `None` so callers can treat it as too large.
    fn probe(&mut self, lambda: f64) -> Result<Option<StepResult>> {
        match self.eval(lambda) {
            Ok(s) => Ok(Some(s)),
            Err(Error::NotConverged { iterations, .. }) => {
                self.linear_solves += 1;
                self.krylov_iterations += iterations;
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    /// Bisection in `log lambda` between a multiplier whose residual is
    /// above the window (`lo`) and one below it (`hi`).
    fn bisect(&mut self, mut lo: f64, mut hi: f64) -> Result<StepResult> {
        for _ in 0..self.opts.max_bisections {
            let mid = (lo * hi).sqrt();
            let probe = self.probe(mid)?;
            self.fallback_probes += 1;
            let Some(s) = probe else {
                hi = mid;
                continue;
            };
            let mu = s.residual();
            if self.target.accepts(mu) {
                return Ok(s);
            }
            if self.target.is_above(mu) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Err(Error::InnerCapExceeded {
            cap: self.opts.max_bisections,
            lambda: (lo * hi).sqrt(),
            g_value: f64::NAN,
            lower: self.target.delta,
            upper: self.target.theta,
        })
    }

    /// Walks down from the lower bound at `theta` until the residual is
    /// above the window (or inside it), starting below `hi`.
    fn lower_bracket(&mut self, hi: f64) -> Result<Bracket> {
        let mut lo = lambda_lower_bound(self.op, self.x_prev, self.y_delta, self.target.theta)?
            .min(hi * 0.5);
        for _ in 0..self.opts.max_bisections {
            let s = self.eval(lo)?;
            self.fallback_probes += 1;
            let mu = s.residual();
            if self.target.accepts(mu) {
                return Ok(Bracket::Accepted(s));
            }
            if self.target.is_above(mu) {
                return Ok(Bracket::Above(lo));
            }
            lo *= 0.1;
        }
        Err(Error::InnerCapExceeded {
            cap: self.opts.max_bisections,
            lambda: lo,
            g_value: f64::NAN,
            lower: self.target.delta,
            upper: self.target.theta,
        })
    }
}

enum Bracket {
    Accepted(StepResult),
    Above(f64),
}

/// Computes `lambda_k` and `x_k` for outer step `k`.
pub fn solve_range(
    op: &dyn LinearOperator,
    x_prev: &[f64],
    y_delta: &[f64],
    target: &RangeTarget,
    k: usize,
    history: &[f64],
    opts: &MultiplierOptions,
) -> Result<MultiplierResult> {
    let initial_lambda = if opts.warm_start {
        initial_guess(k, history, op, x_prev, y_delta, target.theta, opts.warm_start_mode)?
    } else {
        opts.cold_lambda
    };
    let mut search = Search {
        op,
        x_prev,
        y_delta,
        target: *target,
        opts,
        linear_solves: 0,
        krylov_iterations: 0,
        fallback_probes: 0,
    };
    let theta_sq = target.theta * target.theta;
    let delta_sq = target.delta * target.delta;

    let finish = |step: StepResult, j: usize, omega_history: Vec<f64>, search: &Search| {
        let mu = step.residual();
        MultiplierResult {
            lambda: step.lambda,
            candidate: step.candidate,
            accepted_residual: mu,
            initial_lambda,
            inner_iterations: j,
            bisections: search.fallback_probes,
            linear_solves: search.linear_solves,
            krylov_iterations: search.krylov_iterations,
            omega_history,
        }
    };

    let mut lambda = initial_lambda;
    let mut step = match search.probe(lambda)? {
        Some(s) => s,
        None => {
            let s = match search.lower_bracket(lambda)? {
                Bracket::Accepted(s) => s,
                Bracket::Above(lo) => search.bisect(lo, lambda)?,
            };
            return Ok(finish(s, 0, Vec::new(), &search));
        }
    };
    let mut omega = 1.0;
    let mut omega_history = Vec::new();
    let mut last_above: Option<f64> = None;
    let mut j = 0;

    loop {
        let mu = step.residual();
        if target.accepts(mu) {
            return Ok(finish(step, j, omega_history, &search));
        }
        if target.is_below(mu) {
            let lo = match last_above {
                Some(lo) => lo,
                None => match search.lower_bracket(lambda)? {
                    Bracket::Accepted(s) => return Ok(finish(s, j, omega_history, &search)),
                    Bracket::Above(lo) => lo,
                },
            };
            let s = search.bisect(lo, lambda)?;
            return Ok(finish(s, j, omega_history, &search));
        }

        // Residual above the window: take a Newton step.
        if j >= opts.max_inner {
            return Err(Error::InnerCapExceeded {
                cap: opts.max_inner,
                lambda,
                g_value: step.residual_sq,
                lower: delta_sq,
                upper: theta_sq,
            });
        }
        let (deriv, iterations) = match g_derivative(op, y_delta, lambda, &step.candidate, &opts.solve) {
            Ok((d, stats)) => (d, stats.iterations),
            // CG from zero underestimates the quadratic form monotonically, so
            // the unconverged iterate still gives a usable (longer) Newton step.
            Err(Error::NotConverged { iterations, best, .. }) => {
                let r = op.apply(&step.candidate)?;
                let r: Vec<f64> = r.iter().zip(y_delta).map(|(a, b)| a - b).collect();
                let g = op.apply_adjoint(&r)?;
                (-2.0 * dot(&g, &best).max(0.0), iterations)
            }
            Err(e) => return Err(e),
        };
        search.linear_solves += 1;
        search.krylov_iterations += iterations;
        let g = step.residual_sq;
        if !(deriv.abs() >= 1e-300 * g.max(1.0)) {
            return Err(Error::Stagnation {
                lambda,
                derivative: deriv,
            });
        }
        let numerator = if opts.greedy { g } else { g - delta_sq };
        let factor = if opts.over_relax { omega } else { 1.0 };
        omega_history.push(factor);
        let next = lambda - factor * numerator / deriv;
        if !(next.is_finite() && next > lambda) {
            return Err(Error::Stagnation {
                lambda,
                derivative: deriv,
            });
        }
        last_above = Some(lambda);
        j += 1;
        lambda = next;
        if opts.over_relax {
            omega = if g > 2.0 * theta_sq { 2.0 * omega } else { 1.0 };
        }
        step = match search.probe(lambda)? {
            Some(s) => s,
            None => {
                let s = search.bisect(last_above.unwrap_or(lambda), lambda)?;
                return Ok(finish(s, j, omega_history, &search));
            }
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{hilbert_operator, DenseOperator};
    use approx::assert_relative_eq;

    fn scalar(a: f64) -> DenseOperator {
        DenseOperator::new(1, 1, vec![a]).unwrap()
    }

    #[test]
    fn bound_identity_operator() {
        let id = DenseOperator::identity(3).unwrap();
        let x = [1.0, 2.0, -1.0];
        let y = [0.0, 0.0, 1.0];
        let r = norm(&[1.0, 2.0, -2.0]);
        let b = lambda_lower_bound(&id, &x, &y, 1.0).unwrap();
        assert_relative_eq!(b, (r - 1.0) / r, max_relative = 1e-14);
    }

    #[test]
    fn bound_scalar() {
        let b = lambda_lower_bound(&scalar(2.0), &[0.0], &[1.0], 0.5).unwrap();
        assert_relative_eq!(b, 0.125, max_relative = 1e-15);
    }

    #[test]
    fn bound_errors() {
        assert!(matches!(
            lambda_lower_bound(&scalar(2.0), &[0.0], &[1.0], 1.0),
            Err(Error::AssumptionViolated(_))
        ));
        // A*(Ax - y) = 0 with nonzero residual: y outside the range of A.
        let a = DenseOperator::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        assert!(matches!(
            lambda_lower_bound(&a, &[1.0], &[1.0, 1.0], 0.5),
            Err(Error::AssumptionViolated(_))
        ));
    }

    #[test]
    fn exact_data_bound_specialization() {
        // delta = 0, mu <= p r  =>  bound >= (1 - p) / ||A||^2
        let h = hilbert_operator(6).unwrap();
        let x_true = vec![1.0; 6];
        let y = h.apply(&x_true).unwrap();
        let norm_a = crate::linop::operator_norm_estimate(&h, 300, 1).unwrap();
        let x0 = vec![0.0; 6];
        let r = norm(&y);
        for p in [0.1, 0.5, 0.9] {
            let b = lambda_lower_bound(&h, &x0, &y, p * r).unwrap();
            assert!(b >= (1.0 - p) / (norm_a * norm_a) * (1.0 - 1e-12));
        }
    }

    #[test]
    fn initial_guess_rules() {
        let op = scalar(1.0);
        let g = |k, h: &[f64], m| initial_guess(k, h, &op, &[0.0], &[1.0], 0.5, m);
        assert_eq!(g(2, &[0.7], WarmStart::Extrapolate).unwrap(), 0.7);
        assert_relative_eq!(g(3, &[1.0, 10.0], WarmStart::Extrapolate).unwrap(), 100.0);
        assert_eq!(g(3, &[1.0, 10.0], WarmStart::Previous).unwrap(), 10.0);
        assert_eq!(g(5, &[9.0, 4.0, 2.5, 2.5], WarmStart::Extrapolate).unwrap(), 2.5);
        assert!(g(2, &[], WarmStart::Extrapolate).is_err());
        assert!(g(0, &[], WarmStart::Extrapolate).is_err());
        // k = 1 uses the lower bound at theta: (1 - 0.5) * 1 / 1
        assert_relative_eq!(g(1, &[], WarmStart::Extrapolate).unwrap(), 0.5);
    }

    #[test]
    fn target_window() {
        let t = RangeTarget::new(0.1, 0.5, 1.0).unwrap();
        assert_relative_eq!(t.theta, 0.55);
        assert!(t.accepts(0.1));
        assert!(t.accepts(0.3));
        assert!(t.accepts(0.5499));
        assert!(t.is_above(0.56));
        assert!(t.is_below(0.099));
        assert!(RangeTarget::new(0.1, 1.0, 1.0).is_err());
        assert!(RangeTarget::new(1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn scalar_window_inversion() {
        // G(l) = (1 + l)^-2 so residual = 1/(1 + l); window [0.1, 0.55]
        let op = scalar(1.0);
        let t = RangeTarget::new(0.1, 0.5, 1.0).unwrap();
        for greedy in [false, true] {
            for over_relax in [false, true] {
                for warm_start in [false, true] {
                    let opts = MultiplierOptions {
                        greedy,
                        over_relax,
                        warm_start,
                        ..Default::default()
                    };
                    let r = solve_range(&op, &[0.0], &[1.0], &t, 1, &[], &opts).unwrap();
                    assert!(r.lambda >= 1.0 / 0.55 - 1.0 - 1e-12 && r.lambda <= 9.0 + 1e-12);
                    assert!(t.accepts(r.accepted_residual));
                    assert_eq!(r.linear_solves, 1 + 2 * r.inner_iterations + r.bisections);
                }
            }
        }
    }

    #[test]
    fn immediate_acceptance_costs_one_solve() {
        let op = scalar(1.0);
        let t = RangeTarget::new(0.1, 0.5, 1.0).unwrap();
        let opts = MultiplierOptions {
            warm_start: false,
            cold_lambda: 3.0,
            ..Default::default()
        };
        let r = solve_range(&op, &[0.0], &[1.0], &t, 1, &[], &opts).unwrap();
        assert_eq!(r.inner_iterations, 0);
        assert_eq!(r.linear_solves, 1);
        assert_eq!(r.lambda, 3.0);
        assert!(r.omega_history.is_empty());
    }

    #[test]
    fn overshoot_from_initial_guess_recovers() {
        // lambda = 1e6 lands far below delta; bisection must climb back.
        let op = scalar(1.0);
        let t = RangeTarget::new(0.1, 0.5, 1.0).unwrap();
        let opts = MultiplierOptions {
            warm_start: false,
            cold_lambda: 1e6,
            ..Default::default()
        };
        let r = solve_range(&op, &[0.0], &[1.0], &t, 1, &[], &opts).unwrap();
        assert!(t.accepts(r.accepted_residual));
        assert!(r.accepted_residual >= t.delta);
        assert!(r.bisections >= 1);
    }

    #[test]
    fn overshoot_after_newton_step_recovers() {
        // A narrow window right above delta forces the doubled step past it.
        let op = scalar(1.0);
        let t = RangeTarget::new(0.01, 0.001, 1.0).unwrap();
        let opts = MultiplierOptions {
            warm_start: false,
            cold_lambda: 1e-3,
            ..Default::default()
        };
        let r = solve_range(&op, &[0.0], &[1.0], &t, 1, &[], &opts).unwrap();
        assert!(t.accepts(r.accepted_residual));
    }

    #[test]
    fn over_relaxation_doubles_while_far() {
        let op = scalar(1.0);
        let t = RangeTarget::new(1e-6, 0.01, 1.0).unwrap();
        let opts = MultiplierOptions {
            warm_start: false,
            cold_lambda: 1e-4,
            ..Default::default()
        };
        let r = solve_range(&op, &[0.0], &[1.0], &t, 1, &[], &opts).unwrap();
        assert_eq!(r.omega_history[0], 1.0);
        assert!(r.omega_history.windows(2).any(|w| w[1] == 2.0 * w[0]));
        assert!(t.accepts(r.accepted_residual));
    }

    #[test]
    fn inner_cap_is_reported() {
        let op = scalar(1.0);
        let t = RangeTarget::new(1e-9, 0.01, 1.0).unwrap();
        let opts = MultiplierOptions {
            greedy: false,
            over_relax: false,
            warm_start: false,
            cold_lambda: 1e-8,
            max_inner: 2,
            ..Default::default()
        };
        assert!(matches!(
            solve_range(&op, &[0.0], &[1.0], &t, 1, &[], &opts),
            Err(Error::InnerCapExceeded { cap: 2, .. })
        ));
    }

    #[test]
    fn accepted_lambda_respects_lower_bound() {
        let h = hilbert_operator(8).unwrap();
        let y = h.apply(&[1.0; 8]).unwrap();
        let x0 = vec![0.0; 8];
        let r0 = norm(&y);
        let t = RangeTarget::new(1e-4 * r0, 0.2, r0).unwrap();
        let res = solve_range(&h, &x0, &y, &t, 1, &[], &MultiplierOptions::default()).unwrap();
        let bound = lambda_lower_bound(&h, &x0, &y, res.accepted_residual).unwrap();
        assert!(res.lambda >= bound);
    }
}
