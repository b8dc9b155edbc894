//! One iterated-Tikhonov step for a fixed multiplier.
//!
//! For a multiplier `lambda > 0` the step from `x_prev` is
//!
//! ```text
//! pi(lambda) = x_prev - lambda (I + lambda A*A)^{-1} A*(A x_prev - y)
//! G(lambda)  = ||A pi(lambda) - y||^2
//! G'(lambda) = -2 < g, (I + lambda A*A)^{-1} g >,   g = A*(A pi(lambda) - y)
//! ```
//!
//! Every evaluation costs one SPD solve with `I + lambda A*A`, done by
//! conjugate gradients so operators stay matrix-free.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linop::{check_len, LinearOperator};
use crate::vector::{axpy, dot, norm, norm_sq};

/// Inner linear-solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Relative residual target `||M x - b|| <= tol ||b||`.
    pub tol: f64,
    /// Defaults to `10 * domain_dim` when `None`.
    pub max_iter: Option<usize>,
    /// When the iteration cap is hit, the iterate is still accepted if its
    /// true relative residual is below this. Rounding in `M x` puts a floor
    /// under the attainable residual for very large multipliers.
    pub accept_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iter: None,
            accept_tol: 1e-7,
        }
    }
}

impl SolveOptions {
    pub fn max_iter_for(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(10 * n).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub final_relative_residual: f64,
}

/// Outcome of evaluating the step at one multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub lambda: f64,
    /// `pi(lambda)`
    pub candidate: Vec<f64>,
    /// `G(lambda) = ||A candidate - y||^2`
    pub residual_sq: f64,
    pub linear_solves: usize,
    pub krylov_iterations: usize,
}

impl StepResult {
    pub fn residual(&self) -> f64 {
        self.residual_sq.sqrt()
    }
}

/// `x -> (I + lambda A*A) x`, applied as `(1/lambda) I + A*A` when
/// `lambda > 1` so that the spectrum stays bounded by `1 + ||A||^2`.
struct ShiftedNormal<'a> {
    op: &'a dyn LinearOperator,
    shift: f64,
    gram_scale: f64,
    tmp: Vec<f64>,
}

impl<'a> ShiftedNormal<'a> {
    fn new(op: &'a dyn LinearOperator, lambda: f64) -> Self {
        let (shift, gram_scale) = if lambda > 1.0 {
            (1.0 / lambda, 1.0)
        } else {
            (1.0, lambda)
        };
        ShiftedNormal {
            op,
            shift,
            gram_scale,
            tmp: vec![0.0; op.range_dim()],
        }
    }

    /// Factor applied to the right-hand side so the scaled system has the
    /// same solution.
    fn rhs_scale(&self) -> f64 {
        self.shift
    }

    fn apply(&mut self, x: &[f64], out: &mut [f64]) {
        self.op.apply_into(x, &mut self.tmp);
        self.op.apply_adjoint_into(&self.tmp, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.gram_scale * *o + self.shift * xi;
        }
    }
}

/// Solves `(I + lambda A*A) x = rhs` by conjugate gradients.
///
/// Convergence is declared on the true residual; when the recurrence
/// residual drifts below the target but the true one has not, CG restarts
/// from the current iterate. The target is never set below the rounding
/// floor of `M x`, estimated from the Krylov products.
pub fn spd_solve(
    op: &dyn LinearOperator,
    lambda: f64,
    rhs: &[f64],
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = op.domain_dim();
    check_len(n, rhs.len())?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("multiplier must be positive and finite, got {lambda}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("solver tolerance must be positive"));
    }
    let max_iter = opts.max_iter_for(n);

    let mut m = ShiftedNormal::new(op, lambda);
    let s = m.rhs_scale();
    let b: Vec<f64> = rhs.iter().map(|v| s * v).collect();
    let b_norm = norm(&b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                final_relative_residual: 0.0,
            },
        ));
    }
    let target = opts.tol * b_norm;
    // Largest ||M v|| / ||v|| seen so far; a lower estimate of ||M||.
    let mut m_norm = 0.0f64;
    let floor_factor = 16.0 * (n as f64).sqrt() * f64::EPSILON;
    let attainable = |m_norm: f64, x: &[f64]| target.max(floor_factor * m_norm * norm(x));

    let mut r = b.clone();
    let mut p = r.clone();
    let mut mp = vec![0.0; n];
    let mut rr = norm_sq(&r);
    let mut iterations = 0;
    let mut restarts = 0;

    loop {
        if rr.sqrt() <= attainable(m_norm, &x) {
            // Confirm against the true residual.
            m.apply(&x, &mut mp);
            for ((ri, bi), mi) in r.iter_mut().zip(&b).zip(&mp) {
                *ri = bi - mi;
            }
            rr = norm_sq(&r);
            let goal = attainable(m_norm, &x);
            if rr.sqrt() <= goal || (restarts > 2 && rr.sqrt() <= opts.accept_tol * b_norm) {
                break;
            }
            restarts += 1;
            p.copy_from_slice(&r);
        }
        if iterations >= max_iter {
            m.apply(&x, &mut mp);
            let true_res = b.iter().zip(&mp).map(|(bi, mi)| (bi - mi).powi(2)).sum::<f64>().sqrt();
            if true_res <= opts.accept_tol * b_norm {
                rr = true_res * true_res;
                break;
            }
            return Err(Error::NotConverged {
                iterations,
                relative_residual: true_res / b_norm,
                best: x,
            });
        }
        m.apply(&p, &mut mp);
        let pmp = dot(&p, &mp);
        if !(pmp > 0.0) {
            // Exhausted numerically; accept only if the true residual is fine.
            m.apply(&x, &mut mp);
            let true_res = b.iter().zip(&mp).map(|(bi, mi)| (bi - mi).powi(2)).sum::<f64>().sqrt();
            if true_res <= attainable(m_norm, &x).max(opts.accept_tol * b_norm) {
                rr = true_res * true_res;
                break;
            }
            return Err(Error::NotConverged {
                iterations,
                relative_residual: true_res / b_norm,
                best: x,
            });
        }
        m_norm = m_norm.max(norm(&mp) / norm(&p));
        let alpha = rr / pmp;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &mp, &mut r);
        let rr_new = norm_sq(&r);
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        iterations += 1;
    }

    Ok((
        x,
        SolveStats {
            iterations,
            final_relative_residual: rr.sqrt() / b_norm,
        },
    ))
}

fn residual_of(op: &dyn LinearOperator, x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; op.range_dim()];
    op.apply_into(x, &mut r);
    for (ri, yi) in r.iter_mut().zip(y) {
        *ri -= yi;
    }
    r
}

fn check_step_inputs(op: &dyn LinearOperator, x_prev: &[f64], y_delta: &[f64]) -> Result<()> {
    check_len(op.domain_dim(), x_prev.len())?;
    check_len(op.range_dim(), y_delta.len())
}

/// Update form `x_prev - lambda (I + lambda A*A)^{-1} A*(A x_prev - y)`.
pub fn tikhonov_step(
    op: &dyn LinearOperator,
    x_prev: &[f64],
    y_delta: &[f64],
    lambda: f64,
    opts: &SolveOptions,
) -> Result<StepResult> {
    check_step_inputs(op, x_prev, y_delta)?;
    let r0 = residual_of(op, x_prev, y_delta);
    let g0 = op.apply_adjoint(&r0)?;
    let (z, stats) = spd_solve(op, lambda, &g0, opts)?;
    let mut candidate = x_prev.to_vec();
    axpy(-lambda, &z, &mut candidate);
    let residual_sq = norm_sq(&residual_of(op, &candidate, y_delta));
    Ok(StepResult {
        lambda,
        candidate,
        residual_sq,
        linear_solves: 1,
        krylov_iterations: stats.iterations,
    })
}

/// Normal-equation form `((1/lambda) I + A*A)^{-1} ((1/lambda) x_prev + A* y)`.
///
/// Algebraically identical to [`tikhonov_step`]; kept as an independent
/// route for cross-checking.
pub fn tikhonov_step_normal_form(
    op: &dyn LinearOperator,
    x_prev: &[f64],
    y_delta: &[f64],
    lambda: f64,
    opts: &SolveOptions,
) -> Result<StepResult> {
    check_step_inputs(op, x_prev, y_delta)?;
    let mut rhs = op.apply_adjoint(y_delta)?;
    // (I + lambda A*A) x = x_prev + lambda A* y
    for (ri, xi) in rhs.iter_mut().zip(x_prev) {
        *ri = xi + lambda * *ri;
    }
    let (candidate, stats) = spd_solve(op, lambda, &rhs, opts)?;
    let residual_sq = norm_sq(&residual_of(op, &candidate, y_delta));
    Ok(StepResult {
        lambda,
        candidate,
        residual_sq,
        linear_solves: 1,
        krylov_iterations: stats.iterations,
    })
}

/// `G(lambda)` together with `pi(lambda)`.
///
/// `lambda = 0` is the limit `pi(0) = x_prev`, returned without a solve.
pub fn g_value(
    op: &dyn LinearOperator,
    x_prev: &[f64],
    y_delta: &[f64],
    lambda: f64,
    opts: &SolveOptions,
) -> Result<StepResult> {
    if lambda == 0.0 {
        check_step_inputs(op, x_prev, y_delta)?;
        return Ok(StepResult {
            lambda,
            candidate: x_prev.to_vec(),
            residual_sq: norm_sq(&residual_of(op, x_prev, y_delta)),
            linear_solves: 0,
            krylov_iterations: 0,
        });
    }
    tikhonov_step(op, x_prev, y_delta, lambda, opts)
}

/// `dG/dlambda` at a candidate previously produced by [`g_value`] at the
/// same `lambda`. Costs one more SPD solve.
pub fn g_derivative(
    op: &dyn LinearOperator,
    y_delta: &[f64],
    lambda: f64,
    candidate: &[f64],
    opts: &SolveOptions,
) -> Result<(f64, SolveStats)> {
    check_step_inputs(op, candidate, y_delta)?;
    let r = residual_of(op, candidate, y_delta);
    let g = op.apply_adjoint(&r)?;
    if norm_sq(&g) == 0.0 {
        return Ok((
            0.0,
            SolveStats {
                iterations: 0,
                final_relative_residual: 0.0,
            },
        ));
    }
    let (w, stats) = spd_solve(op, lambda, &g, opts)?;
    // The quadratic form is nonnegative in exact arithmetic.
    let value = -2.0 * dot(&g, &w).max(0.0);
    Ok((value, stats))
}

/// Dense direct factorization path, used as the oracle for the CG solver.
pub mod dense {
    use super::*;
    use crate::linop::DenseOperator;

    /// Lower Cholesky factor of a row-major SPD matrix.
    pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
        check_len(n * n, a.len())?;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) {
                return Err(Error::AssumptionViolated(format!(
                    "matrix is not positive definite (pivot {j} = {d:e})"
                )));
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(l)
    }

    pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
        let mut z = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                z[i] -= l[i * n + k] * z[k];
            }
            z[i] /= l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                z[i] -= l[k * n + i] * z[k];
            }
            z[i] /= l[i * n + i];
        }
        z
    }

    pub const MAX_DIRECT_DIM: usize = 512;

    /// Same step as [`tikhonov_step`], via Cholesky of `I + lambda A^T A`
    /// (scaled by `1/lambda` when `lambda > 1`).
    pub fn tikhonov_step_direct(
        op: &DenseOperator,
        x_prev: &[f64],
        y_delta: &[f64],
        lambda: f64,
    ) -> Result<StepResult> {
        let n = op.cols();
        if n > MAX_DIRECT_DIM {
            return Err(Error::invalid(format!(
                "direct path limited to domain_dim <= {MAX_DIRECT_DIM}, got {n}"
            )));
        }
        check_step_inputs(op, x_prev, y_delta)?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("multiplier must be positive and finite"));
        }
        let (shift, gs) = if lambda > 1.0 { (1.0 / lambda, 1.0) } else { (1.0, lambda) };
        let mut m = op.gram().as_slice().to_vec();
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] *= gs;
            }
            m[i * n + i] += shift;
        }
        let l = cholesky(&m, n)?;
        let r0 = residual_of(op, x_prev, y_delta);
        let g0 = op.apply_adjoint(&r0)?;
        // M = shift * (I + lambda A^T A), so scaling g0 by `shift` keeps the solution.
        let rhs: Vec<f64> = g0.iter().map(|v| v * shift).collect();
        let z = cholesky_solve(&l, n, &rhs);
        let mut candidate = x_prev.to_vec();
        axpy(-lambda, &z, &mut candidate);
        let residual_sq = norm_sq(&residual_of(op, &candidate, y_delta));
        Ok(StepResult {
            lambda,
            candidate,
            residual_sq,
            linear_solves: 1,
            krylov_iterations: 0,
        })
    }
}
