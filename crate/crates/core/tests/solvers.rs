use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrnit_core::linop::{hilbert_operator, DenseOperator, LinearOperator};
use rrnit_core::multiplier::{lambda_lower_bound, solve_range, MultiplierOptions, RangeTarget, WarmStart};
use rrnit_core::tikhonov::{dense, g_derivative, g_value, spd_solve, tikhonov_step, SolveOptions};
use rrnit_core::vector::{dist_sq, norm};

fn random_dense(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DenseOperator {
    DenseOperator::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0)).unwrap()
}

fn nalgebra_step(a: &DenseOperator, x: &[f64], y: &[f64], lambda: f64) -> Vec<f64> {
    let m = DMatrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j));
    let n = a.cols();
    let lhs = DMatrix::identity(n, n) + lambda * m.transpose() * &m;
    let rhs = DVector::from_column_slice(x) + lambda * m.transpose() * DVector::from_column_slice(y);
    lhs.lu().solve(&rhs).unwrap().iter().copied().collect()
}

#[test]
fn cg_step_matches_lu_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let (m, n) = (rng.random_range(3..30), rng.random_range(3..30));
        let a = random_dense(&mut rng, m, n);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lambda = 10f64.powf(rng.random_range(-2.0..2.0));
        let cg = tikhonov_step(&a, &x, &y, lambda, &SolveOptions::default()).unwrap();
        let oracle = nalgebra_step(&a, &x, &y, lambda);
        assert!(dist_sq(&cg.candidate, &oracle).sqrt() <= 1e-8 * norm(&oracle));
        let direct = dense::tikhonov_step_direct(&a, &x, &y, lambda).unwrap();
        assert!(dist_sq(&direct.candidate, &oracle).sqrt() <= 1e-10 * norm(&oracle));
    }
}

#[test]
fn solver_reports_true_residual() {
    let h = hilbert_operator(12).unwrap();
    let rhs: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
    let (x, stats) = spd_solve(&h, 3.0, &rhs, &SolveOptions::default()).unwrap();
    // (I + 3 H^T H) x = rhs
    let hx = h.apply(&x).unwrap();
    let hthx = h.apply_adjoint(&hx).unwrap();
    let res: Vec<f64> = x.iter().zip(&hthx).zip(&rhs).map(|((xi, gi), bi)| xi + 3.0 * gi - bi).collect();
    assert!(norm(&res) <= 1e-10 * norm(&rhs));
    assert!(stats.final_relative_residual <= 1e-10);
}

#[test]
fn huge_multiplier_on_hilbert_still_solves() {
    // Near the rounding floor of (1/lambda) I + H*H the strict tolerance is
    // unattainable; the solve must still return an accurate step.
    let h = hilbert_operator(25).unwrap();
    let x_prev = vec![0.5; 25];
    let y = h.apply(&[1.0; 25]).unwrap();
    let step = tikhonov_step(&h, &x_prev, &y, 1e12, &SolveOptions::default()).unwrap();
    let direct = dense::tikhonov_step_direct(&h, &x_prev, &y, 1e12).unwrap();
    let r_cg = step.residual();
    let r_direct = direct.residual();
    assert!((r_cg - r_direct).abs() <= 1e-6 * norm(&y), "{r_cg} vs {r_direct}");
}

#[test]
fn derivative_matches_finite_differences_on_hilbert() {
    let h = hilbert_operator(10).unwrap();
    let x = vec![0.0; 10];
    let y = h.apply(&(0..10).map(|i| i as f64 / 10.0).collect::<Vec<_>>()).unwrap();
    let opts = SolveOptions::default();
    for lambda in [0.1, 1.0, 10.0] {
        let s = g_value(&h, &x, &y, lambda, &opts).unwrap();
        let (d, _) = g_derivative(&h, &y, lambda, &s.candidate, &opts).unwrap();
        let step = 1e-4 * lambda;
        let gp = g_value(&h, &x, &y, lambda + step, &opts).unwrap().residual_sq;
        let gm = g_value(&h, &x, &y, lambda - step, &opts).unwrap().residual_sq;
        let fd = (gp - gm) / (2.0 * step);
        assert!((d - fd).abs() <= 1e-4 * fd.abs(), "lambda {lambda}: {d} vs {fd}");
    }
}

fn scalar_case() -> impl Strategy<Value = (f64, f64, f64, f64, f64)> {
    // a, x_prev, y, relative noise, p
    (0.2f64..5.0, -2.0f64..2.0, 1.0f64..10.0, 1e-4f64..0.3, 0.05f64..0.9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn accepted_multiplier_lands_in_window(
        (a, x0, y, rel, p) in scalar_case(),
        greedy in any::<bool>(),
        over_relax in any::<bool>(),
        warm in any::<bool>(),
        previous in any::<bool>(),
    ) {
        let op = DenseOperator::new(1, 1, vec![a]).unwrap();
        let x_prev = [x0];
        let y_delta = [y];
        let r = (a * x0 - y).abs();
        let delta = rel * r;
        let target = RangeTarget::new(delta, p, r).unwrap();
        let opts = MultiplierOptions {
            greedy,
            over_relax,
            warm_start: warm,
            warm_start_mode: if previous { WarmStart::Previous } else { WarmStart::Extrapolate },
            ..Default::default()
        };
        let res = solve_range(&op, &x_prev, &y_delta, &target, 1, &[], &opts).unwrap();
        prop_assert!(target.accepts(res.accepted_residual));
        prop_assert!(res.accepted_residual >= delta);
        prop_assert!(res.accepted_residual - delta <= p * (r - delta));
        let lb = lambda_lower_bound(&op, &x_prev, &y_delta, res.accepted_residual).unwrap();
        prop_assert!(res.lambda >= lb * (1.0 - 1e-12));
        prop_assert_eq!(res.linear_solves, 1 + 2 * res.inner_iterations + res.bisections);
    }

    #[test]
    fn residual_monotone_in_lambda(entries in prop::collection::vec(-1.0f64..1.0, 16), l1 in -2.0f64..2.0, l2 in -2.0f64..2.0) {
        let a = DenseOperator::new(4, 4, entries).unwrap();
        let x = [0.1, -0.4, 0.3, 0.0];
        let y = [1.0, 0.5, -0.5, 0.2];
        let (lo, hi) = if l1 < l2 { (l1, l2) } else { (l2, l1) };
        let opts = SolveOptions::default();
        let g_lo = g_value(&a, &x, &y, 10f64.powf(lo), &opts).unwrap().residual_sq;
        let g_hi = g_value(&a, &x, &y, 10f64.powf(hi), &opts).unwrap().residual_sq;
        prop_assert!(g_hi <= g_lo * (1.0 + 1e-10) + 1e-14);
    }
}
