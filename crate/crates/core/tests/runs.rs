use std::fs::File;
use std::io::BufReader;

use rrnit_core::batch::{compare, run_batch, MethodSpec};
use rrnit_core::io::{read_trace_csv, read_trace_json, write_trace_csv, write_trace_json, TraceHeader};
use rrnit_core::iteration::{verify_trace, CheckStatus};
use rrnit_core::linop::{Boundary, DenseOperator};
use rrnit_core::problems::{checkerboard, make_deblur_problem, ImageSource, Problem, ProblemSpec, XStar};
use rrnit_core::vector::dist_sq;
use rrnit_core::{run, Method, Mode, SolverConfig, StopReason};
use std::sync::Arc;

#[test]
fn two_by_two_exact_data_recovers_solution() {
    let a = DenseOperator::new(2, 2, vec![2.0, 1.0, 1.0, 3.0]).unwrap();
    let x_star = vec![1.0, -2.0];
    let p = Problem::from_ground_truth(Arc::new(a), x_star.clone(), 0.0, 0, None).unwrap();
    let cfg = SolverConfig {
        max_outer: 10,
        ..Default::default()
    };
    let t = run(&p, &cfg).unwrap();
    // With delta = 0 the discrepancy stop needs an exact fit; the cap or an
    // exact hit ends the run.
    assert!(matches!(t.stop_reason, StopReason::MaxOuter | StopReason::Discrepancy), "{:?}", t.failure);
    assert!(dist_sq(&t.final_iterate, &x_star).sqrt() <= 1e-6);
    let report = verify_trace(&t, &p, &cfg);
    assert!(report.all_passed(), "{report:#?}");
}

#[test]
fn deblur_checkerboard_run_verifies() {
    let img = checkerboard(16, 4).unwrap();
    let p = make_deblur_problem(&img, 5, 1.0, Boundary::Periodic, 1e-3, 4).unwrap();
    let cfg = SolverConfig {
        tau: 3.0,
        ..Default::default()
    };
    let t = run(&p, &cfg).unwrap();
    assert_eq!(t.stop_reason, StopReason::Discrepancy);
    assert!(t.final_error().unwrap() < t.initial_error.unwrap());
    let report = verify_trace(&t, &p, &cfg);
    for c in &report.checks {
        assert!(!matches!(c.status, CheckStatus::Fail(_)), "{c:?}");
    }
}

#[test]
fn traces_round_trip_through_files() {
    let spec = ProblemSpec::Hilbert {
        n: 12,
        x_star: XStar::Ramp,
        noise_level: 1e-4,
        seed: 9,
    };
    let p = spec.build().unwrap();
    let t = run(&p, &SolverConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let csv = dir.path().join("t.csv");
    write_trace_csv(&t, File::create(&csv).unwrap()).unwrap();
    let back = read_trace_csv(BufReader::new(File::open(&csv).unwrap()), &TraceHeader::of(&t)).unwrap();
    assert_eq!(back.records, t.records);

    let json = dir.path().join("t.json");
    write_trace_json(&t, File::create(&json).unwrap()).unwrap();
    let back = read_trace_json(File::open(&json).unwrap()).unwrap();
    assert_eq!(back.records, t.records);
    assert_eq!(back.stop_reason, t.stop_reason);
}

#[test]
fn batch_results_do_not_depend_on_mode() {
    let jobs: Vec<_> = (0..4)
        .map(|seed| {
            (
                ProblemSpec::Deblur {
                    image: ImageSource::Checkerboard { size: 16, cell: 4 },
                    psf_size: 5,
                    sigma: 1.0,
                    boundary: Boundary::ZeroPad,
                    noise_level: 1e-3,
                    seed,
                },
                SolverConfig {
                    tau: 3.0,
                    ..Default::default()
                },
            )
        })
        .collect();
    let seq: Vec<_> = run_batch(&jobs, Mode::Sequential).into_iter().map(Result::unwrap).collect();
    let par: Vec<_> = run_batch(&jobs, Mode::Parallel).into_iter().map(Result::unwrap).collect();
    assert_eq!(seq, par);
}

#[test]
fn compare_produces_grid_in_level_major_order() {
    let spec = ProblemSpec::Hilbert {
        n: 10,
        x_star: XStar::Ones,
        noise_level: 1e-3,
        seed: 0,
    };
    let methods = [
        MethodSpec {
            label: "rrnit".into(),
            config: SolverConfig::default(),
        },
        MethodSpec {
            label: "gnit q=3".into(),
            config: SolverConfig {
                method: Method::Gnit,
                q: 3.0,
                ..Default::default()
            },
        },
    ];
    let cells = compare(&spec, &methods, &[1e-2, 1e-4], &[0, 1, 2], Mode::default()).unwrap();
    let labels: Vec<_> = cells.iter().map(|c| (c.method.as_str(), c.noise_level)).collect();
    assert_eq!(labels, [("rrnit", 1e-2), ("gnit q=3", 1e-2), ("rrnit", 1e-4), ("gnit q=3", 1e-4)]);
    for c in &cells {
        assert_eq!(c.runs.len(), 3);
        assert!(c.all_discrepancy());
        let entry = c.table_entry();
        assert!(entry.ends_with(')'), "{entry}");
    }
    // gnit costs exactly one solve per step.
    assert_eq!(cells[1].median_linear_solves, cells[1].median_iterations);
}
