use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rrnit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrnit")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn gnit_run_stops_by_discrepancy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.csv");
    let o = rrnit(&["run", "--method", "gnit", "--q", "2", "--noise-level", "1e-5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let rows = data_rows(&out);
    assert!((12..=22).contains(&rows), "{rows}");
    assert!(dir.path().join("g.manifest.json").exists());
}

#[test]
fn exact_data_run_hits_step_cap() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.csv");
    let o = rrnit(&["run", "--noise-level", "0", "--max-outer", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert_eq!(data_rows(&out), 10);
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(rrnit(&["run", "--bogus"]).status.code(), Some(64));
    assert_eq!(rrnit(&["run", "--method", "newton"]).status.code(), Some(64));
    assert_eq!(rrnit(&["run", "--p", "1.5", "--out", "/dev/null"]).status.code(), Some(64));
    assert_eq!(rrnit(&["compare", "--method", "gnit:q=x"]).status.code(), Some(64));
    assert_eq!(rrnit(&["--help"]).status.code(), Some(0));
}

#[test]
fn verify_accepts_own_trace_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let path = out.to_str().unwrap();
    assert_eq!(rrnit(&["run", "--out", path, "--format", "json"]).status.code(), Some(0));
    let o = rrnit(&["verify", path, "--rerun"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("PASS  a:residual-decay"));
    assert!(text.contains("PASS  rerun:bit-identical"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn verify_flags_tampered_residual() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let path = out.to_str().unwrap();
    assert_eq!(rrnit(&["run", "--out", path]).status.code(), Some(0));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[2].split(',').map(String::from).collect();
    fields[2] = "5.0e-1".into();
    lines[2] = fields.join(",");
    fs::write(&out, lines.join("\n") + "\n").unwrap();

    let o = rrnit(&["verify", path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL  a:residual-decay"), "{}", stdout(&o));
}

#[test]
fn verify_marks_rrnit_checks_not_applicable_for_gnit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.csv");
    let path = out.to_str().unwrap();
    assert_eq!(rrnit(&["run", "--method", "gnit", "--noise-level", "1e-3", "--out", path]).status.code(), Some(0));
    let o = rrnit(&["verify", path]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("SKIP  a:residual-decay"));
}

#[test]
fn verify_reports_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    let path = out.to_str().unwrap();
    assert_eq!(rrnit(&["verify", path]).status.code(), Some(66));
    assert_eq!(rrnit(&["run", "--noise-level", "1e-3", "--out", path]).status.code(), Some(0));
    fs::write(&out, "k,lambda\n1,not-a-number\n").unwrap();
    assert_eq!(rrnit(&["verify", path]).status.code(), Some(65));
}

#[test]
fn compare_prints_grid_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        let o = rrnit(&[
            "compare", "--n", "12", "--method", "rrnit", "--method", "gnit:q=3",
            "--noise-levels", "1e-2,1e-4", "--seeds", "0,1,2", "--out", out,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
        (stdout(&o), fs::read_to_string(out).unwrap())
    };
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let (text, csv_a) = args(a.to_str().unwrap());
    let (_, csv_b) = args(b.to_str().unwrap());
    assert!(text.contains("gnit:q=3"));
    assert!(text.contains("1e-2") && text.contains("1e-4"));
    assert_eq!(csv_a, csv_b);
    assert_eq!(csv_a.lines().count(), 5);
}

#[test]
fn deblur_compare_gives_two_by_three_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.json");
    let o = rrnit(&[
        "compare", "--problem", "deblur", "--size", "16", "--psf-size", "5", "--sigma", "1",
        "--method", "gnit", "--method", "rrnit", "--noise-levels", "1e-2,1e-3,1e-4", "--seeds", "0,1,2",
        "--out", out.to_str().unwrap(), "--format", "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let table: Vec<_> = stdout(&o).lines().skip(1).take(3).map(String::from).collect();
    assert!(table[1].starts_with("gnit") && table[2].starts_with("rrnit"), "{table:?}");
    for row in &table[1..] {
        assert_eq!(row.matches(')').count(), 3, "{row}");
    }
    let cells: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(cells.len(), 6);
}
