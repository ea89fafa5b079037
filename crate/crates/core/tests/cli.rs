use std::path::PathBuf;
use std::process::{Command, Output};

use falg::gallery;

fn falg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_falg")).args(args).output().expect("falg runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn gallery_check_passes() {
    let o = falg(&["check", "gallery:randers", "--quiet"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let o = falg(&["check", "gallery:sphere"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("PASS prelie")), "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn broken_bracket_is_a_check_failure() {
    let src = gallery::source("rotation-algebroid").unwrap().replace(r#""expr": "-1""#, r#""expr": "1""#);
    let path = scratch("broken-bracket.json");
    std::fs::write(&path, src).unwrap();
    let o = falg(&["check", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("FAIL prelie")), "{text}");
}

#[test]
fn usage_and_load_errors_exit_2() {
    let bad_json = scratch("truncated.json");
    std::fs::write(&bad_json, r#"{"name": "x", "n": 2,"#).unwrap();
    let bad_expr = scratch("bad-expr.json");
    std::fs::write(&bad_expr, gallery::source("euclidean").unwrap().replace("sqrt(y1^2 + y2^2)", "sqrt(y1^2 +* y2^2)")).unwrap();
    let cases: [&[&str]; 6] = [
        &["check", bad_json.to_str().unwrap()],
        &["check", bad_expr.to_str().unwrap()],
        &["check", "gallery:euclidean", "--frobnicate"],
        &["check", "gallery:no-such-model"],
        &["leaf", "gallery:euclidean"],
        &["teleport", "gallery:euclidean"],
    ];
    for args in cases {
        let o = falg(args);
        assert_eq!(code(&o), 2, "{args:?}");
        assert!(!o.stderr.is_empty(), "{args:?} gave no diagnostic");
    }
    let o = falg(&["check", bad_expr.to_str().unwrap()]);
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("metric.expr"), "{err}");
}

#[test]
fn help_exits_0() {
    assert_eq!(code(&falg(&["--help"])), 0);
    assert_eq!(code(&falg(&["geodesic", "--help"])), 0);
}

#[test]
fn geodesic_csv_and_json() {
    let csv = scratch("sphere.csv");
    let json = scratch("sphere.json");
    let o = falg(&[
        "geodesic",
        "gallery:riemann-sphere",
        "--x0",
        "0.1,-0.2",
        "--y0",
        "0.5,0.3",
        "--time",
        "1.5",
        "--csv",
        csv.to_str().unwrap(),
        "--json",
        json.to_str().unwrap(),
        "-q",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x1,x2,y1,y2,F"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert!(rows.len() > 2);
    assert_eq!(rows[0][..5], [0.0, 0.1, -0.2, 0.5, 0.3]);
    assert!((rows.last().unwrap()[0] - 1.5).abs() < 1e-12);
    let f0 = rows[0][5];
    assert!(rows.iter().all(|r| (r[5] - f0).abs() < 1e-7 * f0));

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["command"], "geodesic");
    assert_eq!(report["model"], "riemann-sphere");
    for r in report["records"].as_array().unwrap() {
        assert!(r["tolerance"].is_number(), "{r}");
        assert_eq!(r["pass"], true, "{r}");
    }
}

#[test]
fn hamiltonian_csv_has_covector_columns() {
    let csv = scratch("rotation-ham.csv");
    let o = falg(&["hamiltonian", "gallery:rotation", "--csv", csv.to_str().unwrap(), "-q"]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("t,x1,x2,xi1,xi2,F"));
}

#[test]
fn tol_override_can_fail_a_run() {
    let o = falg(&["connection", "gallery:randers", "--tol", "1e-30"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn forced_model_reports_forced_flow() {
    let o = falg(&["geodesic", "gallery:forced-mechanical"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn json_matches_golden_regardless_of_threads() {
    let golden = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/rotation-algebroid-check.json")).unwrap();
    for threads in ["1", "4"] {
        let path = scratch(&format!("rotation-check-{threads}.json"));
        let o = Command::new(env!("CARGO_BIN_EXE_falg"))
            .args(["check", "gallery:rotation-algebroid", "-q", "--json", path.to_str().unwrap()])
            .env("RAYON_NUM_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
        assert!(std::fs::read_to_string(&path).unwrap() == golden, "differs with {threads} threads");
    }
}
