use std::path::PathBuf;
use std::process::{Command, Output};

fn problem(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("problems")
        .join(name)
        .display()
        .to_string()
}

fn heatkern(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heatkern"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn first_coefficient_is_q() {
    let o = heatkern(&["coeffs", "--k", "1"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "Q");
}

#[test]
fn coefficient_table_as_json() {
    let o = heatkern(&["coeffs", "--kmax", "3", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
    assert_eq!(v[2]["text"], "-1/3 Q'' + Q^2");
}

#[test]
fn zeroth_invariant_of_free_circle() {
    let o = heatkern(&["invariants", "--k", "0", "--problem", &problem("free_a1_N1.json")]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("6.2831853071795862e0"), "{}", stdout(&o));
}

#[test]
fn verify_constant_problem() {
    let o = heatkern(&["verify", "--problem", &problem("constant_a1_c1.json")]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.lines().any(|l| l.starts_with("[PASS]") && l.contains("problem_determinant_benchmark")), "{text}");
}

#[test]
fn single_checks_and_their_exit_codes() {
    let o = heatkern(&["verify", "--check", "w_identity"]);
    assert_eq!(o.status.code(), Some(0));
    // the single-cosine scaling criterion is a documented red
    let o = heatkern(&["verify", "--check", "perturbative_scaling"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[verification]"));
}

#[test]
fn outputs_are_reproducible() {
    let args = ["det", "--problem", &problem("cosine_a1.json"), "--lambda=-4,-25"];
    let a = heatkern(&args);
    let b = heatkern(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.starts_with("lambda,log_det_oracle,weyl,gamma\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn error_exit_codes() {
    let o = heatkern(&["invariants", "--k", "1", "--problem", "/nonexistent/problem.json"]);
    assert_eq!(o.status.code(), Some(2));
    let o = heatkern(&["trace", "--problem", &problem("cosine_a1.json"), "--t", "0.1", "--t-min", "1e-9"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[resolution]"));
    let o = heatkern(&["kdv", "--problem", &problem("matrix_a1_N2.json")]);
    assert_eq!(o.status.code(), Some(2));
    let o = heatkern(&["det", "--problem", &problem("cosine_a1.json"), "--lambda", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_cap_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_heatkern"))
        .args(["coeffs", "--k", "1"])
        .env("HEATKERN_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_heatkern"))
        .args(["coeffs", "--k", "1"])
        .env("HEATKERN_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success());
}

#[test]
fn kdv_run_writes_trajectory_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("flow.jsonl");
    let report = dir.path().join("report.csv");
    let o = heatkern(&[
        "kdv",
        "--problem",
        &problem("cosine_a1.json"),
        "--grid",
        "64",
        "--s-end",
        "0.1",
        "--steps",
        "200",
        "--records",
        "4",
        "--trajectory",
        traj.to_str().unwrap(),
        "--output",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&traj).unwrap().lines().count(), 5);
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("functional,initial,final,drift\n"));
    for line in csv.lines().skip(1) {
        let drift: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(drift < 1e-8, "{line}");
    }
}

#[test]
fn zeta_table() {
    let o = heatkern(&["zeta", "--problem", &problem("free_a1_N1.json"), "--s", "1", "--lambda", "-1", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let want = std::f64::consts::PI / std::f64::consts::PI.tanh();
    assert!((v[0]["direct"].as_f64().unwrap() - want).abs() < 1e-10);
}
