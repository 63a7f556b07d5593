use std::process::Command;

use hypoldp::cli::run;

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("hypoldp").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn counterexample_table() {
    let (code, out, _) = call(&["counterexample", "--eps", "1,0.5", "--x2", "0"]);
    assert_eq!(code, 0);
    let lines = data_lines(&out);
    assert_eq!(lines[0], "epsilon,x2,p,eps2_log_p,c11,c12,c22");
    let row: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert!((row[2] - 3f64.sqrt() / std::f64::consts::PI).abs() < 1e-15);
    assert_eq!(lines.len(), 3);
}

#[test]
fn brackets_reports_the_degree() {
    let (code, out, _) = call(&["brackets", "--system", "engel", "--at", "0,0,0", "--constants"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["degree"], 3);
    assert!(v["certificate"]["constants"]["horizon"].as_f64().unwrap() > 0.0);
}

#[test]
fn rate_and_exit_codes() {
    let (code, out, _) = call(&[
        "rate", "--system", "heisenberg", "--from", "0,0,0", "--to", "1,0,0", "--segments", "16", "--restarts", "2",
        "--excitation-restarts", "0",
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((v["result"]["energy"].as_f64().unwrap() - 0.5).abs() < 1e-6);

    let (code, _, err) = call(&["rate", "--system", "heisenberg", "--from", "0,0", "--to", "1,0,0"]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error:"));
    assert_eq!(call(&["rate", "--system", "no-such-system", "--from", "0", "--to", "1"]).0, 2);
    assert_eq!(call(&["frobnicate"]).0, 2);
    assert_eq!(call(&["--help"]).0, 0);
}

#[test]
fn malformed_system_json_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"n": 2, "d": 1, "fields": [{"terms": [{"exponents": [0, 0], "coeffs": [1.0, "x"]}]}]}"#)
        .unwrap();
    let (code, _, err) = call(&["brackets", "--system", path.to_str().unwrap(), "--at", "0,0"]);
    assert_eq!(code, 2);
    assert!(err.contains("fields[0].terms[0].coeffs[1]"), "{err}");
}

#[test]
fn simulate_is_byte_identical_across_workers() {
    let args = |t: &'static str| {
        vec![
            "--threads", t, "simulate", "--system", "grushin", "--from", "1,0", "--eps", "0.5,0.25", "--paths", "2000",
            "--level", "5", "--seed", "3", "--target", "1,0",
        ]
    };
    let runs: Vec<String> = ["1", "2", "4"].iter().map(|t| call(&args(t)).1).collect();
    assert!(runs[0].contains("# seed: 3"));
    assert!(runs[0].contains("# config_hash: "));
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn lift_of_a_square() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("square.csv");
    std::fs::write(&path, "t,x,y\n0,0,0\n0.25,1,0\n0.5,1,1\n0.75,0,1\n1,0,0\n").unwrap();
    let (code, out, err) = call(&["lift", "--input", path.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let lines = data_lines(&out);
    assert_eq!(lines[0], "s,t,w1_1,w1_2,w2_11,w2_12,w2_21,w2_22");
    assert_eq!(lines.len(), 5);
}

#[test]
fn binary_exit_status() {
    let bin = env!("CARGO_BIN_EXE_hypoldp");
    let ok = Command::new(bin).args(["counterexample", "--eps", "1"]).output().unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("epsilon,x2,p"));
    let bad = Command::new(bin).args(["brackets", "--system", "/nonexistent.json", "--at", "0"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
