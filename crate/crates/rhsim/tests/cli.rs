use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn rhsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rhsim")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cfg(name: &str) -> String {
    configs().join(name).to_str().unwrap().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn derive_prints_and_writes_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.json");
    let o = rhsim(&["derive", "--config", &cfg("table1.cfg"), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("7766250 ps"), "{stdout}");
    let v = json(&out);
    assert_eq!(v["derived"]["n_rh_star"], 16_384);
    assert_eq!(v["derived"]["history_capacity"], 888);

    let csv = dir.path().join("d.csv");
    assert_eq!(code(&rhsim(&["derive", "--config", &cfg("scaled.cfg"), "--out", csv.to_str().unwrap()])), 0);
    let text = fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("metric,value\n"));
    assert!(text.contains("derived.t_delay,5192917"), "{text}");
}

#[test]
fn verify_exit_codes() {
    assert_eq!(code(&rhsim(&["verify", "--config", &cfg("table1.cfg")])), 0);
    let o = rhsim(&["verify", "--config", &cfg("table1_halved.cfg")]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("SAT"));
}

#[test]
fn verify_search_on_scaled() {
    let o = rhsim(&["verify", "--config", &cfg("scaled.cfg"), "--search", "50", "--seed", "3"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("agrees"));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "preset = scaled\nn_bll = 3\n").unwrap();
    let o = rhsim(&["derive", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8(o.stderr).unwrap().contains("line 2"));
    fs::write(&bad, "n_bl = 0\n").unwrap();
    assert_eq!(code(&rhsim(&["verify", "--config", bad.to_str().unwrap()])), 1);
}

#[test]
fn missing_files_exit_3() {
    assert_eq!(code(&rhsim(&["derive", "--config", "/nonexistent/x.cfg"])), 3);
    let o = rhsim(&["simulate", "--config", &cfg("scaled.cfg"), "--trace", "/nonexistent/t.csv"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn malformed_traces_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.csv");
    fs::write(&t, "0,0,0,10\n5,0,zero,11\n").unwrap();
    let o = rhsim(&["simulate", "--config", &cfg("scaled.cfg"), "--trace", t.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8(o.stderr).unwrap().contains("line 2"));
    fs::write(&t, "0,0,99,10\n").unwrap();
    assert_eq!(code(&rhsim(&["simulate", "--config", &cfg("scaled.cfg"), "--trace", t.to_str().unwrap()])), 4);
    assert_eq!(code(&rhsim(&["simulate", "--config", &cfg("scaled.cfg"), "--gen", "attack:bogus"])), 4);
}

#[test]
fn simulate_reports_oracle_violations() {
    let scaled = cfg("scaled.cfg");
    let o = rhsim(&["simulate", "--config", &scaled, "--gen", "attack:double_sided", "--mechanism", "none"]);
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8(o.stderr).unwrap().contains("oracle violation under none"));
    let o = rhsim(&["simulate", "--config", &scaled, "--gen", "attack:double_sided"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn observe_mode_reports_but_never_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json");
    let o = rhsim(&[
        "simulate",
        "--config",
        &cfg("scaled.cfg"),
        "--gen",
        "attack:double_sided",
        "--gen",
        "benign:M",
        "--mode",
        "observe",
        "--out",
        out.to_str().unwrap(),
    ]);
    // Observe mode does not protect, so the attack still breaks the bound.
    assert_eq!(code(&o), 5);
    let m = json(&out);
    assert_eq!(m["blocked_acts"], 0);
    assert!(m["observed_unsafe_acts"].as_u64().unwrap() > 0);
    assert!(m.get("observed_false_positives").is_some());
    assert_eq!(m["mode"], "observe_only");
}

#[test]
fn trace_round_trips_through_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.csv");
    let scaled = cfg("scaled.cfg");
    let gen = ["--gen", "attack:fuzz(4)", "--gen", "benign:L", "--seed", "9"];
    let mut args = vec!["trace", "--config", &scaled, "--out", t.to_str().unwrap()];
    args.extend(gen);
    assert_eq!(code(&rhsim(&args)), 0);
    assert!(fs::read_to_string(&t).unwrap().lines().count() > 100);

    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    assert_eq!(
        code(&rhsim(&["simulate", "--config", &scaled, "--trace", t.to_str().unwrap(), "--out", a.to_str().unwrap()])),
        0
    );
    let mut args = vec!["simulate", "--config", &scaled, "--out", b.to_str().unwrap()];
    args.extend(gen);
    assert_eq!(code(&rhsim(&args)), 0);
    assert_eq!(json(&a), json(&b));
}

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = rhsim(&[
            "simulate",
            "--config",
            &cfg("scaled.cfg"),
            "--gen",
            "attack:epoch_straddle",
            "--gen",
            "benign:H",
            "--seed",
            "2",
            "--record-commands",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
        fs::read(out).unwrap()
    };
    assert_eq!(run("1.json"), run("2.json"));
}

#[test]
fn sweep_writes_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = rhsim(&[
        "sweep",
        "--config",
        &cfg("scaled.cfg"),
        "--gen",
        "attack:double_sided",
        "--seeds",
        "2",
        "--jobs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let violated = headers.iter().position(|h| h == "violated").unwrap();
    let mechanism = headers.iter().position(|h| h == "mechanism").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let expect = if &r[mechanism] == "none" { "true" } else { "false" };
        assert_eq!(&r[violated], expect);
    }
}
