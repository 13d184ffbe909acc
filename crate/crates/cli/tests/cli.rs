use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beta3-irt"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

fn simulated(dir: &Path, m: usize, n: usize) {
    write(dir, "spec.json", &format!(r#"{{"kind": "irt", "respondents": {m}, "items": {n}, "seed": 5}}"#));
    ok(dir, &["simulate", "--spec", "spec.json", "--out", "sim"]);
}

#[test]
fn minimal_simulation_writes_every_pair() {
    let t = tempfile::tempdir().unwrap();
    simulated(t.path(), 2, 2);
    let csv = read(t.path(), "sim/responses.csv");
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(csv.lines().next(), Some("respondent_id,item_id,response"));
    assert!(t.path().join("sim/ground_truth.json").exists());
    assert!(t.path().join("sim/manifest.json").exists());
}

#[test]
fn simulation_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    simulated(t.path(), 4, 6);
    ok(t.path(), &["simulate", "--spec", "spec.json", "--out", "again"]);
    assert_eq!(read(t.path(), "sim/responses.csv"), read(t.path(), "again/responses.csv"));
    ok(t.path(), &["simulate", "--spec", "spec.json", "--seed", "6", "--out", "other"]);
    assert_ne!(read(t.path(), "sim/responses.csv"), read(t.path(), "other/responses.csv"));
}

#[test]
fn invalid_density_names_the_field_and_its_position() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "bad.json", "{\n  \"kind\": \"irt\",\n  \"respondents\": 2,\n  \"items\": 2,\n  \"observation_density\": 1.5\n}\n");
    let out = run(t.path(), &["simulate", "--spec", "bad.json", "--out", "x"]);
    assert_eq!(out.status.code(), Some(3));
    let msg = stderr(&out);
    assert!(msg.contains("observation_density") && msg.contains("bad.json:5:3"), "{msg}");
}

#[test]
fn json_syntax_errors_carry_line_and_column() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "bad.json", "{\n  \"kind\": \"irt\",\n  \"respondents\": ,\n}\n");
    let out = run(t.path(), &["simulate", "--spec", "bad.json", "--out", "x"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("bad.json:3:"), "{}", stderr(&out));
}

#[test]
fn variational_two_pl_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    simulated(t.path(), 3, 4);
    let out = run(t.path(), &["fit", "--responses", "sim/responses.csv", "--method", "vi", "--family", "2plnd", "--out", "f"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("beta3"));
}

#[test]
fn mle_trace_has_one_row_per_iteration() {
    let t = tempfile::tempdir().unwrap();
    simulated(t.path(), 5, 8);
    ok(t.path(), &["fit", "--responses", "sim/responses.csv", "--iterations", "37", "--out", "f"]);
    let trace = read(t.path(), "f/trace.csv");
    assert_eq!(trace.lines().count(), 38);
    let params = json(t.path(), "f/params.json");
    assert_eq!(params["format_version"], 1);
    assert_eq!(params["family"], "beta3");
    assert_eq!(params["respondent_ids"].as_array().unwrap().len(), 5);
}

#[test]
fn sigma0_defaults_to_one() {
    let t = tempfile::tempdir().unwrap();
    simulated(t.path(), 3, 5);
    ok(t.path(), &["fit", "--responses", "sim/responses.csv", "--method", "vi", "--outer-iters", "1", "--out", "f"]);
    let m = json(t.path(), "f/manifest.json");
    assert_eq!(m["config"]["vi"]["sigma0"], 1.0);
    assert!(t.path().join("f/posteriors.json").exists());
    assert_eq!(read(t.path(), "f/trace.csv").lines().count(), 2);
}

#[test]
fn method_specific_flags_are_checked() {
    let t = tempfile::tempdir().unwrap();
    simulated(t.path(), 3, 4);
    let out = run(t.path(), &["fit", "--responses", "sim/responses.csv", "--mc-samples", "3", "--out", "f"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(t.path(), &["fit", "--responses", "sim/responses.csv", "--clip-eps", "0.5", "--out", "f"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_rows_report_their_line() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "r.csv", "respondent_id,item_id,response\na,x,0.2\nb,x,1.7\n");
    let out = run(t.path(), &["fit", "--responses", "r.csv", "--out", "f"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
    assert!(!t.path().join("f").exists());

    write(t.path(), "h.csv", "who,what,score\na,x,0.2\n");
    let out = run(t.path(), &["fit", "--responses", "h.csv", "--out", "f"]);
    assert!(stderr(&out).contains("line 1"));

    write(t.path(), "n.csv", "respondent_id,item_id,response\na,x,0.2\nb,y,high\n");
    let out = run(t.path(), &["fit", "--responses", "n.csv", "--out", "f"]);
    assert!(stderr(&out).contains("line 3"));
}

#[test]
fn panel_rows_are_checked_against_the_simplex() {
    let t = tempfile::tempdir().unwrap();
    let header = "classifier_id,instance_id,label,p_class0,p_class1\n";
    write(t.path(), "ok.csv", &format!("{header}c,a,0,0.3,0.7000004\nc,b,1,0.5,0.5\n"));
    write(t.path(), "bad.csv", &format!("{header}c,a,0,0.3,0.7\nc,b,1,0.5,0.51\n"));
    ok(t.path(), &["fit", "--panel", "ok.csv", "--iterations", "5", "--out", "f"]);
    let out = run(t.path(), &["fit", "--panel", "bad.csv", "--out", "g"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

fn params_file(dir: &Path, difficulty: f64, a: f64) {
    let p = serde_json::json!({
        "format_version": 1,
        "family": "beta3",
        "respondent_ids": ["s"],
        "item_ids": ["q"],
        "abilities": [0.4],
        "difficulties": [difficulty],
        "discriminations": [a],
    });
    write(dir, "params.json", &p.to_string());
}

#[test]
fn icc_midpoint_and_endpoints() {
    let t = tempfile::tempdir().unwrap();
    params_file(t.path(), 0.5, 2.0);
    ok(t.path(), &["icc", "--params", "params.json", "--item", "q", "--grid", "101", "--out", "c"]);
    let csv = read(t.path(), "c/icc.csv");
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 101);
    let theta: f64 = rows[50][0].parse().unwrap();
    let e: f64 = rows[50][1].parse().unwrap();
    assert!((theta - 0.5).abs() < 1e-12 && (e - 0.5).abs() < 1e-12, "{theta} {e}");
    assert!(rows.iter().all(|r| r[2] == "sigmoid"));

    ok(t.path(), &["icc", "--params", "params.json", "--item", "q", "--grid", "2", "--out", "two"]);
    let csv = read(t.path(), "two/icc.csv");
    let thetas: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(thetas, vec!["0.000001", "0.999999"]);

    let out = run(t.path(), &["icc", "--params", "params.json", "--item", "nope", "--out", "x"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn anti_sigmoid_curve_bends_once() {
    let t = tempfile::tempdir().unwrap();
    params_file(t.path(), 0.5, 0.5);
    ok(t.path(), &["icc", "--params", "params.json", "--item", "q", "--grid", "201", "--out", "c"]);
    let csv = read(t.path(), "c/icc.csv");
    let rows: Vec<(f64, f64, String)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].to_string())
        })
        .collect();
    assert!(rows.iter().all(|r| r.2 == "anti_sigmoid"));
    let second: Vec<f64> = rows.windows(3).map(|w| w[2].1 - 2.0 * w[1].1 + w[0].1).collect();
    let changes = second.windows(2).filter(|w| w[0].signum() != w[1].signum() && w[0] != 0.0 && w[1] != 0.0).count();
    assert_eq!(changes, 1);
    // concave below the midpoint, convex above
    assert!(second[10] < 0.0 && second[second.len() - 10] > 0.0);
}

#[test]
fn params_round_trip_through_json() {
    let t = tempfile::tempdir().unwrap();
    simulated(t.path(), 4, 5);
    ok(t.path(), &["fit", "--responses", "sim/responses.csv", "--iterations", "20", "--out", "f"]);
    let text = read(t.path(), "f/params.json");
    let v: Value = serde_json::from_str(&text).unwrap();
    let p: beta3_irt::params::ModelParams = serde_json::from_value(serde_json::json!({
        "family": v["family"],
        "abilities": v["abilities"],
        "difficulties": v["difficulties"],
        "discriminations": v["discriminations"],
    }))
    .unwrap();
    let again = serde_json::to_value(&p).unwrap();
    for key in ["abilities", "difficulties", "discriminations"] {
        assert_eq!(again[key], v[key]);
    }
}

#[test]
fn predict_uses_ids_and_seventeen_digits() {
    let t = tempfile::tempdir().unwrap();
    params_file(t.path(), 0.4, 1.3);
    write(t.path(), "pairs.csv", "respondent_id,item_id\ns,q\n");
    ok(t.path(), &["predict", "--params", "params.json", "--pairs", "pairs.csv", "--out", "p"]);
    let csv = read(t.path(), "p/predictions.csv");
    let value = csv.lines().nth(1).unwrap().split(',').nth(2).unwrap().to_string();
    assert_eq!(value, format!("{:.16e}", 0.5));

    let out = run(t.path(), &["predict", "--params", "params.json", "--pairs", "pairs.csv", "--family", "2plnd", "--out", "x"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("mismatch"));

    write(t.path(), "unknown.csv", "respondent_id,item_id\ns,q\nz,q\n");
    let out = run(t.path(), &["predict", "--params", "params.json", "--pairs", "unknown.csv", "--out", "x"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("line 3"));
}

#[test]
fn replay_reproduces_and_detects_changed_inputs() {
    let t = tempfile::tempdir().unwrap();
    simulated(t.path(), 4, 6);
    ok(t.path(), &["fit", "--responses", "sim/responses.csv", "--iterations", "30", "--seed", "2", "--out", "f"]);
    ok(t.path(), &["replay", "--manifest", "f/manifest.json", "--out", "g"]);
    for name in ["params.json", "trace.csv", "manifest.json"] {
        assert_eq!(read(t.path(), &format!("f/{name}")), read(t.path(), &format!("g/{name}")), "{name}");
    }
    let m = json(t.path(), "f/manifest.json");
    assert!(m["command"].as_array().unwrap().iter().all(|a| a != "--out"));
    assert_eq!(m["seed"], 2);

    write(t.path(), "sim/responses.csv", "respondent_id,item_id,response\na,b,0.5\n");
    let out = run(t.path(), &["replay", "--manifest", "f/manifest.json", "--out", "h"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("changed"));
}

#[test]
fn usage_errors_exit_with_two() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(run(t.path(), &["fit", "--out", "f"]).status.code(), Some(2));
    assert_eq!(run(t.path(), &["bogus"]).status.code(), Some(2));
    assert_eq!(run(t.path(), &["icc", "--params", "p.json", "--item", "q", "--grid", "1", "--out", "x"]).status.code(), Some(2));
}
