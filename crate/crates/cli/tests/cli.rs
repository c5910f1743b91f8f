use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pointdiff"));
    cmd.args(args).env_remove("POINTDIFF_RTOL");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_str(&stdout(o)).expect("valid json")
}

#[test]
fn csv_table_has_header_and_values() {
    let o = run(&["table", "survival", "--family", "gst", "--r", "1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,r,value,err_estimate");
    let v: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    // 1 - K0(sqrt 2, 1) / K0(sqrt 2)
    assert!((v - 0.328_724_361_563_864_5).abs() < 1e-9, "{v}");
}

#[test]
fn json_table_layout() {
    let o = run(&["table", "h", "--family", "leb", "--r", "0.5,1", "--t", "0.5,1", "--format", "json"]);
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["meta"]["command"], "table");
    assert_eq!(v["meta"]["columns"], serde_json::json!(["t", "r", "value", "err_estimate"]));
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r["value"].as_f64().unwrap() > 1.0));
}

#[test]
fn hit_density_integrates_to_one() {
    let o = run(&["table", "hitdensity", "--family", "gst", "--r", "1", "--format", "json"]);
    assert!(o.status.success());
    let rows = json(&o)["rows"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 2001);
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r["t"].as_f64().unwrap(), r["value"].as_f64().unwrap()))
        .collect();
    let mass: f64 = pts.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
}

#[test]
fn sampling_is_deterministic_for_a_seed() {
    let args = ["sample", "transition", "--family", "leb", "--n-paths", "200", "--seed", "17", "--t", "0.5"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let mut other = args.to_vec();
    other[7] = "18";
    assert_ne!(run(&other).stdout, a.stdout);
    let parallel = [&args[..], &["--workers", "3"]].concat();
    assert_eq!(run(&parallel).stdout, a.stdout);
}

#[test]
fn output_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    let base = ["table", "kernel", "--r", "0.5,2", "--t", "0.25"];
    let o = run(&[&base[..], &["--out", path.to_str().unwrap()]].concat());
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert_eq!(std::fs::read(&path).unwrap(), run(&base).stdout);
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["table", "h", "--family", "nope"],
        vec!["table", "h", "--r", "lin:1:0:3"],
        vec!["verify", "nothing"],
        vec!["table", "h", "--theta", "-1"],
        vec!["table", "nonsense"],
        vec!["table", "h", "--format", "xml"],
    ] {
        assert_eq!(run(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn numeric_failure_exits_3_with_diagnostic_row() {
    let o = run(&["table", "h", "--r", "1,0", "--format", "json"]);
    assert_eq!(o.status.code(), Some(3));
    let v = json(&o);
    assert!(v["meta"]["error"].is_string());
    let rows = v["rows"].as_array().unwrap();
    assert!(rows[0]["value"].is_number());
    assert!(rows.last().unwrap()["value"].is_null());
}

#[test]
fn verify_specfun_passes() {
    let o = run(&["verify", "specfun"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.contains("renewal identity x=1") && l.ends_with("PASS")));
    assert!(text.contains("checks, 0 failed"));
}

#[test]
fn verify_kernel_small_theta() {
    let o = run(&["verify", "kernel", "--theta", "1e-8"]);
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn verify_failure_exits_1() {
    // a quadrature tolerance this loose cannot meet the renewal target
    let o = run(&["verify", "specfun", "--rtol", "1e-1", "--atol", "1e-1"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}

fn rtol_of(o: &Output) -> f64 {
    json(o)["meta"]["config"]["rtol"].as_f64().unwrap()
}

#[test]
fn config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# test\nrtol = 1e-7\nfamily = leb\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let base = ["table", "h", "--format", "json"];

    assert_eq!(rtol_of(&run(&base)), 1e-8);
    assert_eq!(rtol_of(&run_env(&base, &[("POINTDIFF_RTOL", "1e-6")])), 1e-6);
    let with_file = [&base[..], &["--config", cfg]].concat();
    let o = run_env(&with_file, &[("POINTDIFF_RTOL", "1e-6")]);
    assert_eq!(rtol_of(&o), 1e-7);
    assert_eq!(json(&o)["meta"]["config"]["family"], "leb");
    let with_flag = [&with_file[..], &["--rtol", "1e-9"]].concat();
    assert_eq!(rtol_of(&run_env(&with_flag, &[("POINTDIFF_RTOL", "1e-6")])), 1e-9);
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let missing = Path::new("/nonexistent/pointdiff.cfg");
    assert_eq!(run(&["table", "h", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
}
