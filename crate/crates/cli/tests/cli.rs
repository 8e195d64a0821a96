use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn quadwit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadwit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    std::fs::write(dir.join(name), json).unwrap();
    name.to_string()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn optimize_reports_violation_from_four() {
    let tmp = tempfile::tempdir().unwrap();
    let out = quadwit(tmp.path(), &["optimize", "--out", "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("first violation at N=4"));
    let (header, rows) = read_csv(&tmp.path().join("run/optimize.csv"));
    assert_eq!(header[..3], ["N", "m", "G"]);
    assert_eq!(rows.len(), 19);
    for row in &rows {
        let (n, g) = (row[0], row[2]);
        assert_eq!(g < 0.0, n >= 4.0, "N={n} G={g}");
    }
    let manifest = read_json(&tmp.path().join("run/manifest.json"));
    assert_eq!(manifest["config"]["task"], "optimize");
    assert_eq!(manifest["config"]["params"]["n_max"], 20);
    assert_eq!(manifest["outputs"], serde_json::json!(["optimize.csv", "optimize.json"]));
}

#[test]
fn runs_are_reproducible_from_their_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"task": "sample", "params": {"m": 3, "per_cut": 2000}}"#);
    assert!(quadwit(tmp.path(), &["sample", "--config", &cfg, "--seed", "9", "--out", "a"]).status.success());
    assert!(quadwit(tmp.path(), &["sample", "--config", &cfg, "--seed", "9", "--out", "b", "--threads", "2"])
        .status
        .success());
    let a = std::fs::read(tmp.path().join("a/dataset.csv")).unwrap();
    assert_eq!(a, std::fs::read(tmp.path().join("b/dataset.csv")).unwrap());

    let manifest = read_json(&tmp.path().join("a/manifest.json"));
    assert_eq!(manifest["config"]["seed"], 9);
    std::fs::write(tmp.path().join("replay.json"), manifest["config"].to_string()).unwrap();
    let replay = quadwit(tmp.path(), &["sample", "--config", "replay.json", "--out", "c"]);
    assert!(replay.status.success(), "{}", stderr(&replay));
    assert_eq!(a, std::fs::read(tmp.path().join("c/dataset.csv")).unwrap());
    let other = quadwit(tmp.path(), &["sample", "--config", &cfg, "--seed", "10", "--out", "d"]);
    assert!(other.status.success());
    assert_ne!(a, std::fs::read(tmp.path().join("d/dataset.csv")).unwrap());
}

#[test]
fn outputs_are_write_once() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(quadwit(tmp.path(), &["finite-cuts", "--out", "run"]).status.success());
    let before = std::fs::read(tmp.path().join("run/finite_cuts.csv")).unwrap();
    let again = quadwit(tmp.path(), &["finite-cuts", "--out", "run"]);
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr(&again).contains("write-once"));
    assert_eq!(before, std::fs::read(tmp.path().join("run/finite_cuts.csv")).unwrap());

    std::fs::create_dir(tmp.path().join("stale")).unwrap();
    std::fs::write(tmp.path().join("stale/plans.json"), "{}").unwrap();
    let clash = quadwit(tmp.path(), &["finite-cuts", "--out", "stale"]);
    assert_eq!(clash.status.code(), Some(2));
    assert_eq!(std::fs::read_to_string(tmp.path().join("stale/plans.json")).unwrap(), "{}");
}

#[test]
fn schema_errors_name_the_offending_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (r#"{"params": {"n_max": "twenty"}}"#, "optimize", "/params/n_max"),
        (r#"{"params": {"cuts": [0.0, "x"]}}"#, "sample", "/params/cuts/1"),
        (r#"{"params": {"grid": {"a_points": -1}}}"#, "backproject", "/params/grid/a_points"),
        (r#"{"model": {"kind": "cat_state"}}"#, "optimize", "/model/kind"),
        (r#"{"params": {"nmax": 3}}"#, "optimize", "/params/nmax"),
        (r#"{"task": "compare"}"#, "optimize", "/task"),
        (r#"{"params": {"criteria": [1, 12]}}"#, "verify", "/params/criteria/1"),
    ];
    for (i, (json, task, pointer)) in cases.into_iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("c{i}.json"), json);
        let out = quadwit(tmp.path(), &[task, "--config", &cfg, "--seed", "1", "--out", &format!("o{i}")]);
        assert_eq!(out.status.code(), Some(2), "{json}");
        assert!(stderr(&out).contains(pointer), "{json}: {}", stderr(&out));
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let no_seed = quadwit(tmp.path(), &["sample", "--out", "a"]);
    assert_eq!(no_seed.status.code(), Some(2));
    assert!(stderr(&no_seed).contains("seed"));
    let missing = quadwit(tmp.path(), &["optimize", "--config", "absent.json", "--out", "b"]);
    assert_eq!(missing.status.code(), Some(2));
    let cfg = write_config(tmp.path(), "bad.json", r#"{"model": {"kind": "squeezed_single_photon", "lambda": -2}}"#);
    let bad_model = quadwit(tmp.path(), &["optimize", "--config", &cfg, "--out", "c"]);
    assert_eq!(bad_model.status.code(), Some(2));
    let threads = quadwit(tmp.path(), &["optimize", "--threads", "0", "--out", "d"]);
    assert_eq!(threads.status.code(), Some(2));
    let unknown = quadwit(tmp.path(), &["reconstruct"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn non_convergence_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"params": {"n_min": 16, "n_max": 16, "max_iterations": 1}}"#);
    let out = quadwit(tmp.path(), &["optimize", "--config", &cfg, "--out", "run"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("did not converge"));
    assert!(!tmp.path().join("run/manifest.json").exists());
}

#[test]
fn compare_favours_the_elementary_test() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"params": {"M_values": [100000, 1000000, 10000000]}}"#);
    let out = quadwit(tmp.path(), &["compare", "--config", &cfg, "--out", "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (header, rows) = read_csv(&tmp.path().join("run/compare.csv"));
    assert_eq!(header[..2], ["M", "R"]);
    assert!(rows.iter().all(|r| r[1] > 1.0));
    assert!(rows.windows(2).all(|w| w[1][1] >= w[0][1]));
    let records = read_json(&tmp.path().join("run/compare.json"));
    assert!(records.as_array().unwrap().iter().all(|r| r["valid"] == true));
}

#[test]
fn elementary_evaluates_stored_datasets() {
    let tmp = tempfile::tempdir().unwrap();
    let sample = write_config(tmp.path(), "s.json", r#"{"params": {"m": 5, "per_cut": 100000}, "seed": 4}"#);
    assert!(quadwit(tmp.path(), &["sample", "--config", &sample, "--out", "data"]).status.success());
    let cfg = write_config(
        tmp.path(),
        "e.json",
        r#"{"params": {"N": 4, "dataset": {"csv": "data/dataset.csv", "manifest": "data/dataset.json"}}}"#,
    );
    let out = quadwit(tmp.path(), &["elementary", "--config", &cfg, "--out", "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = read_json(&tmp.path().join("run/elementary.json"));
    assert!(report["sampled"]["mean"].as_f64().unwrap() < 0.0);
    assert_eq!(report["sampled"]["M"], 500_000);
    assert!(report["significance"].as_f64().unwrap() > 3.0);
    let (header, rows) = read_csv(&tmp.path().join("run/profile_r.csv"));
    assert_eq!(header, ["r", "F", "W"]);
    assert_eq!(rows[0][1], 1.0);
    assert!(rows[0][2] < 0.0);
    assert!(!tmp.path().join("run/dataset.csv").exists());

    let mismatch = write_config(
        tmp.path(),
        "m.json",
        r#"{"params": {"N": 6, "dataset": {"csv": "data/dataset.csv", "manifest": "data/dataset.json"}}}"#,
    );
    let out = quadwit(tmp.path(), &["elementary", "--config", &mismatch, "--out", "bad"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn squeezed_elementary_run_keeps_the_figure_of_merit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"model": {"kind": "squeezed_single_photon", "lambda": 3.0}, "params": {"N": 8, "M": 90000}}"#,
    );
    let out = quadwit(tmp.path(), &["elementary", "--config", &cfg, "--seed", "2", "--out", "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = read_json(&tmp.path().join("run/elementary.json"));
    let g = report["analytic"]["G"].as_f64().unwrap();
    assert!((g + 0.463_455).abs() < 1e-5, "{g}");
}

#[test]
fn backprojection_results_do_not_depend_on_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"params": {"a": 0.5, "epsilon": 1e-6, "M": 200000}}"#);
    for (dir, threads) in [("one", "1"), ("four", "4")] {
        let out = quadwit(tmp.path(), &["backproject", "--config", &cfg, "--seed", "8", "--threads", threads, "--out", dir]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let one = std::fs::read(tmp.path().join("one/backproject.json")).unwrap();
    assert_eq!(one, std::fs::read(tmp.path().join("four/backproject.json")).unwrap());
    let report = read_json(&tmp.path().join("one/backproject.json"));
    for key in ["mean", "variance", "delta_bound", "ratio", "numerical_error"] {
        assert!(report["sampled"][key].is_number(), "{key}");
    }
    assert!(report["sampled"]["mean"].as_f64().unwrap() < 0.0);
}

#[test]
fn analytic_backprojection_needs_no_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"params": {"mode": "analytic"}}"#);
    let out = quadwit(tmp.path(), &["backproject", "--config", &cfg, "--out", "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = read_json(&tmp.path().join("run/backproject.json"));
    assert!(report.get("sampled").is_none());
    assert!(report["analytic"]["ratio"].as_f64().unwrap() < -100.0);
    let (header, _) = read_csv(&tmp.path().join("run/kernel.csv"));
    assert_eq!(header, ["s", "omega"]);
}

#[test]
fn finite_cut_tables_and_allocations() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"params": {"lambdas": [5.0], "m_values": [4, 8, 12], "M": 12000}}"#);
    let out = quadwit(tmp.path(), &["finite-cuts", "--config", &cfg, "--out", "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (header, rows) = read_csv(&tmp.path().join("run/finite_cuts.csv"));
    assert_eq!(header, ["lambda", "m", "E"]);
    assert!(rows[2][2] <= 0.03);
    assert!(rows.windows(2).all(|w| w[1][2] < w[0][2]));
    let plans = read_json(&tmp.path().join("run/plans.json"));
    for plan in plans.as_array().unwrap() {
        let counts: u64 = plan["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
        assert_eq!(counts, 12_000);
        assert!(plan["cuts"].is_array() && plan["widths"].is_array());
    }
}

#[test]
fn verify_prints_one_line_per_criterion() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"params": {"criteria": [3, 5, 11]}}"#);
    let out = quadwit(tmp.path(), &["verify", "--config", &cfg, "--seed", "1", "--out", "ok"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.contains(": PASS")).count(), 3);
    let reports = read_json(&tmp.path().join("ok/verify.json"));
    assert_eq!(reports.as_array().unwrap().len(), 3);

    let cfg = write_config(tmp.path(), "f.json", r#"{"params": {"criteria": [2]}}"#);
    let out = quadwit(tmp.path(), &["verify", "--config", &cfg, "--seed", "1", "--out", "fail"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("criterion  2 (saturation): FAIL"));
    assert!(tmp.path().join("fail/manifest.json").exists());
}
