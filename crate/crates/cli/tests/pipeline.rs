//! End-to-end behavior of the pipeline commands: diagnostics, artifact
//! schemas, report modes, and byte-level reproducibility.

use std::fs;
use std::path::PathBuf;

use adpmpc_cli::commands::{
    cmd_certify, cmd_report, cmd_simulate, cmd_train, Outcome, TerminalMode,
};
use adpmpc_cli::config::load_config;
use adpmpc_cli::manifest::RunManifest;
use nalgebra::DVector;
use tempfile::TempDir;

fn write_config(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path
}

const TOY_CONFIG: &str = r#"{
  "system": {"name": "toy1d", "a1": 0.5, "b1": 1.0},
  "training_box": {"lower": [-0.5], "upper": [0.5]},
  "basis_degrees": [2],
  "avi": {"samples": 100, "test_samples": 400, "weight_tolerance": 1e-9},
  "seed": 7,
  "beta": 0.15,
  "horizon": 3,
  "steps": 50,
  "stop_tol": 1e-4,
  "x0": [[0.3]],
  "output_dir": "unused"
}"#;

#[test]
fn missing_training_box_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let body = r#"{
      "system": {"name": "toy1d"},
      "beta": 0.15,
      "output_dir": "out"
    }"#;
    let path = write_config(&tmp, "bad.json", body);
    let err = load_config(&path, None).unwrap_err().to_string();
    assert!(
        err.contains("training_box") && err.contains("required"),
        "diagnostic must name the missing domain field, got: {err}"
    );
}

#[test]
fn unknown_system_and_unknown_field_are_diagnosed() {
    let tmp = TempDir::new().unwrap();
    let path = write_config(
        &tmp,
        "unknown.json",
        r#"{"system": {"name": "pendulum"}, "training_box": {"lower": [-1], "upper": [1]}, "beta": 1.0, "output_dir": "out"}"#,
    );
    let err = load_config(&path, None).unwrap_err().to_string();
    assert!(err.contains("pendulum"), "got: {err}");

    let path = write_config(
        &tmp,
        "typo.json",
        r#"{"system": {"name": "toy1d"}, "training_bx": {"lower": [-1], "upper": [1]}, "beta": 1.0, "output_dir": "out"}"#,
    );
    let err = format!("{:#}", load_config(&path, None).unwrap_err());
    assert!(err.contains("training_bx"), "typo must be named, got: {err}");
}

#[test]
fn report_on_empty_directory_says_no_artifacts() {
    let tmp = TempDir::new().unwrap();
    let err = cmd_report(tmp.path()).unwrap_err().to_string();
    assert!(err.contains("nothing to report"), "got: {err}");
}

#[test]
fn report_lists_exactly_the_missing_files() {
    let tmp = TempDir::new().unwrap();
    let config_path = write_config(&tmp, "toy.json", TOY_CONFIG);
    let out = tmp.path().join("out");
    let cfg = load_config(&config_path, Some(&out)).unwrap();
    cmd_train(&cfg).unwrap();
    fs::remove_file(out.join("errors.csv")).unwrap();
    let err = cmd_report(&out).unwrap_err().to_string();
    assert!(err.contains("1 artifact(s) missing"), "got: {err}");
}

#[test]
fn certify_requires_training_artifacts() {
    let tmp = TempDir::new().unwrap();
    let config_path = write_config(&tmp, "toy.json", TOY_CONFIG);
    let out = tmp.path().join("out");
    let cfg = load_config(&config_path, Some(&out)).unwrap();
    let err = cmd_certify(&cfg).unwrap_err().to_string();
    assert!(err.contains("no manifest"), "got: {err}");
}

#[test]
fn config_change_invalidates_artifacts() {
    let tmp = TempDir::new().unwrap();
    let config_path = write_config(&tmp, "toy.json", TOY_CONFIG);
    let out = tmp.path().join("out");
    let cfg = load_config(&config_path, Some(&out)).unwrap();
    cmd_train(&cfg).unwrap();
    let changed = TOY_CONFIG.replace("\"beta\": 0.15", "\"beta\": 0.2");
    let config_path2 = write_config(&tmp, "toy2.json", &changed);
    let cfg2 = load_config(&config_path2, Some(&out)).unwrap();
    let err = cmd_certify(&cfg2).unwrap_err().to_string();
    assert!(err.contains("hash mismatch"), "got: {err}");
}

#[test]
fn simulate_skips_infeasible_start_and_stops_at_origin() {
    let tmp = TempDir::new().unwrap();
    let config_path = write_config(&tmp, "toy.json", TOY_CONFIG);
    let out = tmp.path().join("out");
    let cfg = load_config(&config_path, Some(&out)).unwrap();
    cmd_train(&cfg).unwrap();
    cmd_certify(&cfg).unwrap();

    // Every start outside the state box: the command reports an error.
    let outside = [DVector::from_vec(vec![5.0])];
    assert!(cmd_simulate(&cfg, &outside, TerminalMode::Avi).is_err());

    // x0 = 0: immediate stop with zero cost.
    let origin = [DVector::from_vec(vec![0.0])];
    cmd_simulate(&cfg, &origin, TerminalMode::Avi).unwrap();
    let closedloop: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("closedloop.json")).unwrap()).unwrap();
    let run = &closedloop["runs"][0];
    assert_eq!(run["steps"].as_i64(), Some(0));
    assert_eq!(run["J"].as_f64(), Some(0.0));
}

#[test]
fn trajectory_csv_schema_and_closedloop_merge() {
    let tmp = TempDir::new().unwrap();
    let config_path = write_config(&tmp, "toy.json", TOY_CONFIG);
    let out = tmp.path().join("out");
    let cfg = load_config(&config_path, Some(&out)).unwrap();
    cmd_train(&cfg).unwrap();
    cmd_certify(&cfg).unwrap();
    assert_eq!(cmd_simulate(&cfg, &[], TerminalMode::Avi).unwrap(), Outcome::AllPassed);
    assert_eq!(cmd_simulate(&cfg, &[], TerminalMode::Lqr).unwrap(), Outcome::AllPassed);

    let text = fs::read_to_string(out.join("trajectory_avi_0.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "k,x1,u1,l,V_N,alpha");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), 6);
    assert_eq!(first[0], "0");
    // Terminal row: state and value present, input/cost/alpha empty.
    let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
    assert_eq!(last.len(), 6);
    assert!(!last[1].is_empty());
    assert!(last[2].is_empty() && last[3].is_empty());
    assert!(last[5].is_empty());

    // Both terminal modes coexist in closedloop.json.
    let closedloop: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("closedloop.json")).unwrap()).unwrap();
    let tags: Vec<&str> = closedloop["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["tag"].as_str().unwrap())
        .collect();
    assert_eq!(tags, vec!["avi_0", "lqr_0"]);

    // The manifest records the starts that were simulated.
    let manifest = RunManifest::load(&out).unwrap().unwrap();
    assert_eq!(manifest.x0_list, vec![vec![0.3]]);

    // Report over the complete run passes every gate on this benchmark.
    assert_eq!(cmd_report(&out).unwrap(), Outcome::AllPassed);
}

#[test]
fn full_pipeline_artifacts_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    let config_path = write_config(&tmp, "toy.json", TOY_CONFIG);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let cfg = load_config(&config_path, Some(out)).unwrap();
        cmd_train(&cfg).unwrap();
        cmd_certify(&cfg).unwrap();
        cmd_simulate(&cfg, &[], TerminalMode::Avi).unwrap();
        cmd_simulate(&cfg, &[], TerminalMode::Lqr).unwrap();
    }
    for name in [
        "weights.csv",
        "errors.csv",
        "theorem1.csv",
        "train.json",
        "certificates.json",
        "controllability.csv",
        "trajectory_avi_0.csv",
        "trajectory_lqr_0.csv",
        "closedloop.json",
        "manifest.json",
    ] {
        let a = fs::read(out_a.join(name)).unwrap();
        let b = fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn bundled_configs_parse_and_linear_benchmark_is_exact() {
    let configs = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = TempDir::new().unwrap();
    for name in ["rendezvous.json", "rendezvous_wide.json", "toy1d.json", "linear.json"] {
        load_config(&configs.join(name), Some(&tmp.path().join("probe"))).unwrap();
    }

    // The linear benchmark is exactly representable: c collapses to
    // rounding noise.
    let out = tmp.path().join("linear");
    let cfg = load_config(&configs.join("linear.json"), Some(&out)).unwrap();
    assert_eq!(cmd_train(&cfg).unwrap(), Outcome::AllPassed);
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("train.json")).unwrap()).unwrap();
    let c = record["c"].as_f64().unwrap();
    assert!(c < 1e-6, "linear benchmark must report c < 1e-6, got {c}");
}

#[test]
fn gates_are_recorded_exactly_once_each() {
    let tmp = TempDir::new().unwrap();
    let config_path = write_config(&tmp, "toy.json", TOY_CONFIG);
    let out = tmp.path().join("out");
    let cfg = load_config(&config_path, Some(&out)).unwrap();
    cmd_train(&cfg).unwrap();
    let manifest = RunManifest::load(&out).unwrap().unwrap();
    assert!(manifest.gates.error_margin.evaluated);
    assert!(manifest.gates.input_constraints.evaluated);
    assert!(manifest.gates.stability_margin.evaluated);
    // The horizon gate belongs to certification and must not be claimed yet.
    assert!(!manifest.gates.horizon.evaluated);
    cmd_certify(&cfg).unwrap();
    let manifest = RunManifest::load(&out).unwrap().unwrap();
    assert!(manifest.gates.horizon.evaluated);
}
