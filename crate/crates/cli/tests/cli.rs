use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn traclin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_traclin")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_csv_and_json_next_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "rot.json", r#"{"id": "S3", "h_list": [0.1, 0.05, 0.025]}"#);
    let out = traclin(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("s3.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("h,value,strain_l2_norm,det_violation"));
    assert_eq!(csv.lines().count(), 4);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("s3.json")).unwrap()).unwrap();
    assert!(json["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn rerun_is_deterministic_and_honours_out_and_stem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s5.json",
        r#"{"id": "S5", "domain": {"cylinder": {"radius": 1.0, "height": 1.0}},
            "load": {"g": {"named": "compress_lateral"}}, "h_list": [0.1, 0.05],
            "output": {"stem": "lateral"}}"#,
    );
    let mut csvs = Vec::new();
    for k in 0..2 {
        let out_dir = dir.path().join(format!("out{k}"));
        let out = traclin(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--workers", "2"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push(fs::read_to_string(out_dir.join("lateral.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"id": "S1", "h_list": [0.1], "unknown_key": 1}"#);
    assert_eq!(traclin(&["run", "--config", &cfg]).status.code(), Some(2));
    let cfg = write(dir.path(), "neg.json", r#"{"id": "S1", "h_list": [-0.1]}"#);
    assert_eq!(traclin(&["run", "--config", &cfg]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_ne!(traclin(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn violating_load_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tension.json", r#"{"id": "S1", "h_list": [0.1], "load": {"g": {"named": "pressure", "params": [-1.0]}}}"#);
    let out = traclin(&["check-loads", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(4));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["compatibility"]["classification"], "Violating");
    assert!((doc["compatibility"]["margin"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert_eq!(traclin(&["run", "--config", &cfg]).status.code(), Some(4));
}

#[test]
fn check_loads_accepts_equilibrated_pressure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.json", r#"{"id": "S1", "h_list": [0.1], "load": {"g": {"named": "pressure", "params": [1.0]}}}"#);
    let out = traclin(&["check-loads", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["equilibrium"]["pass"], true);
    assert_eq!(doc["compatibility"]["classification"], "StrictlyCompatible");
}

#[test]
fn probe_and_flow_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = traclin(&["probe", "--mesh-n", "3", "--fields", "50", "--seed", "3", "--out", d]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("probe.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    assert!(csv.starts_with("field,korn_quotient,rigidity_quotient,perturbation"));
    assert_eq!(traclin(&["probe", "--fields", "10", "--out", d]).status.code(), Some(2));

    let cfg = write(dir.path(), "flow.json", r#"{"id": "S2", "mesh_n": 4, "h_list": [0.1, 0.05]}"#);
    let out = traclin(&["flow", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = fs::read_to_string(dir.path().join("flow.csv")).unwrap();
    assert!(csv.starts_with("h,substeps,det_residual,sup_err_v,bound_flux2,sup_err_gradv,bound_flux4"));
}
