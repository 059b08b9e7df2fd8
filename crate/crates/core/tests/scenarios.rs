use traclin::experiments::{exit_code, run_scenario, ScenarioConfig, ScenarioId};
use traclin::Error;

#[test]
fn config_rejects_unknown_keys_and_bad_h() {
    assert!(matches!(ScenarioConfig::from_json(r#"{"id": "S1", "h_list": [0.1], "extra": 0}"#), Err(Error::Config(_))));
    assert!(matches!(ScenarioConfig::from_json(r#"{"id": "S1", "h_list": [0.1, 0.2]}"#), Err(Error::Config(_))));
    assert!(matches!(ScenarioConfig::from_json(r#"{"id": "S1", "h_list": []}"#), Err(Error::Config(_))));
    let cfg = ScenarioConfig::from_json(r#"{"id": "S3", "h_list": [0.2, 0.1], "params": {"rotation_angle": 1.0}}"#).unwrap();
    assert_eq!(cfg.mesh_n, 8);
    assert_eq!(cfg.params.rotation_angle, 1.0);
}

#[test]
fn omitted_keys_fall_back_to_the_preset() {
    let cfg = ScenarioConfig::from_json(r#"{"id": "S5", "params": {"slope_tol": 0.02}}"#).unwrap();
    let preset = ScenarioConfig::preset(ScenarioId::S5);
    assert_eq!(cfg.domain, preset.domain);
    assert_eq!(cfg.load, preset.load);
    assert_eq!(cfg.h_list, preset.h_list);
    assert_eq!(cfg.params.slope_tol, 0.02);
    assert_eq!(cfg.params.substeps, preset.params.substeps);
    assert!(ScenarioConfig::from_json(r#"{"id": "S5", "params": {"nope": 1}}"#).is_err());
    assert!(ScenarioConfig::from_json(r#"{"h_list": [0.1]}"#).is_err());
}

#[test]
fn exit_codes_follow_error_class() {
    assert_eq!(exit_code(&Error::Config("x".into())), 2);
    assert_eq!(exit_code(&Error::Compatibility { margin: 1.0 }), 4);
    assert_eq!(exit_code(&Error::Equilibrium { resultant: 1.0, torque: 0.0 }), 4);
    assert_eq!(exit_code(&Error::NonConvergence("x".into())), 3);
}

#[test]
fn custom_scenario_rejects_violating_load() {
    let cfg = ScenarioConfig::from_json(
        r#"{"id": "custom", "mesh_n": 3, "h_list": [0.1], "load": {"g": {"named": "pressure", "params": [-1.0]}}}"#,
    )
    .unwrap();
    let err = run_scenario(&cfg).unwrap_err();
    assert_eq!(exit_code(&err), 4);
}

#[test]
fn recovery_sweep_is_second_order() {
    let r = run_scenario(&ScenarioConfig::preset(ScenarioId::S2)).unwrap();
    assert!(r.passed(), "{:?}", r.checks);
    let diffs: Vec<f64> = r.rows.as_array().unwrap().iter().map(|row| row["diff"].as_f64().unwrap().abs()).collect();
    assert!(diffs[3] < diffs[1] / 8.0, "{diffs:?}");
}

#[test]
fn drift_values_follow_the_load_term() {
    let r = run_scenario(&ScenarioConfig::preset(ScenarioId::S4)).unwrap();
    for name in ["values_decreasing", "gradient_exponent", "rotations", "load_signs"] {
        assert!(r.check(name).unwrap().pass, "{name}: {}", r.check(name).unwrap().detail);
    }
    // values shrink like √h, so the last row stays well above 1e-3
    let rows = r.rows.as_array().unwrap();
    let v: Vec<f64> = rows.iter().map(|row| row["value"].as_f64().unwrap()).collect();
    let h: Vec<f64> = rows.iter().map(|row| row["h"].as_f64().unwrap()).collect();
    for (vi, hi) in v.iter().zip(&h) {
        assert!((vi / hi.sqrt() - v[0] / h[0].sqrt()).abs() < 0.05 * v[0] / h[0].sqrt(), "{v:?}");
    }
    assert!(!r.check("final_value").unwrap().pass);
}

#[test]
fn pressure_gradient_minima_are_discretization_small() {
    let r = run_scenario(&ScenarioConfig::preset(ScenarioId::S6)).unwrap();
    assert!(r.check("minima_agree").unwrap().pass);
    let row = &r.rows.as_array().unwrap()[0];
    // the continuum minimum is zero; the Q1 load is not pressure-robust
    assert!(row["min_e_i"].as_f64().unwrap().abs() < 1e-7);
    assert!(row["strain_norm_e_i"].as_f64().unwrap() < 1e-3);
}

#[test]
fn reports_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::preset(ScenarioId::S3);
    cfg.mesh_n = 3;
    let r = run_scenario(&cfg).unwrap();
    let (csv, json) = r.write(dir.path(), "rot").unwrap();
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + cfg.h_list.len());
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(doc["rows"], r.rows);
    assert!(doc["wallclock"].is_array());
}
