use std::path::Path;
use std::process::{Command, Output};

fn qfi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfi"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn simulate_calibrate_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = qfi(
        d,
        &["--seed", "5", "--out-dir", ".", "simulate", "--n", "2", "--p-meas", "0.02", "--iterations", "10",
          "--unitaries", "30", "--shots", "300", "--prefix", "r"],
    );
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    let cal = qfi(d, &["calibrate", "--records", "r.cal.jsonl", "--pairs", "0-1", "--out", "cal.json"]);
    assert!(cal.status.success(), "{}", String::from_utf8_lossy(&cal.stderr));
    let est = qfi(d, &["estimate", "--records", "r.est.jsonl", "--calibration", "cal.json", "--out", "est.json"]);
    assert!(est.status.success(), "{}", String::from_utf8_lossy(&est.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("est.json")).unwrap()).unwrap();
    assert_eq!(v["budget"]["n_unitaries"], 300);
    assert_eq!(v["robust"]["bounds"].as_array().unwrap().len(), 3);
    assert!(v["raw"]["bounds"][2]["estimate"]["value"].is_number());
}

#[test]
fn invalid_input_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(qfi(d, &["nonsense"]).status.code(), Some(2));
    assert_eq!(qfi(d, &["--seed", "1", "ghz"]).status.code(), Some(2));
    std::fs::write(d.join("bad.json"), "{\"seed\": 1, \"experiment\": \"ghz\"}").unwrap();
    assert_eq!(qfi(d, &["--config", "bad.json", "ghz"]).status.code(), Some(2));
}

#[test]
fn ghz_experiment_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"seed": 3, "experiment": "ghz", "n_values": [2],
            "plan": {"n_iterations": 10, "unitaries_per_iteration": 20, "shots_per_unitary": 200}}"#,
    )
    .unwrap();
    let out = qfi(d, &["--config", "cfg.json", "--out-dir", "o", "--threads", "1", "ghz"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<_> = std::fs::read_dir(d.join("o")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 3);
    assert_eq!(qfi(d, &["--config", "cfg.json", "tfim"]).status.code(), Some(2));
}

#[test]
fn calibration_guard_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = qfi(
        d,
        &["--seed", "2", "--out-dir", ".", "simulate", "--n", "1", "--p-meas", "0.45", "--iterations", "10",
          "--unitaries", "20", "--shots", "200", "--prefix", "r"],
    );
    assert!(sim.status.success());
    assert!(qfi(d, &["calibrate", "--records", "r.cal.jsonl", "--out", "cal.json"]).status.success());
    let est = qfi(d, &["estimate", "--records", "r.est.jsonl", "--calibration", "cal.json", "--out", "e.json"]);
    assert_eq!(est.status.code(), Some(3), "{}", String::from_utf8_lossy(&est.stderr));
}
