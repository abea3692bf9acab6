//! End-to-end checks on simulated records: persistence, determinism and
//! agreement between robust estimates and exact values.

use qfi_core::calibration::{CalibrationOptions, CalibrationTable, Method, PairSelection};
use qfi_core::harness::{estimate_from_records, run_pipeline, simulate_records, EstimatorSettings, ExactValues, RunConfig};
use qfi_core::noise::NoiseModel;
use qfi_core::sampling::{read_records, write_records, ExperimentPlan, PreparedState};
use qfi_core::shadows::{build_batch_shadows, build_raw_batch_shadows};
use qfi_core::states::ghz;
use qfi_core::Error;

fn settings() -> EstimatorSettings {
    EstimatorSettings {
        n_batches: 10,
        orders: vec![0, 1, 2],
        method: Method::Enhanced,
        purity: true,
    }
}

#[test]
fn records_round_trip_through_jsonl() {
    let psi = ghz(2).unwrap();
    let plan = ExperimentPlan::new(2, 2, 5, 100, 9).unwrap();
    let recs = simulate_records(&PreparedState::pure(&psi), &NoiseModel::readout(2, 0.05), &plan).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("est.jsonl");
    write_records(&path, &recs.estimation).unwrap();
    assert_eq!(read_records(&path).unwrap(), recs.estimation);
}

#[test]
fn malformed_record_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"iter\": 0}\n").unwrap();
    assert!(matches!(read_records(&path), Err(Error::Record(_))));
}

#[test]
fn simulation_is_independent_of_thread_count() {
    let psi = ghz(3).unwrap();
    let plan = ExperimentPlan::new(3, 10, 8, 200, 77).unwrap();
    let model = NoiseModel::readout(3, 0.03);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let recs = simulate_records(&PreparedState::pure(&psi), &model, &plan).unwrap();
            let table = CalibrationTable::from_records(&recs.calibration, &CalibrationOptions::default()).unwrap();
            let est = estimate_from_records(&recs.estimation, Some(&table), &settings()).unwrap();
            (recs.estimation, est)
        })
    };
    let (r1, e1) = run(1);
    let (r3, e3) = run(3);
    assert_eq!(r1, r3);
    assert_eq!(serde_json::to_string(&e1).unwrap(), serde_json::to_string(&e3).unwrap());
}

#[test]
fn ideal_table_reproduces_raw_shadows() {
    let psi = ghz(2).unwrap();
    let plan = ExperimentPlan::new(2, 10, 4, 100, 4).unwrap();
    let recs = simulate_records(&PreparedState::pure(&psi), &NoiseModel::readout(2, 0.0), &plan).unwrap();
    let ideal = CalibrationTable::ideal(2, 0..10);
    let robust = build_batch_shadows(&recs.estimation, &ideal, 10).unwrap();
    let raw = build_raw_batch_shadows(&recs.estimation, 10).unwrap();
    for (x, y) in robust.iter().zip(&raw) {
        assert!(x.matrix.max_abs_diff(&y.matrix) < 1e-12);
    }
}

#[test]
fn robust_estimates_track_exact_values_under_readout_noise() {
    let psi = ghz(3).unwrap();
    let state = PreparedState::pure(&psi);
    let plan = ExperimentPlan::new(3, 10, 200, 1000, 2024).unwrap();
    let out = run_pipeline(&state, &NoiseModel::readout(3, 0.05), &plan, &settings()).unwrap();
    let exact = ExactValues::of(&psi.to_density(), 2).unwrap();
    for order in 0..=2 {
        let est = out.robust.get(order).unwrap();
        let z = (est.value - exact.bounds[order]) / est.stderr;
        assert!(z.abs() < 4.0, "order {order}: {} +- {} vs {}", est.value, est.stderr, exact.bounds[order]);
    }
    let p = out.robust.purity.as_ref().unwrap();
    assert!(((p.value - 1.0) / p.stderr).abs() < 4.0);
    for g in &out.mean_g {
        assert!((g - 0.95).abs() < 0.01, "mean G {g}");
    }
    let raw2 = out.raw.get(2).unwrap().value;
    assert!(raw2 < out.robust.get(2).unwrap().value);
}

#[test]
fn pair_calibration_without_crosstalk_is_consistent() {
    let plan = ExperimentPlan::new(3, 2, 200, 1000, 11).unwrap();
    let psi = ghz(3).unwrap();
    let recs = simulate_records(&PreparedState::pure(&psi), &NoiseModel::readout(3, 0.02), &plan).unwrap();
    let table = CalibrationTable::from_records(
        &recs.calibration,
        &CalibrationOptions {
            method: Method::Enhanced,
            pairs: PairSelection::All,
        },
    )
    .unwrap();
    let it = table.get(0).unwrap();
    assert_eq!(it.pairs.len(), 3);
    for p in &it.pairs {
        assert!(p.r_tilde().abs() < 0.02, "{:?}", p);
    }
}

#[test]
fn indivisible_batches_are_rejected() {
    let plan = ExperimentPlan::new(2, 3, 4, 50, 1).unwrap();
    let psi = ghz(2).unwrap();
    let recs = simulate_records(&PreparedState::pure(&psi), &NoiseModel::readout(2, 0.0), &plan).unwrap();
    assert!(matches!(build_raw_batch_shadows(&recs.estimation, 10), Err(Error::InvalidPlan(_))));
}

#[test]
fn config_hash_is_stable_and_invalid_json_rejected() {
    let text = r#"{"seed": 3, "experiment": "ghz", "n_values": [2]}"#;
    let a = RunConfig::from_json(text).unwrap();
    let b = RunConfig::from_json(text).unwrap();
    assert_eq!(a.config_hash(), b.config_hash());
    assert!(a.run_id().starts_with("ghz-"));
    assert!(matches!(RunConfig::from_json("{\"seed\": 1}"), Err(Error::InvalidConfig(_))));
}
