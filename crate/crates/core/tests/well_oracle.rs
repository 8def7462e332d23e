//! Cross-checks the Rust well model against values frozen from the
//! independent Python transcription in `tests/oracle/well_oracle.py`.

use pinc::integrator::step_with;
use pinc::well::{steady_state_from, ControlInput, WellParameters, WellState};
use serde_json::Value;

mod common;

fn load(name: &str) -> Value {
    let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn triple(v: &Value) -> [f64; 3] {
    let a = v.as_array().unwrap();
    [a[0].as_f64().unwrap(), a[1].as_f64().unwrap(), a[2].as_f64().unwrap()]
}

#[test]
fn algebraics_match_transcription_at_random_points() {
    let (points, worst) = common::oracle_agreement(1e-9).unwrap();
    assert_eq!(points, 3000);
    assert!(worst <= 1e-9);
}

#[test]
fn integrator_is_fourth_order() {
    for order in common::rk4_orders() {
        assert!(order >= 3.8, "{order}");
    }
}

#[test]
fn long_rollout_and_steady_state_agree_with_reference() {
    let r = load("rollout_oracle.json");
    let p = WellParameters::well(1).unwrap();
    let u = ControlInput::new(0.5, 0.5);
    let from = WellState::from_array(triple(&r["steady_from"]));
    let reference = triple(&r["steady_1e5s"]);
    let rolled = step_with(&p, &from, u, 1e5, 1.0).unwrap().to_array();
    for i in 0..3 {
        assert!((rolled[i] - reference[i]).abs() <= 1e-9 * reference[i], "{rolled:?}");
    }
    let steady = steady_state_from(&p, u, &from).unwrap().to_array();
    for i in 0..3 {
        assert!((steady[i] - reference[i]).abs() < 1e-6, "{steady:?} vs {reference:?}");
    }
}

#[test]
fn one_minute_step_matches_fine_step_reference() {
    let r = load("rollout_oracle.json");
    let p = WellParameters::well(1).unwrap();
    let x = WellState::from_array(triple(&r["step_from"]));
    let fine = triple(&r["step_60s_h001"]);
    let got = pinc::integrator::step_60s(&p, &x, ControlInput::new(0.5, 0.5)).unwrap().to_array();
    for i in 0..3 {
        assert!((got[i] - fine[i]).abs() <= 1e-5 * fine[i].abs(), "{got:?} vs {fine:?}");
    }
}
