use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pinc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pinc")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = pinc(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn manifest(dir: &Path) -> toml::Table {
    fs::read_to_string(dir.join("manifest.toml")).unwrap().parse().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_sampled_trajectory_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    ok(&["simulate", "--u", "0.5,0.7", "--t-end", "600", "--sample-dt", "60", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 12);
    assert!(lines[0].starts_with("t,m_G_an,m_G_tb,m_L_tb,u1,u2"));
    assert!(lines[0].contains("P_bh"));
    let m = manifest(&out);
    assert_eq!(m["run"]["command"].as_str(), Some("simulate"));
    assert_eq!(m["results"]["samples"].as_integer(), Some(11));
    assert_eq!(m["config"]["u"].as_array().unwrap().len(), 2);
}

#[test]
fn infeasible_initial_state_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pinc(&["simulate", "--x0", "-1,200,8000", "--out", s(&tmp.path().join("bad"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "u = [0.4, 0.8]\nt_end = 300.0\nsample_dt = 60.0\n").unwrap();
    let out = tmp.path().join("sim");
    ok(&["simulate", "--config", s(&cfg), "--t-end", "120", "--out", s(&out)]);
    let m = manifest(&out);
    assert_eq!(m["config"]["t_end"].as_float(), Some(120.0));
    assert_eq!(m["config"]["u"].as_array().unwrap()[0].as_float(), Some(0.4));
    assert_eq!(fs::read_to_string(out.join("trajectory.csv")).unwrap().lines().count(), 4);
}

#[test]
fn data_training_and_prediction_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen-data", "--Nt", "40", "--Nf", "150", "--n-val", "20", "--rollouts", "3", "--out", s(&data)]);
    for f in ["init.csv", "collocation.csv", "validation.csv", "scaler.toml"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let rate = manifest(&data)["results"]["rejection_rate"].as_float().unwrap();
    assert!((0.0..1.0).contains(&rate));

    let model = tmp.path().join("model");
    let train = ["--data", s(&data), "--layers", "2", "--neurons", "5", "--adam-epochs", "10"];
    ok(&[&["train-pinc"][..], &train, &["--lbfgs-iters", "5", "--out", s(&model)]].concat());
    for f in ["model_best.json", "model_last.json", "metrics.csv"] {
        assert!(model.join(f).exists(), "{f}");
    }
    let resumed = tmp.path().join("resumed");
    let best = model.join("model_best.json");
    ok(&[&["train-pinc"][..], &train, &["--lbfgs-iters", "0", "--resume", s(&best), "--out", s(&resumed)]].concat());

    let alg = tmp.path().join("alg");
    ok(&["train-algnet", "--model", s(&best), "--samples", "300", "--lbfgs-iters", "30", "--layers", "2", "--neurons", "8", "--out", s(&alg)]);
    let algnet = alg.join("algnet.json");
    assert!(algnet.exists());

    let pred = tmp.path().join("pred");
    ok(&["predict", "--model", s(&best), "--algnet", s(&algnet), "--sims", "2", "--segments", "4", "--out", s(&pred)]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(pred.join("summary.json")).unwrap()).unwrap();
    assert!(summary["mean_state_iae"].as_f64().unwrap() >= 0.0);
    assert_eq!(fs::read_to_string(pred.join("prediction_runs.csv")).unwrap().lines().count(), 3);
    assert_eq!(fs::read_to_string(pred.join("trajectory.csv")).unwrap().lines().count(), 5);

    let empty = tmp.path().join("empty");
    let out = ok(&["predict", "--model", s(&best), "--algnet", s(&algnet), "--sims", "0", "--out", s(&empty)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));

    let mpc = tmp.path().join("mpc");
    let model_args = ["--model", s(&best), "--algnet", s(&algnet)];
    ok(&[&["mpc", "--controller", "pinc", "--steps", "1", "--horizon", "6", "--control-horizon", "4"][..], &model_args, &["--out", s(&mpc)]].concat());
    assert!(mpc.join("closed_loop_pinc.csv").exists());
}

#[test]
fn missing_model_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pinc(&["predict", "--out", s(&tmp.path().join("p"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));
}

#[test]
fn noisy_slmpc_repetitions_from_a_scenario_file() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = tmp.path().join("scenario.toml");
    fs::write(
        &scenario,
        "well = 1\nsteps = 4\ninitial_u = [0.5, 0.5]\nreference = [[0.0, 95.0], [120.0, 96.0]]\nhorizon = 10\ncontrol_horizon = 8\n",
    )
    .unwrap();
    let out = tmp.path().join("mpc");
    ok(&["mpc", "--config", s(&scenario), "--controller", "slmpc", "--noise", "0.05", "--reps", "3", "--out", s(&out)]);
    let iae = fs::read_to_string(out.join("iae.csv")).unwrap();
    assert_eq!(iae.lines().count(), 4);
    let loop_csv = fs::read_to_string(out.join("closed_loop_slmpc.csv")).unwrap();
    assert!(loop_csv.starts_with("t,m_G_an,m_G_tb,m_L_tb,u1,u2,P_bh,P_bh_ref,solver_iters,solve_ms"));
    assert_eq!(loop_csv.lines().count(), 6);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["slmpc"]["reps"].as_u64(), Some(3));
    assert!(summary["slmpc"]["iae_std_bar"].as_f64().unwrap() > 0.0);
}

#[test]
fn reference_flag_rejects_malformed_points() {
    let out = pinc(&["mpc", "--controller", "slmpc", "--reference", "0-95"]);
    assert!(!out.status.success());
}

#[test]
fn ablation_and_sweep_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen-data", "--Nt", "30", "--Nf", "100", "--n-val", "10", "--rollouts", "2", "--out", s(&data)]);
    let abl = tmp.path().join("abl");
    ok(&["ablate", "--smoke", "true", "--data", s(&data), "--layers", "2", "--neurons", "4", "--out", s(&abl)]);
    let grads = fs::read_to_string(abl.join("gradients.csv")).unwrap();
    assert!(grads.lines().any(|l| l.starts_with("skip,hidden_2")));
    assert!(grads.lines().any(|l| l.starts_with("dense,hidden_2")));
    assert_eq!(fs::read_to_string(abl.join("runs.csv")).unwrap().lines().count(), 3);
    assert!(abl.join("curves/skip_0.csv").exists() && abl.join("curves/dense_0.csv").exists());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(abl.join("summary.json")).unwrap()).unwrap();
    assert!(summary["last_hidden_gradient_ratio"].as_f64().unwrap() > 0.0);

    let sweep = tmp.path().join("sweep");
    ok(&["sweep", "--data", s(&data), "--layers", "1,2", "--neurons", "3,4", "--adam-epochs", "3", "--lbfgs-iters", "2", "--out", s(&sweep)]);
    assert_eq!(fs::read_to_string(sweep.join("sweep.csv")).unwrap().lines().count(), 5);
    assert!(manifest(&sweep)["results"].get("best_layers").is_some());
}
