use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use koopman_enmpc::envsim::PriceSeries;
use koopman_enmpc::koopman::load_model;
use koopman_enmpc_cli::EvalReport;

const SMALL: &str = r#"
[sysid]
max_iterations = 1
rollout_steps = 48

[sysid.random]
n_trajectories = 4

[sysid.fit]
epochs = 2

[ppo]
n_actors = 2
steps_per_actor = 64
minibatch_size = 64
epochs = 1
total_steps = 128

[train]
seeds = [1]
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_koopman-enmpc"))
}

fn run(args: &[&str], extra: &[&Path]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    for p in extra {
        cmd.arg(p);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn column(text: &str, name: &str) -> Vec<f64> {
    let header: Vec<&str> = text.lines().find(|l| !l.starts_with('#')).unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    data_rows(text).iter().map(|r| r[idx].parse().unwrap()).collect()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&run(&[], &[])), 1);
    assert_eq!(code(&run(&["frobnicate"], &[])), 1);
    assert_eq!(code(&run(&["train"], &[])), 1);
    assert_eq!(code(&run(&["eval", "--seed", "abc"], &[])), 1);
    assert_eq!(code(&run(&["eval", "--mode", "koopman-si"], &[])), 1);
    assert_eq!(code(&run(&["--help"], &[])), 0);
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&run(&["sysid", "--config"], &[&missing])), 2);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "unknown_key = 3\n").unwrap();
    assert_eq!(code(&run(&["sysid", "--config"], &[&bad])), 2);
    let garbage = dir.path().join("prices.csv");
    fs::write(&garbage, "timestamp,price\n2023-01-01 00:00,1\n2023-01-01 02:00,2\n").unwrap();
    assert_eq!(code(&run(&["prices", "validate"], &[&garbage])), 2);
    let model = dir.path().join("nope.json");
    let out = dir.path().join("o");
    assert_eq!(code(&run(&["eval", "--mode", "koopman-si", "--model"], &[&model, Path::new("--out"), &out])), 2);
}

#[test]
fn generated_prices_validate_and_match_the_reference_mean() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    let o = run(&["prices", "generate", "--seed", "4", "--out"], &[&out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let path = out.join("prices.csv");
    assert_eq!(code(&run(&["prices", "validate"], &[&path])), 0);
    let generated = PriceSeries::load(&path).unwrap();
    let reference = PriceSeries::synthetic_year(2023, 1);
    assert_eq!(generated.len(), reference.len());
    assert!((generated.mean() - reference.mean()).abs() <= 0.05 * reference.mean().abs());

    let constant = dir.path().join("constant.csv");
    let flat = PriceSeries::new(reference.start, vec![42.5; 72]).unwrap();
    flat.save(&constant, None).unwrap();
    let out2 = dir.path().join("flat");
    let o = run(&["prices", "generate", "--length", "30", "--reference"], &[&constant, Path::new("--out"), &out2]);
    assert_eq!(code(&o), 0);
    let g = PriceSeries::load(out2.join("prices.csv")).unwrap();
    assert_eq!(g.len(), 30);
    assert!(g.prices.iter().all(|&p| p == 42.5));
}

#[test]
fn small_pipeline_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("run");

    let o = run(&["sysid", "--config"], &[&config, Path::new("--out"), &out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let history = fs::read_to_string(out.join("si_history.csv")).unwrap();
    assert!(history.starts_with("# config_hash: "));
    assert_eq!(data_rows(&history).len(), 1);
    let model = out.join("controller_model.json");
    load_model(&model).unwrap();
    load_model(out.join("si_model.json")).unwrap();

    let rerun = dir.path().join("rerun");
    assert_eq!(code(&run(&["sysid", "--config"], &[&config, Path::new("--out"), &rerun])), 0);
    assert_eq!(history, fs::read_to_string(rerun.join("si_history.csv")).unwrap());

    let o = run(&["train", "--config"], &[&config, Path::new("--out"), &out, Path::new("--model"), &model]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let curves: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("curve_seed"))
        .collect();
    assert_eq!(curves.len(), 1);
    let curve = fs::read_to_string(out.join("curve_seed1.csv")).unwrap();
    let rewards = column(&curve, "eval_reward");
    assert!(!rewards.is_empty());
    let summary = fs::read_to_string(out.join("train_summary.csv")).unwrap();
    let best = column(&summary, "best_reward")[0];
    assert_eq!(best, rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let best_model = out.join("best_model.json");
    load_model(&best_model).unwrap();

    let o = run(&["eval", "--mode", "steady", "--config"], &[&config, Path::new("--out"), &out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep: EvalReport = serde_json::from_str(&fs::read_to_string(out.join("metrics_steady.json")).unwrap()).unwrap();
    assert_eq!(rep.cost_savings, 0.0);
    assert_eq!(rep.violation_fraction, 0.0);
    let traj = fs::read_to_string(out.join("trajectory_steady.csv")).unwrap();
    let rows = data_rows(&traj);
    assert_eq!(rows.len(), rep.steps);
    let mean_reward = column(&traj, "reward").iter().sum::<f64>() / rows.len() as f64;
    assert!((mean_reward - rep.average_reward).abs() < 1e-12);

    let o = run(&["eval", "--mode", "koopman-ppo", "--config"], &[&config, Path::new("--out"), &out, Path::new("--model"), &best_model]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep: EvalReport =
        serde_json::from_str(&fs::read_to_string(out.join("metrics_koopman-ppo.json")).unwrap()).unwrap();
    let traj = fs::read_to_string(out.join("trajectory_koopman-ppo.csv")).unwrap();
    let viol: Vec<Vec<f64>> = ["viol_i_prod", "viol_dt_rc", "viol_n_r", "viol_n_s"]
        .iter()
        .map(|c| column(&traj, c))
        .collect();
    let violating = (0..rep.steps).filter(|&t| viol.iter().any(|v| v[t] > 0.0)).count();
    assert!((violating as f64 / rep.steps as f64 - rep.violation_fraction).abs() < 1e-12);
    assert!(rep.storage_residual <= 1e-12);
}
