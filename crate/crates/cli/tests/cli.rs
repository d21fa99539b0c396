use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsc")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        "method = \"gamma_reward\"\nseed = 5\nepisodes = 2\nepisode_seconds = 400.0\n\n\
         [scenario]\ntype = \"arterial\"\nlength = 3\n",
    )
    .unwrap();
    path.to_str().unwrap().to_owned()
}

fn error_line(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let line = stderr.lines().last().expect("no stderr");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{line}: {e}"))
}

#[test]
fn unknown_scenario_reports_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsc(&["train", "--scenario", "ring_7", "--out", dir.path().to_str().unwrap()]);
    let err = error_line(&out);
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("ring_7"));
}

#[test]
fn missing_scenario_and_config_is_an_error() {
    let out = tsc(&["evaluate", "--method", "max_pressure"]);
    assert_eq!(error_line(&out)["error"]["kind"], "config");
}

#[test]
fn bad_roadnet_file_reports_its_kind() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    let flow = dir.path().join("flow.json");
    fs::write(&net, include_str!("../../core/tests/fixtures/invalid_missing_lane.roadnet.json")).unwrap();
    fs::write(&flow, "[]").unwrap();
    let cfg = dir.path().join("files.toml");
    fs::write(
        &cfg,
        format!(
            "method = \"fixed_time\"\n[scenario]\nroadnet = {:?}\nflow = {:?}\n",
            net.to_str().unwrap(),
            flow.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = tsc(&["evaluate", "--config", cfg.to_str().unwrap()]);
    let err = error_line(&out);
    assert!(err["error"]["message"].as_str().unwrap().contains("W_A"), "{err}");
}

#[test]
fn generate_writes_a_parseable_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsc(&["generate", "--scenario", "grid_3x3_uni", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files.len(), 2);
    let net = fs::read(dir.path().join(files.iter().find(|f| f.to_str().unwrap().ends_with(".roadnet.json")).unwrap()))
        .unwrap();
    let parsed = tsc_core::roadnet::parse_roadnet(&net).unwrap();
    assert_eq!(parsed.signalized().len(), 9);
}

#[test]
fn train_then_evaluate_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = dir.path().join("run");
    let out = tsc(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "completed");
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let ckpt = run.join("checkpoint.bin");
    let out = tsc(&["evaluate", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = tsc(&[
        "evaluate",
        "--config",
        &cfg,
        "--method",
        "gamma_attention_reward",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert!(error_line(&out)["error"]["kind"].is_string());
}

#[test]
fn sweep_rejects_repeated_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = tsc(&["sweep-gamma", "--config", &cfg, "--values", "0.3,0.3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(error_line(&out)["error"]["kind"], "config");
}
