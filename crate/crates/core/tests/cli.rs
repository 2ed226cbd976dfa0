use std::path::Path;
use std::process::{Command, Output};

use dyadcast::data::{read_sessions, N_LANDMARKS};

fn dyadcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyadcast"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dyadcast(dir.path(), &["gradcheck", "--seed", "7"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&dyadcast(dir.path(), &["evaluate", "--data", "x.jsonl"])), 1);
    assert_eq!(code(&dyadcast(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&dyadcast(dir.path(), &["--help"])), 0);
}

#[test]
fn missing_data_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dyadcast(dir.path(), &["train", "--data", "absent.jsonl", "--preset", "desk"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn generate_train_forecast_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let out = dyadcast(d, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["gen-synthetic", "--seed", "1", "--count", "4", "--out", "d.jsonl"]);
    run(&["train", "--data", "d.jsonl", "--preset", "desk", "--quiet"]);
    assert!(d.join("checkpoint.ckpt").is_file());
    let history = std::fs::read_to_string(d.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 501);
    assert!(history.starts_with("epoch,mse_face,mse_body,mse_hands,adv_g,loss_d,d_real,d_fake,seconds"));

    run(&[
        "forecast",
        "--data",
        "d.jsonl",
        "--checkpoint",
        "checkpoint.ckpt",
        "--out",
        "f.jsonl",
        "--trajectories",
        "t.csv",
    ]);
    let forecasts = read_sessions(&d.join("f.jsonl")).unwrap();
    let inputs = read_sessions(&d.join("d.jsonl")).unwrap();
    assert_eq!(forecasts.len(), inputs.len());
    for (f, i) in forecasts.iter().zip(&inputs) {
        assert_eq!(f.session_id, i.session_id);
        for p in &f.persons {
            assert!(p.predicted);
            assert_eq!(p.frames.len(), 50);
            assert!(p.frames.iter().all(|fr| fr.len() == N_LANDMARKS));
        }
    }
    let csv = std::fs::read_to_string(d.join("t.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("session_id,person,frame,landmark,x,y"));
    assert_eq!(csv.lines().count(), 1 + 4 * 2 * 50 * N_LANDMARKS);

    run(&["evaluate", "--data", "d.jsonl", "--checkpoint", "checkpoint.ckpt", "--report", "r"]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["sample_count"], 8);
    assert!(report["model"]["mean"]["body"].as_f64().unwrap() > 0.0);
    assert!(d.join("r.txt").is_file());
}
