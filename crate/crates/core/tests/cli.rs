//! End-to-end runs of the `ranklab` binary.

use std::path::Path;
use std::process::{Command, Output};

fn ranklab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ranklab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run ranklab")
}

#[test]
fn gen_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let out = ranklab(&["gen", "--out", "d.csv", "--n-contents", "8"], dir.path());
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert!(text.starts_with("content_id,distortion_type,severity,mos,f_0,"));
    assert_eq!(text.lines().count(), 1 + 8 * 25);

    let out = ranklab(
        &["train", "--dataset", "d.csv", "--epochs", "2", "--batch-size", "16", "--lr", "0.01", "--out", "m.bin"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert!(report["test_eval"]["srcc"].is_number());
    assert_eq!(report["config"]["epochs"], 2);

    let out = ranklab(&["eval", "--model", "m.bin", "--data", "d.csv"], dir.path());
    assert!(out.status.success());
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(metrics["n"], 200);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"n_contents": 8, "epochs": 1, "batch_size": 8, "strategy": "fixed-similar"}"#,
    )
    .unwrap();
    let out = ranklab(
        &["train", "--config", "c.json", "--set", "lambda=0.5", "--epochs", "2", "--out", "m.bin"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["epochs"], 2);
    assert_eq!(report["config"]["lambda"], 0.5);
    assert_eq!(report["config"]["strategy"], "fixed-similar");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| ranklab(args, dir.path()).status.code();
    assert_eq!(code(&["train", "--strategy", "all-similar", "--out", "m.bin"]), Some(3));
    assert_eq!(code(&["train", "--set", "bogus=1", "--out", "m.bin"]), Some(2));
    assert_eq!(code(&["train", "--batch-size", "1", "--out", "m.bin"]), Some(2));
    assert_eq!(code(&["eval", "--model", "missing.bin", "--data", "missing.csv"]), Some(1));
    assert_eq!(code(&["gradcheck", "--points", "10"]), Some(0));
}

#[test]
fn ablate_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = ranklab(
        &[
            "ablate", "--preset", "pair-formation", "--seeds", "2", "--epochs", "1",
            "--set", "n_contents=8", "--batch-size", "16", "--out-dir", "rep",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("rep/report.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "config_hash,strategy,Rr,Rrho,Rtau,T,lambda,batch,seed,split,plcc,srcc,krcc,pair_acc,wall_s"
    );
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 2);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rep/report.json")).unwrap()).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 6);
    assert!(report["conventions"]["krcc"].as_str().unwrap().contains("tau-a"));
}
