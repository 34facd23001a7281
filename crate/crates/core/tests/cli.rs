use std::process::{Command, Output};

fn sdrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdrisk")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    sdrisk(args).status.code().unwrap()
}

#[test]
fn check_command_passes() {
    let out = sdrisk(&["check"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5);
}

#[test]
fn config_errors_exit_2() {
    assert_eq!(code(&["train-eval", "--folds", "1", "--synthetic-n", "50"]), 2);
    assert_eq!(code(&["train-eval", "--loss", "hinge2"]), 2);
    assert_eq!(code(&["generate", "--noise", "uniform:0.7"]), 2);
    assert_eq!(code(&["generate", "--noise", "conditional:0.6,0.5"]), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    assert_eq!(code(&["generate", "--csv", missing.to_str().unwrap()]), 3);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,label\n1.0,1\nx,0\n").unwrap();
    let out = sdrisk(&["generate", "--csv", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 3"));
}

#[test]
fn generate_writes_pairs_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sdrisk(&["generate", "--synthetic-n", "40", "--n-pairs", "25", "--noise", "0.2", "--out", out]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("pairs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 26);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("pairs.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["n_pairs"], 25);
    assert_eq!(meta["n_points"], 40);
}

#[test]
fn compare_writes_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sdrisk(&[
        "compare", "--synthetic-n", "60", "--folds", "2", "--epochs", "3", "--noise", "0.2", "--out", out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert!(table.lines().count() >= 4);
    let raw = std::fs::read_to_string(dir.path().join("raw.csv")).unwrap();
    assert!(raw.starts_with("seed,fold,method,loss,noise_s,noise_d,accuracy"));
}
