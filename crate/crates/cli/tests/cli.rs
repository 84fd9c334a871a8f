//! Runs the binary and checks its outputs and exit codes.

use std::path::Path;
use std::process::Command;

fn gsscale(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gsscale"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

#[test]
fn train_writes_its_artifacts_and_report_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = gsscale(&["train", "--iterations", "3", "--timeline", "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.json", "report.json", "loss.csv", "memory.json", "gaussians.ply", "timeline.csv"] {
        assert!(dir.path().join("run").join(f).is_file(), "missing {f}");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["losses"].as_array().unwrap().len(), 3);

    let out = gsscale(&["report", "run/report.json", "--out", "tables"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("tables/psnr.csv").is_file());
}

#[test]
fn invalid_configuration_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = gsscale(&["train", "--mem-limit=-1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = gsscale(&["train", "--serial", "--dense"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bench_prints_a_row_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let out = gsscale(&["bench-optimizer", "--gaussians", "2000", "--iterations", "10"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 4, "{text}");
}
