//! End-to-end checks of the `funhash` binary: exit codes, artifacts, and
//! rerun determinism.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_funhash"))
}

fn write_config(dir: &std::path::Path, body: &str) -> PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, body).unwrap();
    path
}

const BLOBS_CFG: &str = "
[experiment]
name = cli-test
seeds = 5
out = OUTDIR

[dataset]
kind = blobs
synthetic_n = 300

[model]
depth = 3
hidden = 8
mode = funhash
ratio = 1/2
u = 2
g = 2

[train]
lr = 0.05
epochs = 4
batch = 32
eval_every = 2

[sweep]
ratios = 1, 1/2
modes = hashednets, funhash
";

#[test]
fn train_writes_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &BLOBS_CFG.replace("OUTDIR", dir.path().join("runs").to_str().unwrap()),
    );
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let status = bin()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    for name in ["log.csv", "result.csv", "model.fhck"] {
        assert!(out1.join(name).exists(), "{name} missing");
        assert_eq!(
            std::fs::read(out1.join(name)).unwrap(),
            std::fs::read(out2.join(name)).unwrap(),
            "{name} differs between reruns"
        );
    }
    let log = std::fs::read_to_string(out1.join("log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,train_error_pct,test_error_pct\n"));
}

#[test]
fn sweep_emits_all_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &BLOBS_CFG.replace("OUTDIR", dir.path().join("runs").to_str().unwrap()),
    );
    let out = dir.path().join("sweep");
    let output = bin()
        .args(["sweep", "--jobs", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    // header + 2 ratios x 2 modes x 1 seed
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("mode,ratio,U,G,dual,hops,seed,"));
}

#[test]
fn missing_dataset_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "
[experiment]
name = missing
[dataset]
kind = mnist
dir = /nonexistent/nowhere
[model]
mode = funhash
",
    );
    let output = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("error"), "stderr: {stderr}");
}

#[test]
fn bad_config_reports_line_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nratio = nonsense\n");
    let output = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
}

#[test]
fn verify_subcommand_reports_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.csv");
    let output = bin()
        .args(["verify", "hashes", "--out"])
        .arg(&report)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("PASS hashes::uniformity_k2"));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("suite,check,status,detail\n"));
    assert!(csv.lines().count() > 4);
}
