//! End-to-end checks of the command-line binary: subcommand wiring, exit
//! codes, file outputs and determinism of regenerated artifacts.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deconet"))
}

fn tiny_config_toml() -> &'static str {
    r#"
[problem]
n = 16
m = 4
redundancy = 24
layers = 3

[data]
samples = 30
train_frac = 0.8
noise_std = 1e-4
seed = 7

[train]
lr = 1e-3
batch = 8
patience = 5
max_epochs = 3
"#
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, tiny_config_toml()).unwrap();
    p
}

#[test]
fn datagen_train_acf_bounds_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let ds = dir.path().join("ds");

    let out = bin()
        .args(["datagen", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&ds)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["A.dmat", "X.dmat", "Y.dmat", "meta.json", "run.json"] {
        assert!(ds.join(f).exists(), "missing {f}");
    }

    // Re-running without --force refuses; with --force regenerates the same bytes.
    let refuse = bin()
        .args(["datagen", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&ds)
        .output()
        .unwrap();
    assert!(!refuse.status.success());
    let before = std::fs::read(ds.join("X.dmat")).unwrap();
    let force = bin()
        .args(["datagen", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&ds)
        .arg("--force")
        .output()
        .unwrap();
    assert!(force.status.success());
    assert_eq!(before, std::fs::read(ds.join("X.dmat")).unwrap());

    let run = dir.path().join("run1");
    let train = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&ds)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(run.join("metrics.csv").exists());
    assert!(run.join("W.dmat").exists());
    assert!(run.join("W.json").exists());
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_mse,test_mse,ege,grad_norm,w_spectral\n"));

    let acf_out = dir.path().join("acf.json");
    let acf = bin()
        .args(["acf", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&ds)
        .args(["--operator", "haar", "--iters", "3", "--out"])
        .arg(&acf_out)
        .output()
        .unwrap();
    assert!(acf.status.success(), "{}", String::from_utf8_lossy(&acf.stderr));
    let acf_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&acf_out).unwrap()).unwrap();
    assert!(acf_json["test_mse"].as_f64().unwrap() >= 0.0);

    let report = dir.path().join("report.json");
    let bounds = bin()
        .args(["bounds", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&ds)
        .arg("--checkpoint")
        .arg(run.join("W.dmat"))
        .arg("--out")
        .arg(&report)
        .args(["--sweep-redundancy", "24,48", "--sweep-layers", "2,3"])
        .output()
        .unwrap();
    assert!(bounds.status.success(), "{}", String::from_utf8_lossy(&bounds.stderr));
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(rep["k_l_general"].as_f64().unwrap() > 0.0);
    assert!(rep["assumptions_hold"].is_boolean());
    let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("N,L,s,bound,sqrt_NL_over_s\n"));
    assert_eq!(sweep.lines().count(), 1 + 4);
}

#[test]
fn verify_subcommand_reports_families() {
    let dir = tempfile::tempdir().unwrap();
    let out_json = dir.path().join("verify.json");
    let out = bin()
        .args(["verify", "--draws", "6", "--pairs", "4", "--layers", "2", "--out"])
        .arg(&out_json)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "stdout: {stdout}");
    for family in ["formulas", "layer_gain", "state_growth", "lipschitz", "gradient", "clipping"] {
        assert!(stdout.contains(family), "missing family {family} in: {stdout}");
    }
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_json).unwrap()).unwrap();
    assert_eq!(rep["all_pass"], serde_json::Value::Bool(true));

    // A zero-layer request is rejected.
    let bad = bin().args(["verify", "--layers", "0"]).output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn train_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[problem]\nn = 10\nm = 10\nredundancy = 20\nlayers = 2\n").unwrap();
    let out = bin()
        .args(["datagen", "--config"])
        .arg(&p)
        .arg("--out")
        .arg(dir.path().join("ds"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("m < n"));
}
