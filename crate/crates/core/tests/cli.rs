use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn molham(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_molham"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn selftest_passes() {
    let out = molham(&["selftest"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 6);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn usage_errors_exit_one() {
    let out = molham(&["selftest", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(molham(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(molham(&["--help"]).status.code(), Some(0));
    let v = molham(&["--version"]);
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn end_to_end_size_split_run() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ft, ev, pr, sc) = (
        dir.path().join("data"),
        dir.path().join("ft"),
        dir.path().join("eval"),
        dir.path().join("predict"),
        dir.path().join("screen"),
    );
    let out = molham(&["gen-data", "--out", arg(&data), "--split", "size-ood", "--limit", "150", "--jobs", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = json(&data.join("manifest.json"));
    assert!(manifest["n_test"].as_u64().unwrap() > 0);

    let out = molham(&[
        "finetune", "--data", arg(&data), "--out", arg(&ft), "--epochs", "1", "--dim", "8", "--layers", "1",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = ft.join("checkpoint");
    assert!(ck.join("params.bin").exists());
    assert!(ft.join("trace.csv").exists());

    let out = molham(&["eval", "--checkpoint", arg(&ck), "--data", arg(&data), "--out", arg(&ev)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = json(&ev.join("metrics.json"));
    for key in ["mae_diag", "mae_offdiag", "mae_all", "eps_mae", "psi"] {
        assert!(metrics[key].as_f64().unwrap().is_finite(), "{key}");
    }

    let run = json(&ev.join("run-manifest.json"));
    assert_eq!(run["command"], "eval");
    assert!(run["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    let inputs = run["inputs"].as_object().unwrap();
    assert_eq!(inputs.len(), 3);
    assert!(inputs.values().all(|h| h.as_str().unwrap().len() == 64));
    for d in [&data, &ft] {
        assert!(d.join("run-manifest.json").exists());
    }

    let out = molham(&["predict", "--checkpoint", arg(&ck), "--smiles", "CC(=O)O", "--out", arg(&pr)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let p = json(&pr.join("prediction.json"));
    assert_eq!(p["n_orb"], 12);
    assert!(pr.join("hamiltonian.bin.layout.json").exists());

    let out = molham(&[
        "screen", "--checkpoint", arg(&ck), "--data", arg(&data), "--out", arg(&sc), "--thresholds", "0.3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&sc.join("screen.json"));
    assert_eq!(report["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn unsupported_element_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    // any checkpoint will do; the SMILES fails before the model is used
    let data = dir.path().join("data");
    let ft = dir.path().join("ft");
    assert_eq!(molham(&["gen-data", "--out", arg(&data), "--limit", "10"]).status.code(), Some(0));
    let out = molham(&[
        "finetune", "--data", arg(&data), "--out", arg(&ft), "--epochs", "1", "--dim", "4", "--layers", "0",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = molham(&[
        "predict", "--checkpoint", arg(&ft.join("checkpoint")), "--smiles", "C[Si]C", "--out",
        arg(&dir.path().join("p")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:") && err.contains("Si"), "{err}");
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = molham(&[
        "eval", "--checkpoint", arg(&dir.path().join("none")), "--data", arg(dir.path()), "--out",
        arg(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
