use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn amrnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amrnet"))
        .args(args)
        .env("AMRNET_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path) -> String {
    let out = amrnet(&[
        "synth", "--out", dir.to_str().unwrap(), "--samples", "120", "--length", "64", "--seed", "4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("config.toml").to_string_lossy().into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn run_then_rescore_cached_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let out = amrnet(&["run", "--config", &cfg, "--epochs", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let results = dir.path().join("results");
    let stored = fs::read(results.join("metrics_SYN.csv")).unwrap();

    let rescored = dir.path().join("rescored.csv");
    let out = amrnet(&[
        "evaluate",
        "--predictions",
        results.join("SYN/predictions.csv").to_str().unwrap(),
        "--out",
        rescored.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(rescored).unwrap(), stored);
}

#[test]
fn repeated_runs_have_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let args = ["run", "--config", &cfg, "--models", "xgb,rf", "--seed", "9"];
    let manifest = dir.path().join("results/manifest.json");
    assert_eq!(code(&amrnet(&args)), 0);
    let first = fs::read(&manifest).unwrap();
    let metrics = fs::read(dir.path().join("results/metrics.json")).unwrap();
    assert_eq!(code(&amrnet(&args)), 0);
    assert_eq!(fs::read(&manifest).unwrap(), first);
    assert_eq!(fs::read(dir.path().join("results/metrics.json")).unwrap(), metrics);
}

#[test]
fn exit_codes_distinguish_partial_failure_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let partial = amrnet(&["run", "--config", &cfg, "--models", "xgb", "--antibiotics", "SYN,NOPE"]);
    assert_eq!(code(&partial), 1);
    assert!(String::from_utf8_lossy(&partial.stderr).contains("NOPE"));

    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&amrnet(&["run", "--config", missing.to_str().unwrap()])), 2);
    assert_eq!(code(&amrnet(&["run", "--config", &cfg, "--models", "svm"])), 2);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "output_dir = \"o\"\nunknown_key = 1\n[data]\nsnp_matrix = \"snps.tsv\"\nphenotypes = \"phenotypes.tsv\"\n").unwrap();
    assert_eq!(code(&amrnet(&["run", "--config", bad.to_str().unwrap()])), 2);
}

#[test]
fn train_evaluate_explain_and_report_verbs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let model = dir.path().join("xgb.amrm");
    let m = model.to_str().unwrap();
    let out = amrnet(&["train", "--config", &cfg, "--antibiotic", "SYN", "--model", "xgb", "--model-out", m]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = amrnet(&["evaluate", "--config", &cfg, "--antibiotic", "SYN", "--model-file", m]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("Model,Accuracy,F1 Score,Matthews,Precision,Recall,F1 Score (Macro),Cohen Kappa"));
    assert!(table.lines().nth(1).unwrap().starts_with("XGBoost,"));

    let ex = dir.path().join("explain");
    let out = amrnet(&[
        "explain", "--config", &cfg, "--antibiotic", "SYN", "--model-file", m, "--top-k", "3", "--out",
        ex.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 4);
    assert!(ex.join("shap_beeswarm.svg").is_file());

    // a forest file is not a GBT
    let rf = dir.path().join("rf.amrm");
    amrnet(&["train", "--config", &cfg, "--antibiotic", "SYN", "--model", "rf", "--model-out", rf.to_str().unwrap()]);
    let out = amrnet(&["explain", "--config", &cfg, "--antibiotic", "SYN", "--model-file", rf.to_str().unwrap()]);
    assert_eq!(code(&out), 1);

    assert_eq!(code(&amrnet(&["run", "--config", &cfg, "--models", "xgb"])), 0);
    let rep = dir.path().join("rep");
    let out = amrnet(&[
        "report", "--result", dir.path().join("results/result.json").to_str().unwrap(), "--out",
        rep.to_str().unwrap(), "--formats", "csv",
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read(rep.join("metrics_SYN.csv")).unwrap(),
        fs::read(dir.path().join("results/metrics_SYN.csv")).unwrap()
    );
    assert!(!rep.join("metrics.json").exists());
}
