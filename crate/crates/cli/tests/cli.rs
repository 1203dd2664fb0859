//! End-to-end CLI tests driving the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fodkit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fodkit"))
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("fodkit_cli_tests").join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stderr_json(output: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&output.stderr);
    let line = text.lines().last().unwrap_or("");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

#[test]
fn help_exits_zero() {
    let out = fodkit().arg("--help").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("fodkit"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = fodkit().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = fodkit().args(["fit", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn phantom_fit_peaks_metrics_pipeline() {
    let dir = workdir("pipeline");
    let vol = dir.join("signal.fodv");
    let bvals = dir.join("bvals");
    let bvecs = dir.join("bvecs");
    let out = fodkit()
        .args(["phantom", "--config"])
        .arg(configs().join("demo_phantom.json"))
        .args(["--out"])
        .arg(&vol)
        .arg("--bvals-out")
        .arg(&bvals)
        .arg("--bvecs-out")
        .arg(&bvecs)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Single-shell data: fit with ss3t (b0 + one shell).
    let fod = dir.join("fod.fodv");
    let out = fodkit()
        .args(["fit", "--method", "ss3t"])
        .args(["--volume"])
        .arg(&vol)
        .arg("--bvals")
        .arg(&bvals)
        .arg("--bvecs")
        .arg(&bvecs)
        .arg("--out")
        .arg(&fod)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let peaks = dir.join("peaks.fodv");
    let afd = dir.join("afd.fodv");
    let out = fodkit()
        .args(["peaks", "--fod"])
        .arg(&fod)
        .arg("--out")
        .arg(&peaks)
        .arg("--afd-out")
        .arg(&afd)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Self-comparison: perfect agreement, zero angular error.
    let report = dir.join("metrics.json");
    let out = fodkit()
        .args(["metrics", "--peaks-a"])
        .arg(&peaks)
        .arg("--peaks-b")
        .arg(&peaks)
        .arg("--afd-a")
        .arg(&afd)
        .arg("--afd-b")
        .arg(&afd)
        .arg("--out")
        .arg(&report)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let ar1 = parsed["agreement_rate"][0].as_f64().unwrap();
    assert!((ar1 - 100.0).abs() < 1e-9);
    assert!(parsed["afd"]["mape_percent"].as_f64().unwrap() < 1e-12);
}

#[test]
fn ss3t_on_three_shells_is_invalid_model() {
    let dir = workdir("invalid_model");
    // Build a 3-shell acquisition.
    let cfg = dir.join("phantom.json");
    std::fs::write(
        &cfg,
        r#"{"phantom": {"dims": [2,2,1], "voxel_size_mm": 1.5, "snr": null, "age_weeks": 40.0, "seed": 1},
            "shells": [[0.0, 2], [1000.0, 8], [2600.0, 8]]}"#,
    )
    .unwrap();
    let vol = dir.join("signal.fodv");
    let bvals = dir.join("bvals");
    let bvecs = dir.join("bvecs");
    let out = fodkit()
        .args(["phantom", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&vol)
        .arg("--bvals-out")
        .arg(&bvals)
        .arg("--bvecs-out")
        .arg(&bvecs)
        .output()
        .unwrap();
    assert!(out.status.success());

    let out = fodkit()
        .args(["fit", "--method", "ss3t"])
        .args(["--volume"])
        .arg(&vol)
        .arg("--bvals")
        .arg(&bvals)
        .arg("--bvecs")
        .arg(&bvecs)
        .arg("--out")
        .arg(dir.join("fod.fodv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["code"], "invalid_model");
}

#[test]
fn exp_consistency_demo_writes_report() {
    let dir = workdir("exp_demo");
    let out = fodkit()
        .args(["exp", "consistency", "--config"])
        .arg(configs().join("demo_consistency.json"))
        .arg("--out-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["experiment"], "consistency");
    assert!(dir.join("metrics.csv").exists());
    // The config is echoed for auditability.
    assert_eq!(report["config"]["cohort"]["n_subjects"], 2);
}

#[test]
fn strict_config_rejects_unknown_keys() {
    let dir = workdir("strict");
    let cfg = dir.join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"phantom": {"dims": [2,2,1], "voxel_size_mm": 1.5, "snr": null, "age_weeks": 40.0, "seed": 1},
            "shells": [[0.0, 2]], "surprise": true}"#,
    )
    .unwrap();
    let out = fodkit()
        .args(["phantom", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("x.fodv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["code"], "json");
    assert!(err["error"]["message"].as_str().unwrap().contains("surprise"));
}

#[test]
fn train_and_predict_roundtrip() {
    let dir = workdir("train_predict");
    // Reuse the phantom pipeline to get an FOD volume as both input and
    // target: the identity map is trivially learnable.
    let vol = dir.join("signal.fodv");
    let bvals = dir.join("bvals");
    let bvecs = dir.join("bvecs");
    let out = fodkit()
        .args(["phantom", "--config"])
        .arg(configs().join("demo_phantom.json"))
        .args(["--out"])
        .arg(&vol)
        .arg("--bvals-out")
        .arg(&bvals)
        .arg("--bvecs-out")
        .arg(&bvecs)
        .output()
        .unwrap();
    assert!(out.status.success());
    let fod = dir.join("fod.fodv");
    let out = fodkit()
        .args(["fit", "--method", "ss3t"])
        .args(["--volume"])
        .arg(&vol)
        .arg("--bvals")
        .arg(&bvals)
        .arg("--bvecs")
        .arg(&bvecs)
        .arg("--out")
        .arg(&fod)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = dir.join("train.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"train_subjects": [{{"input": {fod:?}, "target": {fod:?}}}],
                "val_subjects": [{{"input": {fod:?}, "target": {fod:?}}}],
                "model": {{"kind": "linear", "seed": 1}},
                "train": {{"learning_rate": 0.01, "patches_per_subject": 8,
                           "patch_size": 4, "patience": 2, "max_epochs": 5, "seed": 2}}}}"#,
            fod = fod
        ),
    )
    .unwrap();
    let model = dir.join("model.fodm");
    let history = dir.join("history.json");
    let out = fodkit()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&model)
        .arg("--history-out")
        .arg(&history)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(history.exists());

    let pred = dir.join("pred.fodv");
    let out = fodkit()
        .args(["predict", "--model"])
        .arg(&model)
        .arg("--input")
        .arg(&fod)
        .arg("--out")
        .arg(&pred)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(pred.exists());
}

#[test]
fn demo_ablation_and_ageshift_configs_run() {
    let dir = workdir("exp_demos");
    for (sub, cfg) in [("ablation", "demo_ablation.json"), ("ageshift", "demo_ageshift.json")] {
        let out_dir = dir.join(sub);
        let out = fodkit()
            .args(["exp", sub, "--config"])
            .arg(configs().join(cfg))
            .arg("--out-dir")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{sub}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(out_dir.join("report.json").exists());
        assert!(out_dir.join("metrics.csv").exists());
    }
}
