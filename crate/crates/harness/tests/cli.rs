use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_pgps");

fn pgps(args: &[&str], root: &Path) -> String {
    let out = Command::new(BIN)
        .args(args)
        .env("PGPS_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn pgps");
    assert!(
        out.status.success(),
        "pgps {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"{
    "name": "cli",
    "dataset": {"synth": {
        "num_volumes": 5, "dims_min": [16,16,16], "dims_max": [16,16,16],
        "num_classes": 2, "objects_per_class": [1,1], "radius": [[2.5,3.5]],
        "noise": 0.2, "seed": 8}},
    "network": {"pools_per_axis": [1,1,1], "base_channels": 2},
    "policies": ["cps", "pgps-performance"],
    "target_patch": [8,8,8],
    "total_epochs": 10,
    "iterations_per_epoch": 2,
    "fractions": [100],
    "repeats": 2,
    "seed": 4
}"#;

#[test]
fn plan_prints_the_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let text = pgps(&["plan", "--mode", "pgps-performance", "--pools", "3,3,3", "--target", "40,56,40", "--default-batch", "9"], dir.path());
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let stages = v["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 15);
    assert_eq!(stages[0]["batch"], 1575);
    assert_eq!(stages[14]["batch"], 9);
}

#[test]
fn synth_then_eval_on_the_directory() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"num_volumes": 2, "dims_min": [8,8,8], "dims_max": [8,8,8], "num_classes": 2,
            "objects_per_class": [1,1], "radius": [[2.0,2.0]], "noise": 0.1, "seed": 1}"#,
    )
    .unwrap();
    let data = dir.path().join("data");
    pgps(&["synth", "--spec", spec.to_str().unwrap(), "--out", data.to_str().unwrap()], dir.path());
    assert!(data.join("manifest.json").exists());

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, CONFIG).unwrap();
    pgps(&["train", "--config", cfg.to_str().unwrap(), "--policy", "cps", "--no-eval"], dir.path());
    let ckpt = dir.path().join("runs/cli/cps_f100_s4/checkpoint.segn");
    let dice = dir.path().join("dice.csv");
    let stdout = pgps(
        &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", data.to_str().unwrap(), "--window", "8", "--zscore", "--out", dice.to_str().unwrap()],
        dir.path(),
    );
    assert!(stdout.contains("over 2 volumes"));
    assert_eq!(std::fs::read_to_string(&dice).unwrap().lines().count(), 3);
}

#[test]
fn sample_stats_writes_probe_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("stats.csv");
    pgps(&["sample-stats", "--config", cfg.to_str().unwrap(), "--batches", "20", "--out", out.to_str().unwrap()], dir.path());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "policy,stage,patch,batch,batches,mean_fg_fraction,mean_unique_class_fraction,tensor_voxels"
    );
    // one CPS stage, then smallest, middle and largest of the ladder
    assert_eq!(lines.count(), 1 + 3);
}

#[test]
fn convergence_and_report_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, CONFIG).unwrap();
    let conv = dir.path().join("conv");
    pgps(&["convergence", "--config", cfg.to_str().unwrap(), "--repeats", "1", "--out", conv.to_str().unwrap()], dir.path());
    for f in ["runs.csv", "table.csv", "table.json", "curve.csv", "curve.svg", "convergence.json"] {
        assert!(conv.join(f).exists(), "{f}");
    }
    let rep = dir.path().join("rep");
    pgps(&["report", "--runs", conv.join("runs.csv").to_str().unwrap(), "--out", rep.to_str().unwrap()], dir.path());
    assert_eq!(
        std::fs::read_to_string(conv.join("table.csv")).unwrap(),
        std::fs::read_to_string(rep.join("table.csv")).unwrap()
    );
}

#[test]
fn variability_prints_triplets_for_three_policies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = pgps(
        &["variability", "--config", cfg.to_str().unwrap(), "--policies", "cps,pgps-efficiency,pgps-performance", "--fractions", "10", "--repeats", "2"],
        dir.path(),
    );
    assert!(out.contains("of 8"), "{out}");
    assert!(dir.path().join("runs/cli/variability/variability.json").exists());
}

#[test]
fn bad_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, CONFIG.replace("[8,8,8]", "[8,8,7]")).unwrap();
    let out = Command::new(BIN).args(["train", "--config", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}
