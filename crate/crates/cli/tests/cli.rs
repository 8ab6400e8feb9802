use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn noisefair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisefair")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("experiment.json");
    fs::write(
        &path,
        r#"{
  "data": {"kind": "preset", "name": "adultlike", "per_group": 400},
  "noise": {"female": {"eps_plus": 0.2, "eps_minus": 0.1}, "male": {"eps_plus": 0.1, "eps_minus": 0.3}},
  "methods": ["clean", "corrupt", "surrogate", "group_peer"],
  "noise_knowledge": ["true", "estimated"],
  "alpha_grid": [0.0, 0.5],
  "train": {"epochs": 8, "outer_rounds": 4}
}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = noisefair(&[
            "run",
            &config,
            "--seed-list",
            "1,2",
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--jobs",
            "2",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(out_dir.join("summary.json").exists());
        csvs.push(fs::read(out_dir.join("results.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs[0].clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 6);
}

#[test]
fn overrides_narrow_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_noisefair"))
        .args(["run", &config, "--seed-list", "4", "--noise-knowledge", "true", "--delta", "0.1"])
        .args(["--out-dir", out_dir.to_str().unwrap()])
        .env("NOISEFAIR_JOBS", "1")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["delta"], 0.1);
    let csv = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(!csv.contains("estimated"));
}

#[test]
fn zero_jobs_is_rejected() {
    let out = noisefair(&["--jobs", "0", "verify", "--exact-only"]);
    assert!(!out.status.success());
}

#[test]
fn verify_exact_suite_passes() {
    let out = noisefair(&["verify", "--exact-only"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().count() > 10);
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")));
}

#[test]
fn synth_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    let out = noisefair(&["synth", "--per-group", "600", "--seed", "3", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "group,label,x1,x2,x3,x4");
    assert_eq!(text.lines().count(), 1 + 1200);

    let data_config = dir.path().join("data.json");
    fs::write(
        &data_config,
        r#"{"label_column": "label", "positive_symbol": "1", "group_column": "group",
            "feature_columns": ["x1", "x2", "x3", "x4"]}"#,
    )
    .unwrap();
    let out = noisefair(&["estimate", csv.to_str().unwrap(), "--config", data_config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let est: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let groups: Vec<&String> = est.as_object().unwrap().keys().collect();
    assert_eq!(groups, ["female", "male"]);
    for g in ["female", "male"] {
        for key in ["eps_plus", "eps_minus", "delta", "prior_plus", "clipped"] {
            assert!(est[g].get(key).is_some(), "{g} lacks {key}");
        }
        let ep = est[g]["eps_plus"].as_f64().unwrap();
        assert!((0.0..=0.49).contains(&ep));
    }
}

#[test]
fn missing_config_fails_cleanly() {
    let out = noisefair(&["run", "/nonexistent/config.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/config.json"));
}
