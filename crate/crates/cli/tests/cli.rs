use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn quadmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadmatch")).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path, out: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "out_dir": out,
        "synthetic": {
            "n_countries": 3,
            "clusters_per_country_early": 40,
            "clusters_per_country_late": 40,
            "individuals_per_cluster": 20
        },
        "imputation": { "iterations_per_chain": 400, "m_imputations": 4 },
        "seed": 42
    });
    let path = dir.join(format!("{}.json", out.file_name().unwrap().to_string_lossy()));
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn hashes(out: &Path) -> Vec<(String, String)> {
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e["path"].as_str().unwrap().to_string(), e["sha256"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn default_config_is_json() {
    let out = quadmatch(&["default-config"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["stage2"]["xi"], 0.05);
    assert_eq!(v["imputation"]["m_imputations"], 20);
}

#[test]
fn invalid_config_fails_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, format!(r#"{{"out_dir": {:?}, "stage2": {{"xi": -0.01}}}}"#, out)).unwrap();
    let res = quadmatch(&["pipeline", "--config", cfg.to_str().unwrap()]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("stage2.xi"), "{err}");
    assert!(!out.exists());
}

#[test]
fn failing_stage_is_named_and_marked_partial() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    let cfg = small_config(dir.path(), &out);
    let res = quadmatch(&["analyze", "--config", cfg.to_str().unwrap()]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("stage `analyze` failed"), "{err}");
    assert!(out.join("analyze.partial").exists());
}

#[test]
fn pipeline_is_reproducible_and_stages_rerun_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (cfg_a, cfg_b) = (small_config(dir.path(), &a), small_config(dir.path(), &b));
    let run_a = quadmatch(&["pipeline", "--config", cfg_a.to_str().unwrap()]);
    assert!(run_a.status.success(), "{}", String::from_utf8_lossy(&run_a.stderr));
    let stdout = String::from_utf8_lossy(&run_a.stdout);
    assert!(stdout.contains("z_diff"), "{stdout}");
    assert!(stdout.contains("Average"), "{stdout}");
    assert!(quadmatch(&["pipeline", "--config", cfg_b.to_str().unwrap()]).status.success());
    let first = hashes(&a);
    assert_eq!(first, hashes(&b));
    assert!(first.iter().any(|(p, _)| p == "imputed/imputed_04.csv"));
    assert!(!fs::read_dir(&a).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "partial")));

    for stage in ["stage2", "impute", "analyze", "sensitivity"] {
        assert!(quadmatch(&[stage, "--config", cfg_a.to_str().unwrap()]).status.success(), "{stage}");
    }
    assert_eq!(first, hashes(&a));

    let reseeded = quadmatch(&["sensitivity", "--config", cfg_b.to_str().unwrap(), "--seed", "7"]);
    assert!(reseeded.status.success());
    let m: Value = serde_json::from_str(&fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["seed"], 7);
}
