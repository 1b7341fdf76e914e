use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_resdrive");

/// Writes a tiny experiment config whose artifacts live under `root`.
fn write_config(root: &Path) -> PathBuf {
    let art = root.join("art");
    let p = |name: &str| art.join(name).to_string_lossy().into_owned();
    let cfg = format!(
        r#"{{
  "seed": 3,
  "paths": {{
    "train_data": "{}", "test_data": "{}", "stats": "{}",
    "denoiser": "{}", "ranker": "{}", "reports": "{}"
  }},
  "data": {{ "train_count": 16, "test_count": 4 }},
  "train": {{
    "epochs": 1, "batch_size": 8, "k_train": 3,
    "arch": {{ "hidden": 16, "cond_dim": 16, "time_dim": 8, "ref_octaves": 1 }}
  }},
  "ranker": {{
    "vocab_size": 6, "planner_samples": 2, "epochs": 1, "batch_size": 8,
    "arch": {{ "d_model": 8, "octaves": 1 }}
  }},
  "inference": {{ "k_infer": 3, "k_ablate": 2, "ddim_steps": 2 }}
}}"#,
        p("train.jsonl"),
        p("test.jsonl"),
        p("norm.json"),
        p("denoiser.ckpt"),
        p("ranker.ckpt"),
        p("reports")
    );
    let path = root.join("config.json");
    fs::write(&path, cfg).unwrap();
    path
}

fn resdrive(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = resdrive(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1, "summary is not one line: {stdout}");
    serde_json::from_str(&stdout).unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_honors_seed_and_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let c = cfg.to_str().unwrap();
    let summary = ok(&["gen-data", "--config", c, "--seed", "7", "--count", "20"]);
    assert_eq!(summary["train_count"], 20);
    let text = fs::read_to_string(dir.path().join("art/train.jsonl")).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(manifest["count"], 20);
    assert_eq!(text.lines().count(), 21);

    // A different seed gives a different dataset.
    let before = fs::read(dir.path().join("art/train.jsonl")).unwrap();
    ok(&["gen-data", "--config", c, "--seed", "8", "--count", "20"]);
    assert_ne!(fs::read(dir.path().join("art/train.jsonl")).unwrap(), before);
}

#[test]
fn unknown_subcommand_fails_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = resdrive(&["frobnicate", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(files_under(dir.path()), vec![cfg]);
}

#[test]
fn unknown_flags_and_keys_fail_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let c = cfg.to_str().unwrap();
    for args in [
        vec!["gen-data", "--config", c, "--bogus", "1"],
        vec!["gen-data", "--config", c, "--train.nonexistent", "1"],
        vec!["gen-data", "--config", c, "--train.epochs"],
        vec!["eval", "--config", c, "--planner", "oracle"],
    ] {
        let out = resdrive(&args);
        assert!(!out.status.success(), "{args:?} succeeded");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("Usage") || err.contains("error"), "{args:?}: {err}");
    }
    assert!(!dir.path().join("art").exists());
}

#[test]
fn missing_upstream_artifact_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let c = cfg.to_str().unwrap();
    ok(&["gen-data", "--config", c]);
    let out = resdrive(&["eval", "--config", c, "--planner", "checkpoint"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("denoiser.ckpt"), "{err}");

    let out = resdrive(&["train", "--config", c]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("norm.json"));

    let out = resdrive(&["analyze-dist", "--config", c]);
    assert!(!out.status.success());

    let out = resdrive(&["train", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
}

#[test]
fn full_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let c = cfg.to_str().unwrap();
    let stages: [&[&str]; 9] = [
        &["gen-data", "--config", c],
        &["fit-norm", "--config", c],
        &["train", "--config", c],
        &["train-ranker", "--config", c],
        &["eval", "--config", c, "--planner", "checkpoint"],
        &["eval", "--config", c, "--planner", "expert"],
        &["sample", "--config", c, "--scenes", "2"],
        &["analyze-dist", "--config", c],
        &["ablate", "--config", c],
    ];
    for args in stages {
        let summary = ok(args);
        assert!(summary["config_hash"].is_string(), "{args:?}: {summary}");
    }
    let art = dir.path().join("art");
    let first: Vec<(PathBuf, Vec<u8>)> = files_under(&art).into_iter().map(|p| (p.clone(), fs::read(p).unwrap())).collect();
    for args in stages {
        ok(args);
    }
    for (path, bytes) in &first {
        assert_eq!(&fs::read(path).unwrap(), bytes, "{} differs on re-run", path.display());
    }

    let csv = fs::read_to_string(art.join("reports/eval_checkpoint.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "scenario_id,nc,dac,ttc,comfort,ep,ddc,lk,pdms,epdms,failed"
    );
    let table = fs::read_to_string(art.join("reports/ablation.csv")).unwrap();
    let models: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(models, ["M0", "M1", "M2", "M3", "M4"]);
    assert!(table.lines().next().unwrap().contains("nc,dac,ep,ttc,c,pdms"));
}

#[test]
fn overrides_change_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let c = cfg.to_str().unwrap();
    ok(&["gen-data", "--config", c]);
    ok(&["fit-norm", "--config", c]);
    let a = ok(&["train", "--config", c]);
    let b = ok(&["train", "--config", c, "--train.lr=0.002"]);
    assert_ne!(a["config_hash"], b["config_hash"]);
    // The ranker stage under the original config now sees a foreign denoiser.
    let out = resdrive(&["train-ranker", "--config", c]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lineage"));
}
