use std::fs;
use std::path::Path;

use serde_json::json;

use super::*;
use crate::diffusion::DenoiserArch;
use crate::error::Error;
use crate::metrics::CSV_HEADER;
use crate::ranker::RankerArch;
use crate::scenegen::{generate_dataset, FamilyMix};
use crate::trajcore::{horizon_stats, Representation, Scaler};

/// A configuration small enough to run every stage in a unit test.
fn tiny_config(root: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: 11,
        ..ExperimentConfig::default()
    };
    cfg.paths = Paths {
        train_data: root.join("train.jsonl"),
        test_data: root.join("test.jsonl"),
        stats: root.join("norm.json"),
        denoiser: root.join("denoiser.ckpt"),
        ranker: root.join("ranker.ckpt"),
        reports: root.join("reports"),
    };
    cfg.data = DataConfig {
        train_count: 24,
        test_count: 6,
    };
    cfg.train.epochs = 1;
    cfg.train.batch_size = 8;
    cfg.train.k_train = 4;
    cfg.train.arch = DenoiserArch {
        hidden: 16,
        cond_dim: 16,
        time_dim: 8,
        ref_octaves: 1,
        ..DenoiserArch::default()
    };
    cfg.ranker.vocab_size = 8;
    cfg.ranker.planner_samples = 3;
    cfg.ranker.epochs = 1;
    cfg.ranker.batch_size = 8;
    cfg.ranker.arch = RankerArch { d_model: 8, octaves: 1 };
    cfg.inference = InferenceConfig {
        k_infer: 4,
        k_ablate: 3,
        ddim_steps: 2,
    };
    cfg
}

fn run_pipeline(cfg: &ExperimentConfig) {
    gen_data(cfg).unwrap();
    fit_norm(cfg).unwrap();
    train(cfg).unwrap();
    train_ranker_stage(cfg).unwrap();
    eval(cfg, PlannerKind::Checkpoint).unwrap();
    sample(cfg, 2).unwrap();
    analyze_dist(cfg).unwrap();
}

fn outputs(cfg: &ExperimentConfig) -> Vec<std::path::PathBuf> {
    let p = &cfg.paths;
    vec![
        p.train_data.clone(),
        p.test_data.clone(),
        p.stats.clone(),
        p.denoiser.clone(),
        Paths::loss_log(&p.denoiser),
        p.ranker.clone(),
        Paths::loss_log(&p.ranker),
        p.report("eval_checkpoint.csv"),
        p.report("eval_checkpoint.json"),
        p.report("samples.json"),
        p.report("dist.csv"),
    ]
}

#[test]
fn overrides_follow_dot_paths() {
    let base = ExperimentConfig::default();
    let cfg = base
        .with_overrides(&[
            ("train.epochs".into(), "3".into()),
            ("toggles.irp".into(), "false".into()),
            ("paths.reports".into(), "elsewhere".into()),
        ])
        .unwrap();
    assert_eq!(cfg.train.epochs, 3);
    assert!(!cfg.toggles.irp);
    assert_eq!(cfg.paths.reports, Path::new("elsewhere"));

    for key in ["train.epochz", "nope", "train..epochs", "seed.inner"] {
        let err = base.with_overrides(&[(key.into(), "1".into())]).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{key}: {err}");
    }
    // Type errors surface at validation time.
    assert!(base.with_overrides(&[("train.epochs".into(), "many".into())]).is_err());
    assert!(base.with_overrides(&[("train.epochs".into(), "0".into())]).is_err());
}

#[test]
fn config_json_round_trips() {
    let cfg = tiny_config(Path::new("x"));
    let back = ExperimentConfig::from_value(cfg.to_value()).unwrap();
    assert_eq!(back, cfg);
    assert!(ExperimentConfig::from_value(json!({ "unknown": 1 })).is_err());
    assert_eq!(ExperimentConfig::from_value(json!({})).unwrap(), ExperimentConfig::default());
}

#[test]
fn stage_hashes_track_their_inputs_only() {
    let a = ExperimentConfig::default();
    let stages = [Stage::Data, Stage::Norm, Stage::Denoiser, Stage::Ranker, Stage::Eval];

    let moved = tiny_config(Path::new("/elsewhere"));
    let moved = ExperimentConfig {
        paths: moved.paths,
        ..a.clone()
    };
    for s in stages {
        assert_eq!(a.stage_hash(s), moved.stage_hash(s), "paths leaked into {s:?}");
    }

    let mut b = a.clone();
    b.train.epochs += 1;
    assert_eq!(a.stage_hash(Stage::Data), b.stage_hash(Stage::Data));
    assert_eq!(a.stage_hash(Stage::Norm), b.stage_hash(Stage::Norm));
    for s in [Stage::Denoiser, Stage::Ranker, Stage::Eval] {
        assert_ne!(a.stage_hash(s), b.stage_hash(s));
    }

    let mut c = a.clone();
    c.seed += 1;
    for s in stages {
        assert_ne!(a.stage_hash(s), c.stage_hash(s));
    }

    let mut d = a.clone();
    d.toggles.ranker = false;
    assert_eq!(a.stage_hash(Stage::Ranker), d.stage_hash(Stage::Ranker));
    assert_ne!(a.stage_hash(Stage::Eval), d.stage_hash(Stage::Eval));
}

#[test]
fn stage_seeds_differ_by_name() {
    let cfg = ExperimentConfig::default();
    assert_ne!(cfg.stage_seed("train"), cfg.stage_seed("eval"));
    assert_ne!(cfg.train_config().seed, cfg.ranker_config().seed);
}

#[test]
fn every_toggle_combination_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny_config(dir.path());
    let train = generate_dataset(3, 8, &base.scene, "t").unwrap();
    for bits in 0..16u32 {
        let toggles = Toggles {
            trm: bits & 1 != 0,
            prnorm: bits & 2 != 0,
            irp: bits & 4 != 0,
            ranker: bits & 8 != 0,
        };
        let cfg = ExperimentConfig {
            toggles,
            ..base.clone()
        };
        cfg.validate().unwrap();
        let norm = fit_norm_artifact(&train, &cfg, "sha").unwrap();
        assert_eq!(norm.target, toggles.target());
        assert_eq!(matches!(norm.scaler, Scaler::PointWise(_)), toggles.prnorm);
        assert_eq!(cfg.cov().is_zero(), !toggles.irp);
    }
}

#[test]
fn pipeline_is_idempotent_and_records_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    run_pipeline(&cfg);
    let first: Vec<Vec<u8>> = outputs(&cfg).iter().map(|p| fs::read(p).unwrap()).collect();
    run_pipeline(&cfg);
    for (path, bytes) in outputs(&cfg).iter().zip(&first) {
        assert_eq!(&fs::read(path).unwrap(), bytes, "{} changed on re-run", path.display());
    }

    let csv = fs::read_to_string(cfg.paths.report("eval_checkpoint.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(csv.lines().count(), 1 + cfg.data.test_count);

    let eval_hash = cfg.stage_hash(Stage::Eval);
    for name in ["eval_checkpoint.json", "samples.json"] {
        let text = fs::read_to_string(cfg.paths.report(name)).unwrap();
        assert!(text.contains(&eval_hash), "{name} lacks the config hash");
    }
    let norm = load_norm(&cfg).unwrap();
    assert_eq!(norm.config_hash, cfg.stage_hash(Stage::Norm));
    let (_, ckpt) = load_denoiser(&cfg).unwrap();
    assert_eq!(ckpt.manifest.config_hash, cfg.stage_hash(Stage::Denoiser));
}

#[test]
fn dist_report_has_one_row_per_stat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    gen_data(&cfg).unwrap();
    fit_norm(&cfg).unwrap();
    let summary = analyze_dist(&cfg).unwrap();
    let csv = fs::read_to_string(cfg.paths.report("dist.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], DIST_CSV_HEADER);
    assert_eq!(lines.len(), 1 + 3 * 8 * 2);
    assert!(lines[1].starts_with("raw,1,x,"));
    assert!(lines[48].starts_with("normalized,8,y,"));
    assert!(summary["normalized_std_ratio"].is_array());
}

#[test]
fn residuals_vanish_on_constant_velocity_scenes() {
    let mut cfg = ExperimentConfig::default();
    cfg.scene.family_mix = FamilyMix {
        cruise: 1.0,
        bend: 0.0,
        obstacle: 0.0,
        lead: 0.0,
        stop: 0.0,
    };
    cfg.scene.max_initial_offset = 0.0;
    cfg.scene.max_initial_heading = 0.0;
    let scenes = generate_dataset(5, 50, &cfg.scene, "cv").unwrap();
    let pairs = || scenes.iter().map(|s| (&s.ego, &s.expert));
    let raw = horizon_stats(pairs(), Representation::Raw, None).unwrap();
    let res = horizon_stats(pairs(), Representation::Residual, None).unwrap();
    assert!(raw.max_abs_mean(0) > 10.0);
    assert!(res.max_abs_mean(0) < 1e-2 * raw.max_abs_mean(0), "{}", res.max_abs_mean(0));
    assert!(res.max_abs_mean(1) < 1e-2, "{}", res.max_abs_mean(1));
}

#[test]
fn missing_upstream_artifacts_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    match eval(&cfg, PlannerKind::Checkpoint).unwrap_err() {
        Error::MissingArtifact(p) => assert_eq!(p, cfg.paths.test_data),
        other => panic!("unexpected {other}"),
    }
    gen_data(&cfg).unwrap();
    match train(&cfg).unwrap_err() {
        Error::MissingArtifact(p) => assert_eq!(p, cfg.paths.stats),
        other => panic!("unexpected {other}"),
    }
    fit_norm(&cfg).unwrap();
    match eval(&cfg, PlannerKind::Checkpoint).unwrap_err() {
        Error::MissingArtifact(p) => assert_eq!(p, cfg.paths.denoiser),
        other => panic!("unexpected {other}"),
    }
    assert!(!cfg.paths.reports.exists());
    // Baselines need only the test split.
    eval(&cfg, PlannerKind::Expert).unwrap();
    eval(&cfg, PlannerKind::Reference).unwrap();
}

#[test]
fn mixed_lineage_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    gen_data(&cfg).unwrap();
    fit_norm(&cfg).unwrap();
    train(&cfg).unwrap();

    let mut retuned = cfg.clone();
    retuned.train.lr *= 2.0;
    assert!(matches!(load_denoiser(&retuned).unwrap_err(), Error::Lineage(_)));
    assert!(matches!(train_ranker_stage(&retuned).unwrap_err(), Error::Lineage(_)));

    let mut reseeded = cfg.clone();
    reseeded.seed += 1;
    assert!(matches!(load_train(&reseeded).unwrap_err(), Error::Lineage(_)));

    // Regenerating the data under another config invalidates the stats.
    let mut other = cfg.clone();
    other.data.train_count += 1;
    gen_data(&other).unwrap();
    assert!(matches!(load_norm(&other).unwrap_err(), Error::Lineage(_)));
}

#[test]
fn planner_kinds_parse() {
    for kind in [PlannerKind::Checkpoint, PlannerKind::Expert, PlannerKind::Reference] {
        assert_eq!(PlannerKind::parse(kind.name()).unwrap(), kind);
    }
    assert!(PlannerKind::parse("oracle").is_err());
}

#[test]
fn endpoint_spread_matches_hand_computation() {
    use crate::geom::Vec2;
    use crate::trajcore::Trajectory;
    let make = |x: f64, y: f64| Trajectory::new(vec![Vec2::new(0.0, 0.0), Vec2::new(x, y)], 0.5).unwrap();
    let cands = [make(1.0, 0.0), make(3.0, 0.0), make(2.0, 1.0), make(2.0, -1.0)];
    // var x = 0.5, var y = 0.5.
    assert!((endpoint_std(&cands) - 1.0).abs() < 1e-15);
    assert_eq!(endpoint_std(&cands[..1]), 0.0);
}

#[test]
fn ablation_table_is_complete_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (train, test) = generate_splits(&cfg).unwrap();
    let a = run_ablation(&cfg, &train, &test, "sha").unwrap();
    let labels: Vec<&str> = a.rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(labels, ["M0", "M1", "M2", "M3", "M4"]);
    let csv = a.to_csv();
    assert_eq!(csv.lines().next().unwrap(), ABLATION_CSV_HEADER);
    assert_eq!(csv.lines().count(), 6);
    let md = a.to_markdown();
    assert!(md.contains("| NC | DAC | EP | TTC | C | PDMS |"));
    for r in &a.rows {
        assert!((0.0..=1.0).contains(&r.pdms));
    }
    // M0 and M1 share the denoiser and differ only in selection.
    let weights = |v: &TrainedVariant| -> Vec<f64> {
        v.denoiser.net.params.iter().flat_map(|p| p.value.data().to_vec()).collect()
    };
    assert_eq!(weights(&a.variants[0]), weights(&a.variants[1]));
    assert_ne!(weights(&a.variants[1]), weights(&a.variants[2]));
    assert!(a.variants[0].ranker.is_none() && a.variants[1].ranker.is_some());

    let b = run_ablation(&cfg, &train, &test, "sha").unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.to_markdown(), b.to_markdown());
}
