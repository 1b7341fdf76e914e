use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};

use super::config::{ExperimentConfig, Toggles};
use super::stages::{family_pdms, fit_norm_artifact, load_test, load_train, train_model, train_ranker_model};
use crate::diffusion::DiffusionModel;
use crate::error::Result;
use crate::io::{file_sha256, write_atomic};
use crate::metrics::{evaluate_planner, EvalReport};
use crate::ranker::{build_vocabulary, RankerModel};
use crate::scenegen::{Family, Scenario};

/// The five ablation rows, each adding one component to the previous.
pub const VARIANTS: [(&str, Toggles); 5] = [
    ("M0", Toggles { trm: false, prnorm: false, irp: false, ranker: false }),
    ("M1", Toggles { trm: false, prnorm: false, irp: false, ranker: true }),
    ("M2", Toggles { trm: true, prnorm: false, irp: false, ranker: true }),
    ("M3", Toggles { trm: true, prnorm: true, irp: false, ranker: true }),
    ("M4", Toggles { trm: true, prnorm: true, irp: true, ranker: true }),
];

pub const ABLATION_CSV_HEADER: &str = "model,trm,prnorm,irp,ranker,nc,dac,ep,ttc,c,pdms,obstacle_pdms";

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub model: String,
    pub toggles: Toggles,
    pub nc: f64,
    pub dac: f64,
    pub ep: f64,
    pub ttc: f64,
    pub c: f64,
    pub pdms: f64,
    /// Mean PDMS over the obstacle family only.
    pub obstacle_pdms: Option<f64>,
}

/// A trained variant, kept so callers can probe it further.
pub struct TrainedVariant {
    pub name: String,
    pub config: ExperimentConfig,
    pub denoiser: DiffusionModel,
    pub ranker: Option<RankerModel>,
    pub report: EvalReport,
}

pub struct Ablation {
    pub config_hash: String,
    pub rows: Vec<AblationRow>,
    pub variants: Vec<TrainedVariant>,
}

impl Ablation {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(ABLATION_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let t = r.toggles;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.model,
                t.trm,
                t.prnorm,
                t.irp,
                t.ranker,
                r.nc,
                r.dac,
                r.ep,
                r.ttc,
                r.c,
                r.pdms,
                r.obstacle_pdms.map(|v| v.to_string()).unwrap_or_default()
            );
        }
        out
    }

    /// Table with scores in points (×100).
    pub fn to_markdown(&self) -> String {
        let mark = |b: bool| if b { "x" } else { "" };
        let mut out = String::from(
            "| Model | TRM | PRNorm | IRP | Ranker | NC | DAC | EP | TTC | C | PDMS |\n|---|---|---|---|---|---|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            let t = r.toggles;
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} |",
                r.model,
                mark(t.trm),
                mark(t.prnorm),
                mark(t.irp),
                mark(t.ranker),
                100.0 * r.nc,
                100.0 * r.dac,
                100.0 * r.ep,
                100.0 * r.ttc,
                100.0 * r.c,
                100.0 * r.pdms
            );
        }
        out
    }

    pub fn to_json(&self) -> Value {
        json!({ "config_hash": self.config_hash, "rows": self.rows })
    }
}

/// Trains and evaluates M0 through M4 under `base`'s budget and seed. M0 and
/// M1 share one denoiser; they differ only in selection.
pub fn run_ablation(base: &ExperimentConfig, train: &[Scenario], test: &[Scenario], dataset_sha256: &str) -> Result<Ablation> {
    let vocabulary = build_vocabulary(train, base.ranker.vocab_size)?;
    let mut variants: Vec<TrainedVariant> = Vec::new();
    for (name, toggles) in VARIANTS {
        let cfg = ExperimentConfig {
            toggles,
            ..base.clone()
        };
        let shared = variants
            .iter()
            .find(|v| {
                let t = v.config.toggles;
                (t.trm, t.prnorm, t.irp) == (toggles.trm, toggles.prnorm, toggles.irp)
            })
            .map(|v| v.denoiser.clone());
        let denoiser = match shared {
            Some(d) => d,
            None => {
                let norm = fit_norm_artifact(train, &cfg, dataset_sha256)?;
                train_model(train, &norm, &cfg)?.model
            }
        };
        let ranker = if toggles.ranker {
            Some(train_ranker_model(train, &vocabulary, &denoiser, &cfg)?.model)
        } else {
            None
        };
        let planner = cfg.planner(&denoiser, ranker.as_ref(), cfg.inference.k_ablate);
        let report = evaluate_planner(test, |s| planner.plan(s), &cfg.metrics, name, &base.stage_hash(super::Stage::Eval))?;
        variants.push(TrainedVariant {
            name: name.to_string(),
            config: cfg,
            denoiser,
            ranker,
            report,
        });
    }
    let rows = variants
        .iter()
        .map(|v| {
            let m = &v.report.means;
            AblationRow {
                model: v.name.clone(),
                toggles: v.config.toggles,
                nc: m.nc,
                dac: m.dac,
                ep: m.ep,
                ttc: m.ttc,
                c: m.comfort,
                pdms: m.pdms,
                obstacle_pdms: family_pdms(&v.report, test, Family::Obstacle),
            }
        })
        .collect();
    Ok(Ablation {
        config_hash: ablation_hash(base),
        rows,
        variants,
    })
}

/// Hash of the shared settings; the toggles themselves are varied.
fn ablation_hash(base: &ExperimentConfig) -> String {
    let cfg = ExperimentConfig {
        toggles: Toggles::default(),
        ..base.clone()
    };
    cfg.stage_hash(super::Stage::Eval)
}

pub fn ablate(cfg: &ExperimentConfig) -> Result<Value> {
    let train = load_train(cfg)?;
    let test = load_test(cfg)?;
    let ablation = run_ablation(cfg, &train, &test, &file_sha256(&cfg.paths.train_data)?)?;
    let csv = cfg.paths.report("ablation.csv");
    let json_path = cfg.paths.report("ablation.json");
    let md = cfg.paths.report("ablation.md");
    write_atomic(&csv, ablation.to_csv().as_bytes())?;
    write_atomic(&json_path, serde_json::to_string_pretty(&ablation.to_json())?.as_bytes())?;
    write_atomic(&md, ablation.to_markdown().as_bytes())?;
    let pdms: serde_json::Map<String, Value> = ablation
        .rows
        .iter()
        .map(|r| (r.model.clone(), json!(r.pdms)))
        .collect();
    Ok(json!({
        "stage": "ablate",
        "config_hash": ablation.config_hash,
        "csv": csv,
        "json": json_path,
        "markdown": md,
        "pdms": pdms,
    }))
}
