use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{ExperimentConfig, Paths, Stage};
use crate::diffusion::{
    fit_scaler, loss_log_csv, predict_with, train_denoiser, Checkpoint, DiffusionModel, TargetKind, TrainOutcome,
};
use crate::error::{Error, Result};
use crate::io::{file_sha256, read_artifact_string, write_atomic};
use crate::metrics::{evaluate_planner, EvalReport};
use crate::numerics::{derive_seed_str, RngStream};
use crate::ranker::{build_vocabulary, score, select, train_ranker, CandidateSet, Origin, RankerModel, RankerOutcome, ScoreVector};
use crate::scenegen::{generate_dataset, read_dataset, write_dataset, Family, Scenario};
use crate::trajcore::{
    fit_norm_stats, horizon_stats, inertial_reference, residual, NormStats, PerturbationCov, Representation, Residual,
    Scaler, Trajectory, HORIZON, STEP,
};

pub const NORM_FILE_VERSION: u32 = 1;

/// Contents of the normalization artifact: the point-wise residual stats
/// (always fitted, used for distribution analysis) and the scaler the
/// configured model trains with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormArtifact {
    pub version: u32,
    pub config_hash: String,
    pub dataset_sha256: String,
    pub target: TargetKind,
    pub pointwise: NormStats,
    pub scaler: Scaler,
}

fn lineage_error(path: &Path, found: &str, expected: &str) -> Error {
    Error::Lineage(format!(
        "{} was produced under config hash {found}, current config expects {expected}; re-run the upstream stage",
        path.display()
    ))
}

fn expect_hash(path: &Path, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(lineage_error(path, found, expected));
    }
    Ok(())
}

fn expect_sha(path: &Path, recorded: Option<&String>) -> Result<()> {
    let actual = file_sha256(path)?;
    match recorded {
        Some(r) if *r == actual => Ok(()),
        _ => Err(Error::Lineage(format!(
            "{} changed since the downstream artifact was built from it",
            path.display()
        ))),
    }
}

// ---- in-memory stages -------------------------------------------------------

pub fn generate_splits(cfg: &ExperimentConfig) -> Result<(Vec<Scenario>, Vec<Scenario>)> {
    let train = generate_dataset(cfg.stage_seed("gen-data/train"), cfg.data.train_count, &cfg.scene, "train")?;
    let test = generate_dataset(cfg.stage_seed("gen-data/test"), cfg.data.test_count, &cfg.scene, "test")?;
    Ok((train, test))
}

fn expert_residuals(train: &[Scenario]) -> Result<Vec<Residual>> {
    train
        .iter()
        .map(|s| residual(&s.expert, &inertial_reference(&s.ego, HORIZON, STEP)?))
        .collect()
}

pub fn fit_norm_artifact(train: &[Scenario], cfg: &ExperimentConfig, dataset_sha256: &str) -> Result<NormArtifact> {
    let (gamma, eps0) = (cfg.train.gamma, cfg.train.epsilon0);
    let mut pointwise = fit_norm_stats(&expert_residuals(train)?, gamma, eps0)?;
    pointwise.dataset_hash = dataset_sha256.to_string();
    let target = cfg.toggles.target();
    Ok(NormArtifact {
        version: NORM_FILE_VERSION,
        config_hash: cfg.stage_hash(Stage::Norm),
        dataset_sha256: dataset_sha256.to_string(),
        target,
        pointwise,
        scaler: fit_scaler(train, target, cfg.toggles.prnorm, gamma, eps0)?,
    })
}

pub fn train_model(train: &[Scenario], norm: &NormArtifact, cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let mut tc = cfg.train_config();
    if !cfg.toggles.irp {
        tc.sigma = [0.0, 0.0];
    }
    train_denoiser(train, norm.scaler.clone(), norm.target, &tc)
}

pub fn train_ranker_model(
    train: &[Scenario],
    vocabulary: &CandidateSet,
    planner: &DiffusionModel,
    cfg: &ExperimentConfig,
) -> Result<RankerOutcome> {
    train_ranker(train, vocabulary, Some((planner, cfg.cov())), &cfg.ranker_config(), &cfg.metrics)
}

/// Candidate generation plus selection.
#[derive(Clone, Copy)]
pub struct Planner<'a> {
    pub model: &'a DiffusionModel,
    pub ranker: Option<&'a RankerModel>,
    pub cov: PerturbationCov,
    pub k: usize,
    pub ddim_steps: usize,
    pub seed: u64,
}

/// All candidates for one scene with their scores and the chosen index.
#[derive(Debug, Clone, Serialize)]
pub struct PlanOutput {
    pub scenario_id: String,
    pub candidates: Vec<Trajectory>,
    pub scores: Option<Vec<ScoreVector>>,
    pub selected: usize,
}

impl Planner<'_> {
    pub fn candidates(&self, s: &Scenario) -> Result<PlanOutput> {
        let mut rng = RngStream::new(derive_seed_str(self.seed, &s.id));
        let m = self.model;
        let candidates = predict_with(m, &m.schedule, &m.scaler, m.target, s, self.k, self.cov, self.ddim_steps, &mut rng)?;
        let (scores, selected) = match self.ranker {
            Some(r) => {
                let set = CandidateSet::new(candidates.clone(), Origin::Planner)?;
                let scores = score(r, &set, s)?;
                let (i, _) = select(&scores, &r.weights)?;
                (Some(scores), i)
            }
            None => (None, 0),
        };
        Ok(PlanOutput {
            scenario_id: s.id.clone(),
            candidates,
            scores,
            selected,
        })
    }

    pub fn plan(&self, s: &Scenario) -> Result<Trajectory> {
        let mut out = self.candidates(s)?;
        Ok(out.candidates.swap_remove(out.selected))
    }
}

impl ExperimentConfig {
    pub fn planner<'a>(&self, model: &'a DiffusionModel, ranker: Option<&'a RankerModel>, k: usize) -> Planner<'a> {
        Planner {
            model,
            ranker: ranker.filter(|_| self.toggles.ranker),
            cov: self.cov(),
            k,
            ddim_steps: self.inference.ddim_steps,
            seed: self.stage_seed("eval"),
        }
    }
}

/// Mean PDMS over the rows whose scenario belongs to `family`.
pub fn family_pdms(report: &EvalReport, scenarios: &[Scenario], family: Family) -> Option<f64> {
    let ids: std::collections::HashSet<&str> = scenarios
        .iter()
        .filter(|s| s.family == family)
        .map(|s| s.id.as_str())
        .collect();
    report.mean_pdms_where(|id| ids.contains(id))
}

// ---- file-backed stages -----------------------------------------------------

fn load_split(path: &Path, cfg: &ExperimentConfig) -> Result<Vec<Scenario>> {
    let (manifest, scenarios) = read_dataset(path)?;
    expect_hash(path, &manifest.generator_config_hash, &cfg.stage_hash(Stage::Data))?;
    Ok(scenarios)
}

pub fn load_train(cfg: &ExperimentConfig) -> Result<Vec<Scenario>> {
    load_split(&cfg.paths.train_data, cfg)
}

pub fn load_test(cfg: &ExperimentConfig) -> Result<Vec<Scenario>> {
    load_split(&cfg.paths.test_data, cfg)
}

pub fn load_norm(cfg: &ExperimentConfig) -> Result<NormArtifact> {
    let path = &cfg.paths.stats;
    let text = read_artifact_string(path)?;
    let norm: NormArtifact = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    if norm.version != NORM_FILE_VERSION {
        return Err(Error::Version {
            path: path.clone(),
            found: norm.version,
            expected: NORM_FILE_VERSION,
        });
    }
    expect_hash(path, &norm.config_hash, &cfg.stage_hash(Stage::Norm))?;
    expect_sha(&cfg.paths.train_data, Some(&norm.dataset_sha256))?;
    Ok(norm)
}

pub fn load_denoiser(cfg: &ExperimentConfig) -> Result<(DiffusionModel, Checkpoint)> {
    let path = &cfg.paths.denoiser;
    let ckpt = Checkpoint::load(path)?;
    expect_hash(path, &ckpt.manifest.config_hash, &cfg.stage_hash(Stage::Denoiser))?;
    expect_sha(&cfg.paths.stats, ckpt.manifest.lineage.get("stats"))?;
    Ok((DiffusionModel::from_checkpoint(&ckpt)?, ckpt))
}

pub fn load_ranker(cfg: &ExperimentConfig) -> Result<RankerModel> {
    let path = &cfg.paths.ranker;
    let ckpt = Checkpoint::load(path)?;
    expect_hash(path, &ckpt.manifest.config_hash, &cfg.stage_hash(Stage::Ranker))?;
    expect_sha(&cfg.paths.denoiser, ckpt.manifest.lineage.get("denoiser"))?;
    RankerModel::from_checkpoint(&ckpt)
}

pub fn gen_data(cfg: &ExperimentConfig) -> Result<Value> {
    let (train, test) = generate_splits(cfg)?;
    let hash = cfg.stage_hash(Stage::Data);
    write_dataset(&train, &cfg.paths.train_data, &hash)?;
    write_dataset(&test, &cfg.paths.test_data, &hash)?;
    Ok(json!({
        "stage": "gen-data",
        "config_hash": hash,
        "train": cfg.paths.train_data,
        "train_count": train.len(),
        "test": cfg.paths.test_data,
        "test_count": test.len(),
    }))
}

pub fn fit_norm(cfg: &ExperimentConfig) -> Result<Value> {
    let train = load_train(cfg)?;
    let norm = fit_norm_artifact(&train, cfg, &file_sha256(&cfg.paths.train_data)?)?;
    write_atomic(&cfg.paths.stats, serde_json::to_string_pretty(&norm)?.as_bytes())?;
    Ok(json!({
        "stage": "fit-norm",
        "config_hash": norm.config_hash,
        "stats": cfg.paths.stats,
        "r_min": norm.pointwise.r_min,
        "r_max": norm.pointwise.r_max,
    }))
}

pub fn train(cfg: &ExperimentConfig) -> Result<Value> {
    let train = load_train(cfg)?;
    let norm = load_norm(cfg)?;
    let out = train_model(&train, &norm, cfg)?;
    let mut lineage = BTreeMap::new();
    lineage.insert("stats".to_string(), file_sha256(&cfg.paths.stats)?);
    lineage.insert("dataset".to_string(), norm.dataset_sha256.clone());
    let hash = cfg.stage_hash(Stage::Denoiser);
    out.model.to_checkpoint(&hash, lineage)?.save(&cfg.paths.denoiser)?;
    let log = Paths::loss_log(&cfg.paths.denoiser);
    write_atomic(&log, loss_log_csv(&out.losses).as_bytes())?;
    Ok(json!({
        "stage": "train",
        "config_hash": hash,
        "checkpoint": cfg.paths.denoiser,
        "loss_log": log,
        "steps": out.losses.len(),
        "final_loss": out.losses.last(),
        "parameters": out.model.net.num_parameters(),
    }))
}

pub fn train_ranker_stage(cfg: &ExperimentConfig) -> Result<Value> {
    let train = load_train(cfg)?;
    let (model, _) = load_denoiser(cfg)?;
    let vocabulary = build_vocabulary(&train, cfg.ranker.vocab_size)?;
    let out = train_ranker_model(&train, &vocabulary, &model, cfg)?;
    let mut lineage = BTreeMap::new();
    lineage.insert("denoiser".to_string(), file_sha256(&cfg.paths.denoiser)?);
    let hash = cfg.stage_hash(Stage::Ranker);
    out.model.to_checkpoint(&hash, lineage)?.save(&cfg.paths.ranker)?;
    let log = Paths::loss_log(&cfg.paths.ranker);
    write_atomic(&log, loss_log_csv(&out.losses).as_bytes())?;
    Ok(json!({
        "stage": "train-ranker",
        "config_hash": hash,
        "checkpoint": cfg.paths.ranker,
        "loss_log": log,
        "steps": out.losses.len(),
        "initial_loss": out.losses.first(),
        "final_loss": out.losses.last(),
    }))
}

/// Which planner `eval` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerKind {
    /// The trained denoiser (plus ranker when enabled).
    Checkpoint,
    /// The scripted expert itself.
    Expert,
    /// The unperturbed constant-velocity reference.
    Reference,
}

impl PlannerKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "checkpoint" => Ok(Self::Checkpoint),
            "expert" => Ok(Self::Expert),
            "reference" => Ok(Self::Reference),
            other => Err(Error::Config(format!(
                "unknown planner `{other}` (expected checkpoint, expert or reference)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Checkpoint => "checkpoint",
            Self::Expert => "expert",
            Self::Reference => "reference",
        }
    }
}

pub fn eval(cfg: &ExperimentConfig, kind: PlannerKind) -> Result<Value> {
    let test = load_test(cfg)?;
    let hash = cfg.stage_hash(Stage::Eval);
    let report = match kind {
        PlannerKind::Checkpoint => {
            let (model, _) = load_denoiser(cfg)?;
            let ranker = if cfg.toggles.ranker { Some(load_ranker(cfg)?) } else { None };
            let planner = cfg.planner(&model, ranker.as_ref(), cfg.inference.k_infer);
            evaluate_planner(&test, |s| planner.plan(s), &cfg.metrics, kind.name(), &hash)?
        }
        PlannerKind::Expert => evaluate_planner(&test, |s| Ok(s.expert.clone()), &cfg.metrics, kind.name(), &hash)?,
        PlannerKind::Reference => evaluate_planner(
            &test,
            |s| inertial_reference(&s.ego, HORIZON, STEP),
            &cfg.metrics,
            kind.name(),
            &hash,
        )?,
    };
    let csv = cfg.paths.report(&format!("eval_{}.csv", kind.name()));
    let agg = cfg.paths.report(&format!("eval_{}.json", kind.name()));
    report.write_csv(&csv)?;
    report.write_aggregate(&agg)?;
    Ok(json!({
        "stage": "eval",
        "planner": kind.name(),
        "config_hash": hash,
        "csv": csv,
        "aggregate": agg,
        "pdms": report.means.pdms,
        "epdms": report.means.epdms,
        "failures": report.means.failures,
    }))
}

pub fn sample(cfg: &ExperimentConfig, count: usize) -> Result<Value> {
    let test = load_test(cfg)?;
    let (model, _) = load_denoiser(cfg)?;
    let ranker = if cfg.toggles.ranker { Some(load_ranker(cfg)?) } else { None };
    let planner = cfg.planner(&model, ranker.as_ref(), cfg.inference.k_infer);
    let outputs = test
        .iter()
        .take(count)
        .map(|s| planner.candidates(s))
        .collect::<Result<Vec<_>>>()?;
    let hash = cfg.stage_hash(Stage::Eval);
    let path = cfg.paths.report("samples.json");
    let doc = json!({ "config_hash": hash, "samples": outputs });
    write_atomic(&path, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    Ok(json!({
        "stage": "sample",
        "config_hash": hash,
        "output": path,
        "scenes": outputs.len(),
        "candidates_per_scene": cfg.inference.k_infer,
    }))
}

pub const DIST_CSV_HEADER: &str = "representation,t,dim,mean,std";

/// Per-timestep mean and std of expert plans as raw waypoints, residuals and
/// normalized residuals.
pub fn distribution_csv(train: &[Scenario], stats: &NormStats) -> Result<(String, Vec<crate::trajcore::HorizonStats>)> {
    let mut out = String::from(DIST_CSV_HEADER);
    out.push('\n');
    let mut all = Vec::new();
    for rep in Representation::ALL {
        let h = horizon_stats(train.iter().map(|s| (&s.ego, &s.expert)), rep, Some(stats))?;
        for t in 0..h.mean.len() {
            for (d, dim) in ["x", "y"].iter().enumerate() {
                out.push_str(&format!("{},{},{dim},{},{}\n", rep.name(), t + 1, h.mean[t][d], h.std[t][d]));
            }
        }
        all.push(h);
    }
    Ok((out, all))
}

pub fn analyze_dist(cfg: &ExperimentConfig) -> Result<Value> {
    let train = load_train(cfg)?;
    let norm = load_norm(cfg)?;
    let (csv, stats) = distribution_csv(&train, &norm.pointwise)?;
    let path = cfg.paths.report("dist.csv");
    write_atomic(&path, csv.as_bytes())?;
    let ratio = |h: &crate::trajcore::HorizonStats| [h.std_ratio(0), h.std_ratio(1)];
    Ok(json!({
        "stage": "analyze-dist",
        "config_hash": norm.config_hash,
        "csv": path,
        "raw_max_abs_mean": [stats[0].max_abs_mean(0), stats[0].max_abs_mean(1)],
        "residual_max_abs_mean": [stats[1].max_abs_mean(0), stats[1].max_abs_mean(1)],
        "raw_std_ratio": ratio(&stats[0]),
        "normalized_std_ratio": ratio(&stats[2]),
    }))
}

/// Candidate spread and selected-plan quality under `cov` versus `Σ = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct DiversityReport {
    pub scenes: usize,
    /// Mean over scenes of the endpoint standard deviation, `sqrt(var x + var y)`.
    pub endpoint_std: f64,
    pub endpoint_std_zero: f64,
    pub pdms: f64,
    pub pdms_zero: f64,
}

/// Population spread of candidate endpoints.
pub fn endpoint_std(candidates: &[Trajectory]) -> f64 {
    let n = candidates.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for c in candidates {
        sx += c.last().x;
        sy += c.last().y;
    }
    let (mx, my) = (sx / n, sy / n);
    let var: f64 = candidates
        .iter()
        .map(|c| (c.last().x - mx).powi(2) + (c.last().y - my).powi(2))
        .sum::<f64>()
        / n;
    var.sqrt()
}

pub fn irp_diversity(planner: &Planner, scenarios: &[Scenario], cfg: &crate::metrics::MetricConfig) -> Result<DiversityReport> {
    let zero = Planner {
        cov: PerturbationCov::ZERO,
        ..*planner
    };
    let mut spread = [0.0, 0.0];
    let mut pdms = [0.0, 0.0];
    for s in scenarios {
        for (i, p) in [planner, &zero].into_iter().enumerate() {
            let out = p.candidates(s)?;
            spread[i] += endpoint_std(&out.candidates);
            let chosen = &out.candidates[out.selected];
            pdms[i] += crate::metrics::pdms(&crate::metrics::sub_metrics(chosen, s, cfg)?);
        }
    }
    let n = scenarios.len().max(1) as f64;
    Ok(DiversityReport {
        scenes: scenarios.len(),
        endpoint_std: spread[0] / n,
        endpoint_std_zero: spread[1] / n,
        pdms: pdms[0] / n,
        pdms_zero: pdms[1] / n,
    })
}
