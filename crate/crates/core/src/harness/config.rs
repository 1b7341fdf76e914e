use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffusion::{TargetKind, TrainConfig};
use crate::error::{Error, Result};
use crate::io::{read_artifact_string, sha256_hex};
use crate::metrics::MetricConfig;
use crate::numerics::derive_seed_str;
use crate::ranker::RankerConfig;
use crate::scenegen::SceneConfig;
use crate::trajcore::PerturbationCov;

/// Artifact locations. Relative paths resolve against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train_data: PathBuf,
    pub test_data: PathBuf,
    pub stats: PathBuf,
    pub denoiser: PathBuf,
    pub ranker: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        let root = PathBuf::from("artifacts");
        Self {
            train_data: root.join("train.jsonl"),
            test_data: root.join("test.jsonl"),
            stats: root.join("norm.json"),
            denoiser: root.join("denoiser.ckpt"),
            ranker: root.join("ranker.ckpt"),
            reports: root.join("reports"),
        }
    }
}

impl Paths {
    pub fn report(&self, name: &str) -> PathBuf {
        self.reports.join(name)
    }

    /// Loss log written next to a checkpoint: `x.ckpt` -> `x.loss.csv`.
    pub fn loss_log(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("loss.csv")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_count: usize,
    pub test_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_count: 2000,
            test_count: 500,
        }
    }
}

/// Component switches; every combination is valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    /// Predict residuals against the inertial reference instead of raw waypoints.
    pub trm: bool,
    /// Point-wise residual normalization instead of one global min-max range.
    pub prnorm: bool,
    /// Perturb the inertial reference (otherwise `Σ = 0`).
    pub irp: bool,
    /// Pick with the learned ranker (otherwise the first candidate).
    pub ranker: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            trm: true,
            prnorm: true,
            irp: true,
            ranker: true,
        }
    }
}

impl Toggles {
    pub fn target(&self) -> TargetKind {
        if self.trm {
            TargetKind::Residual
        } else {
            TargetKind::Trajectory
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Candidates per scene for `eval` and `sample`.
    pub k_infer: usize,
    /// Candidates per scene inside `ablate`.
    pub k_ablate: usize,
    pub ddim_steps: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            k_infer: 200,
            k_ablate: 50,
            ddim_steps: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    pub data: DataConfig,
    pub scene: SceneConfig,
    pub train: TrainConfig,
    pub ranker: RankerConfig,
    pub metrics: MetricConfig,
    pub toggles: Toggles,
    pub inference: InferenceConfig,
}

/// Pipeline stages whose outputs carry a lineage hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Data,
    Norm,
    Denoiser,
    Ranker,
    Eval,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_artifact_string(path)?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Applies `key = value` overrides given as dot paths into the JSON form.
    /// Values parse as JSON when possible and are taken as strings otherwise.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = self.to_value();
        for (key, raw) in overrides {
            set_path(&mut value, key, parse_scalar(raw))?;
        }
        Self::from_value(value)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.train_count == 0 {
            return Err(Error::Config("data.train_count must be positive".into()));
        }
        if self.inference.k_infer == 0 || self.inference.k_ablate == 0 || self.inference.ddim_steps == 0 {
            return Err(Error::Config("inference sizes must be positive".into()));
        }
        self.train.validate()?;
        self.ranker.validate()
    }

    /// Seed for a named stage, derived from the experiment seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed_str(self.seed, stage)
    }

    /// Training settings with the stage seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.stage_seed("train"),
            ..self.train.clone()
        }
    }

    pub fn ranker_config(&self) -> RankerConfig {
        RankerConfig {
            seed: self.stage_seed("train-ranker"),
            ..self.ranker.clone()
        }
    }

    /// Reference perturbation in effect: `Σ` from the training config, or zero.
    pub fn cov(&self) -> PerturbationCov {
        if self.toggles.irp {
            self.train.cov()
        } else {
            PerturbationCov::ZERO
        }
    }

    /// Hash over exactly the settings that determine a stage's output,
    /// chained through its upstream stages. Paths never contribute.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let t = &self.toggles;
        let parts: Value = match stage {
            Stage::Data => serde_json::json!(["data", self.seed, self.scene, self.data]),
            Stage::Norm => serde_json::json!([
                "norm",
                self.stage_hash(Stage::Data),
                t.trm,
                t.prnorm,
                self.train.gamma,
                self.train.epsilon0
            ]),
            Stage::Denoiser => serde_json::json!(["denoiser", self.stage_hash(Stage::Norm), self.train, t.irp]),
            Stage::Ranker => serde_json::json!([
                "ranker",
                self.stage_hash(Stage::Denoiser),
                self.ranker,
                self.metrics
            ]),
            Stage::Eval => serde_json::json!([
                "eval",
                self.stage_hash(Stage::Ranker),
                t,
                self.inference,
                self.metrics
            ]),
        };
        sha256_hex(&serde_json::to_vec(&parts).expect("hash input serializes"))[..16].to_string()
    }
}

fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(*part))
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
    }
    let map = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("`{key}` does not name a field")))?;
    let last = parts[parts.len() - 1];
    if !map.contains_key(last) {
        return Err(Error::Config(format!("unknown config key `{key}`")));
    }
    map.insert(last.to_string(), value);
    Ok(())
}
