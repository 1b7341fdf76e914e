use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::net::{reference_encoding, timestep_embedding, DenoiserArch, DenoiserInputs, DenoiserNet, PLAN_DIM};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};
use crate::scenegen::{scaled_features, Scenario};
use crate::trajcore::{compose, perturb_references, PerturbationCov, Residual, Scaler, Trajectory, HORIZON, STEP};

pub const DENOISER_KIND: &str = "denoiser";

/// Default number of DDIM steps at inference.
pub const DDIM_STEPS: usize = 2;

/// What the diffusion model generates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Offsets from each member's inertial reference.
    Residual,
    /// Absolute waypoints; the reference only conditions the network.
    Trajectory,
}

/// Everything the denoiser sees for one scene: its raw feature vector and
/// the `K` member references.
#[derive(Debug, Clone)]
pub struct ClusterCondition {
    pub features: Vec<f64>,
    pub references: Vec<Trajectory>,
}

impl ClusterCondition {
    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }
}

/// Predicts the clean normalized sample `x0` for every member from its noisy
/// version `z` at `step`. `noisy` and the result are `[K, PLAN_DIM]`.
pub trait Denoiser {
    fn predict_x0(&self, noisy: &Tensor, step: usize, cond: &ClusterCondition) -> Result<Tensor>;
}

/// Always predicts `x0 = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict_x0(&self, noisy: &Tensor, _step: usize, _cond: &ClusterCondition) -> Result<Tensor> {
        Ok(Tensor::zeros(noisy.shape()))
    }
}

/// Deterministic (`η = 0`) DDIM over the sub-schedule `ddim_steps(steps)`
/// followed by the final jump to `ᾱ = 1`. The initial noise is the next
/// `K × PLAN_DIM` Gaussians of `rng`.
pub fn ddim_sample(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cond: &ClusterCondition,
    steps: usize,
    rng: &mut RngStream,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::Invalid("DDIM needs at least one step".into()));
    }
    if cond.is_empty() {
        return Err(Error::Invalid("empty conditioning cluster".into()));
    }
    let k = cond.len();
    let mut z = rng.sample_gaussian(&[k, PLAN_DIM]);
    let mut times = schedule.ddim_steps(steps);
    times.push(0);
    for pair in times.windows(2) {
        let (t, next) = (pair[0], pair[1]);
        let x0 = denoiser.predict_x0(&z, t, cond)?;
        if x0.shape() != z.shape() {
            return Err(Error::Shape(format!(
                "denoiser returned {:?} for input {:?}",
                x0.shape(),
                z.shape()
            )));
        }
        let (a, a_next) = (schedule.alpha_bar(t), schedule.alpha_bar(next));
        let (sa, sb) = (a.sqrt(), (1.0 - a).sqrt());
        let (na, nb) = (a_next.sqrt(), (1.0 - a_next).sqrt());
        let data = z
            .data()
            .iter()
            .zip(x0.data())
            .map(|(&zi, &xi)| {
                let eps = (zi - sa * xi) / sb;
                na * xi + nb * eps
            })
            .collect();
        z = Tensor::new(vec![k, PLAN_DIM], data)?;
    }
    if !z.is_finite() {
        return Err(Error::NonFinite("ddim_sample".into()));
    }
    Ok(z)
}

/// Settings stored in a denoiser checkpoint's manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserMeta {
    pub arch: DenoiserArch,
    pub schedule: NoiseSchedule,
    pub scaler: Scaler,
    pub target: TargetKind,
    pub horizon: usize,
    pub step: f64,
}

/// A denoiser network with the schedule and target normalization it was
/// trained under.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub net: DenoiserNet,
    pub schedule: NoiseSchedule,
    pub scaler: Scaler,
    pub target: TargetKind,
}

impl DiffusionModel {
    pub fn new(arch: DenoiserArch, schedule: NoiseSchedule, scaler: Scaler, target: TargetKind, seed: u64) -> Result<Self> {
        Ok(Self {
            net: DenoiserNet::new(arch, seed)?,
            schedule,
            scaler,
            target,
        })
    }

    pub fn meta(&self) -> DenoiserMeta {
        DenoiserMeta {
            arch: self.net.arch,
            schedule: self.schedule.clone(),
            scaler: self.scaler.clone(),
            target: self.target,
            horizon: HORIZON,
            step: STEP,
        }
    }

    pub fn to_checkpoint(&self, config_hash: &str, lineage: BTreeMap<String, String>) -> Result<Checkpoint> {
        Ok(Checkpoint::from_params(
            DENOISER_KIND,
            config_hash,
            lineage,
            serde_json::to_value(self.meta())?,
            &self.net.params,
        ))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(DENOISER_KIND)?;
        let meta: DenoiserMeta = serde_json::from_value(ckpt.manifest.model.clone())?;
        if meta.horizon != HORIZON || meta.step != STEP {
            return Err(Error::Invalid(format!(
                "checkpoint plans {} steps of {} s, expected {HORIZON} of {STEP} s",
                meta.horizon, meta.step
            )));
        }
        let mut net = DenoiserNet::new(meta.arch, 0)?;
        ckpt.load_into(&mut net.params)?;
        Ok(Self {
            net,
            schedule: meta.schedule.rebuilt()?,
            scaler: meta.scaler,
            target: meta.target,
        })
    }

    /// Assembles network inputs for `K` members of one scene.
    pub fn inputs(&self, noisy: &Tensor, step: usize, cond: &ClusterCondition) -> Result<DenoiserInputs> {
        let arch = &self.net.arch;
        if cond.features.len() != arch.feature_dim {
            return Err(Error::Shape(format!(
                "scene has {} features, model expects {}",
                cond.features.len(),
                arch.feature_dim
            )));
        }
        let k = cond.len();
        let time_row = timestep_embedding(step, arch.time_dim);
        let time = Tensor::new(vec![k, arch.time_dim], time_row.repeat(k))?;
        let mut reference = Vec::with_capacity(k * arch.ref_encoding_dim());
        for r in &cond.references {
            if r.len() != HORIZON {
                return Err(Error::Shape(format!("reference has {} waypoints, expected {HORIZON}", r.len())));
            }
            reference.extend(reference_encoding(&r.to_flat(), arch.ref_octaves));
        }
        Ok(DenoiserInputs {
            features: Tensor::new(vec![1, arch.feature_dim], scaled_features(&cond.features))?,
            scene_of: vec![0; k],
            time,
            reference: Tensor::new(vec![k, arch.ref_encoding_dim()], reference)?,
            noisy: noisy.clone(),
        })
    }
}

impl Denoiser for DiffusionModel {
    fn predict_x0(&self, noisy: &Tensor, step: usize, cond: &ClusterCondition) -> Result<Tensor> {
        self.net.predict(&self.inputs(noisy, step, cond)?)
    }
}

/// Turns normalized samples back into trajectories, one per reference.
pub fn decode_samples(
    samples: &Tensor,
    references: &[Trajectory],
    scaler: &Scaler,
    target: TargetKind,
) -> Result<Vec<Trajectory>> {
    if samples.shape() != [references.len(), PLAN_DIM] {
        return Err(Error::Shape(format!(
            "{:?} samples for {} references",
            samples.shape(),
            references.len()
        )));
    }
    references
        .iter()
        .enumerate()
        .map(|(k, reference)| {
            let raw = scaler.denormalize_flat(samples.row(k));
            match target {
                TargetKind::Residual => compose(reference, &Residual::from_flat(&raw)),
                TargetKind::Trajectory => Trajectory::from_flat(&raw, STEP),
            }
        })
        .collect()
}

/// Full inference path: perturb `k` references with `cov`, run DDIM, and
/// decode each member against its own reference. Draws the perturbations
/// from `rng` first, then the initial noise.
pub fn predict_with(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    scaler: &Scaler,
    target: TargetKind,
    scenario: &Scenario,
    k: usize,
    cov: PerturbationCov,
    steps: usize,
    rng: &mut RngStream,
) -> Result<Vec<Trajectory>> {
    let cluster = perturb_references(&scenario.ego, cov, k, HORIZON, STEP, rng)?;
    let cond = ClusterCondition {
        features: scenario.features.clone(),
        references: cluster.references,
    };
    let samples = ddim_sample(denoiser, schedule, &cond, steps, rng)?;
    decode_samples(&samples, &cond.references, scaler, target)
}

/// `k` candidate plans for `scenario` from a trained model with 2-step DDIM.
pub fn predict_trajectories(
    model: &DiffusionModel,
    scenario: &Scenario,
    k: usize,
    cov: PerturbationCov,
    rng: &mut RngStream,
) -> Result<Vec<Trajectory>> {
    predict_with(
        model,
        &model.schedule,
        &model.scaler,
        model.target,
        scenario,
        k,
        cov,
        DDIM_STEPS,
        rng,
    )
}
