use serde::{Deserialize, Serialize};

use super::model::{DiffusionModel, TargetKind};
use super::net::{reference_encoding, timestep_embedding, DenoiserArch, DenoiserInputs, PLAN_DIM};
use super::schedule::{make_schedule, mix, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, derive_seed_str, eval_with_grad, Adam, AdamConfig, RngStream, Tensor};
use crate::scenegen::{scaled_features, Scenario};
use crate::trajcore::{
    fit_global_minmax, fit_norm_stats, inertial_reference, perturb_references, residual, PerturbationCov, Residual,
    Scaler, HORIZON, STEP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1,
    Mse,
}

/// Where the reconstruction error is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpace {
    Normalized,
    /// Errors are rescaled to metres before the loss is applied.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 2e-2,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_min, self.beta_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub k_train: usize,
    /// Perturbation standard deviations (longitudinal, lateral) in m/s.
    pub sigma: [f64; 2],
    pub gamma: f64,
    pub epsilon0: f64,
    /// Filled in by the caller; not part of the serialized settings.
    #[serde(skip)]
    pub seed: u64,
    pub loss: LossKind,
    pub loss_space: LossSpace,
    pub arch: DenoiserArch,
    pub schedule: ScheduleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 180,
            batch_size: 8,
            lr: 1e-3,
            clip_norm: 1.0,
            k_train: 20,
            sigma: [1.0, 0.5],
            gamma: 1.0,
            epsilon0: 0.5,
            seed: 0,
            loss: LossKind::L1,
            loss_space: LossSpace::Normalized,
            arch: DenoiserArch::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn cov(&self) -> PerturbationCov {
        PerturbationCov::from_std(self.sigma[0], self.sigma[1])
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.epochs > 0 && self.batch_size > 0 && self.k_train > 0;
        if !positive || !(self.lr > 0.0) || !(self.gamma > 0.0) || !(self.epsilon0 > 0.0) {
            return Err(Error::Config(
                "epochs, batch_size, k_train, lr, gamma and epsilon0 must be positive".into(),
            ));
        }
        if !(self.sigma[0] >= 0.0 && self.sigma[1] >= 0.0) || !(self.clip_norm >= 0.0) {
            return Err(Error::Config("sigma and clip_norm must be nonnegative".into()));
        }
        self.arch.validate()?;
        self.schedule.build().map(|_| ())
    }
}

fn expert_residual(s: &Scenario) -> Result<Residual> {
    residual(&s.expert, &inertial_reference(&s.ego, HORIZON, STEP)?)
}

/// Fits the target normalization on unperturbed training targets:
/// point-wise stats when `pointwise`, one global min-max range otherwise.
pub fn fit_scaler(scenarios: &[Scenario], target: TargetKind, pointwise: bool, gamma: f64, epsilon0: f64) -> Result<Scaler> {
    if scenarios.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let flats: Vec<Vec<f64>> = scenarios
        .iter()
        .map(|s| match target {
            TargetKind::Residual => expert_residual(s).map(|r| r.to_flat()),
            TargetKind::Trajectory => Ok(s.expert.to_flat()),
        })
        .collect::<Result<_>>()?;
    if pointwise {
        let as_residuals: Vec<Residual> = flats.iter().map(|f| Residual::from_flat(f)).collect();
        Ok(Scaler::PointWise(fit_norm_stats(&as_residuals, gamma, epsilon0)?))
    } else {
        Ok(Scaler::Global(fit_global_minmax(flats.iter().map(|f| f.as_slice()), epsilon0)?))
    }
}

/// Per-coordinate factor from normalized units to metres.
fn raw_scale(scaler: &Scaler) -> [f64; PLAN_DIM] {
    let mut out = [0.0; PLAN_DIM];
    for (i, v) in out.iter_mut().enumerate() {
        *v = match scaler {
            Scaler::PointWise(s) => (s.r_max[i % 2] - s.r_min[i % 2] + s.epsilon0) / (2.0 * s.gamma),
            Scaler::Global(g) => g.max - g.min + g.epsilon0,
        };
    }
    out
}

/// Noised training members for one scene.
struct SceneBatch {
    features: Vec<f64>,
    time: Vec<f64>,
    reference: Vec<f64>,
    noisy: Vec<f64>,
    clean: Vec<f64>,
}

fn build_members(
    s: &Scenario,
    model: &DiffusionModel,
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<SceneBatch> {
    let arch = &model.net.arch;
    let cluster = perturb_references(&s.ego, cfg.cov(), cfg.k_train, HORIZON, STEP, rng)?;
    let k = cfg.k_train;
    let mut out = SceneBatch {
        features: scaled_features(&s.features),
        time: Vec::with_capacity(k * arch.time_dim),
        reference: Vec::with_capacity(k * arch.ref_encoding_dim()),
        noisy: Vec::with_capacity(k * PLAN_DIM),
        clean: Vec::with_capacity(k * PLAN_DIM),
    };
    if out.features.len() != arch.feature_dim {
        return Err(Error::Shape(format!(
            "scenario {} has {} features, model expects {}",
            s.id,
            out.features.len(),
            arch.feature_dim
        )));
    }
    for reference in &cluster.references {
        let raw = match model.target {
            TargetKind::Residual => residual(&s.expert, reference)?.to_flat(),
            TargetKind::Trajectory => s.expert.to_flat(),
        };
        let clean = model.scaler.normalize_flat(&raw);
        let step = rng.int_in(1, model.schedule.steps as u64) as usize;
        let eps: Vec<f64> = (0..PLAN_DIM).map(|_| rng.gaussian()).collect();
        out.noisy.extend(mix(model.schedule.alpha_bar(step), &clean, &eps));
        out.clean.extend(clean);
        out.time.extend(timestep_embedding(step, arch.time_dim));
        out.reference.extend(reference_encoding(&reference.to_flat(), arch.ref_octaves));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DiffusionModel,
    /// Mean per-scene loss of every optimizer step.
    pub losses: Vec<f64>,
}

/// Trains a fresh denoiser on `scenarios`. Each optimizer step sums the
/// reconstruction loss over members and coordinates and averages over the
/// scenes in the batch. Weights end rounded to `f32`, the checkpoint precision.
pub fn train_denoiser(scenarios: &[Scenario], scaler: Scaler, target: TargetKind, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scenarios.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let schedule = cfg.schedule.build()?;
    let mut model = DiffusionModel::new(cfg.arch, schedule, scaler, target, derive_seed(&[cfg.seed, 0xD1F]))?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            clip_norm: cfg.clip_norm,
            ..AdamConfig::default()
        },
        &model.net.params,
    );
    let scale = raw_scale(&model.scaler);
    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..scenarios.len()).collect();
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(&[cfg.seed, epoch as u64]);
        let mut shuffle = RngStream::new(derive_seed(&[epoch_seed, 0x5B]));
        for i in (1..order.len()).rev() {
            let j = shuffle.int_in(0, i as u64) as usize;
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let step = losses.len();
            let scenes: Vec<SceneBatch> = chunk
                .iter()
                .map(|&i| {
                    let s = &scenarios[i];
                    let mut rng = RngStream::new(derive_seed_str(epoch_seed, &s.id));
                    build_members(s, &model, cfg, &mut rng)
                })
                .collect::<Result<_>>()?;
            let loss = batch_loss(&mut model, &scenes, cfg, &scale).map_err(|e| match e {
                Error::NonFinite(op) => Error::Diverged {
                    step,
                    reason: format!("non-finite value in {op}"),
                },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    reason: format!("loss is {loss}"),
                });
            }
            adam.step(&mut model.net.params);
            losses.push(loss);
        }
    }
    model.net.params.round_to_f32();
    Ok(TrainOutcome { model, losses })
}

fn batch_loss(model: &mut DiffusionModel, scenes: &[SceneBatch], cfg: &TrainConfig, scale: &[f64; PLAN_DIM]) -> Result<f64> {
    let arch = model.net.arch;
    let k = cfg.k_train;
    let rows = scenes.len() * k;
    let cat = |f: fn(&SceneBatch) -> &Vec<f64>| scenes.iter().flat_map(|s| f(s).iter().copied()).collect::<Vec<f64>>();
    let inputs = DenoiserInputs {
        features: Tensor::new(vec![scenes.len(), arch.feature_dim], cat(|s| &s.features))?,
        scene_of: (0..rows).map(|r| r / k).collect(),
        time: Tensor::new(vec![rows, arch.time_dim], cat(|s| &s.time))?,
        reference: Tensor::new(vec![rows, arch.ref_encoding_dim()], cat(|s| &s.reference))?,
        noisy: Tensor::new(vec![rows, PLAN_DIM], cat(|s| &s.noisy))?,
    };
    let clean = Tensor::new(vec![rows, PLAN_DIM], cat(|s| &s.clean))?;
    let weights = match cfg.loss_space {
        LossSpace::Normalized => None,
        LossSpace::Raw => Some(Tensor::new(vec![rows, PLAN_DIM], scale.repeat(rows))?),
    };
    let mut params = std::mem::take(&mut model.net.params);
    let net = &model.net;
    let result = eval_with_grad(&mut params, |tape, p| {
        let pred = net.forward(tape, p, &inputs)?;
        let target = tape.constant(clean.clone());
        let mut diff = tape.sub(pred, target);
        if let Some(w) = &weights {
            let w = tape.constant(w.clone());
            diff = tape.mul(diff, w);
        }
        let per = match cfg.loss {
            LossKind::L1 => tape.abs(diff),
            LossKind::Mse => tape.square(diff),
        };
        let total = tape.sum(per);
        Ok(tape.scale(total, 1.0 / scenes.len() as f64))
    });
    model.net.params = params;
    result
}
