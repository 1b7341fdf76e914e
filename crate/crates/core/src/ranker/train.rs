use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::net::{candidate_encoding, scene_tokens, RankerArch, RankerNet};
use super::{ranker_targets, CandidateSet, Origin, RankerTargets, SelectionWeights, NUM_METRICS};
use crate::diffusion::{predict_trajectories, Checkpoint, DiffusionModel};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::metrics::MetricConfig;
use crate::numerics::{derive_seed, derive_seed_str, eval, eval_with_grad, Adam, AdamConfig, RngStream, Tape, Tensor, Var};
use crate::scenegen::Scenario;
use crate::trajcore::{PerturbationCov, Trajectory, HORIZON, STEP};

pub const RANKER_KIND: &str = "ranker";

/// Candidates each training scene is scored over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Vocabulary,
    Planner,
    Union,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerConfig {
    pub vocab_size: usize,
    pub arch: RankerArch,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    /// Frozen-planner samples added per scene.
    pub planner_samples: usize,
    pub source: CandidateSource,
    /// Filled in by the caller; not part of the serialized settings.
    #[serde(skip)]
    pub seed: u64,
    pub weights: SelectionWeights,
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            arch: RankerArch::default(),
            epochs: 15,
            batch_size: 16,
            lr: 1e-3,
            clip_norm: 1.0,
            planner_samples: 40,
            source: CandidateSource::Union,
            seed: 0,
            weights: SelectionWeights::default(),
        }
    }
}

impl RankerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("ranker vocab_size, epochs, batch_size and lr must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.weights.imitation) {
            return Err(Error::Config("imitation weight must lie in [0, 1]".into()));
        }
        if self.source != CandidateSource::Vocabulary && self.planner_samples == 0 {
            return Err(Error::Config("planner candidates need planner_samples > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RankerMeta {
    arch: RankerArch,
    horizon: usize,
    step: f64,
    weights: SelectionWeights,
}

/// Trained scorer plus the selection weights it is used with.
#[derive(Debug, Clone)]
pub struct RankerModel {
    pub net: RankerNet,
    pub weights: SelectionWeights,
}

impl RankerModel {
    pub fn to_checkpoint(&self, config_hash: &str, lineage: BTreeMap<String, String>) -> Result<Checkpoint> {
        let meta = RankerMeta {
            arch: self.net.arch,
            horizon: self.net.horizon,
            step: STEP,
            weights: self.weights,
        };
        Ok(Checkpoint::from_params(
            RANKER_KIND,
            config_hash,
            lineage,
            serde_json::to_value(meta)?,
            &self.net.params,
        ))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(RANKER_KIND)?;
        let meta: RankerMeta = serde_json::from_value(ckpt.manifest.model.clone())?;
        if meta.horizon != HORIZON || meta.step != STEP {
            return Err(Error::Invalid("ranker checkpoint was trained for another horizon".into()));
        }
        let mut net = RankerNet::new(meta.arch, meta.horizon, 0)?;
        ckpt.load_into(&mut net.params)?;
        Ok(Self {
            net,
            weights: meta.weights,
        })
    }
}

/// Imitation cross-entropy against `y` plus, per metric head, the binary
/// cross-entropy minus its minimum (`KL(S ‖ Ŝ)`), averaged over candidates.
/// Zero BCE part iff `Ŝ = S`.
pub fn ranker_loss(tape: &mut Tape, metric_logits: Var, imitation_logits: Var, targets: &RankerTargets) -> Result<Var> {
    let k = targets.y.len();
    if tape.shape(metric_logits) != [k, NUM_METRICS] || tape.shape(imitation_logits) != [k, 1] {
        return Err(Error::Shape(format!(
            "ranker logits {:?} / {:?} for {k} targets",
            tape.shape(metric_logits),
            tape.shape(imitation_logits)
        )));
    }
    let row = tape.reshape(imitation_logits, &[1, k]);
    let log_p = tape.log_softmax_rows(row);
    let y = tape.constant(Tensor::new(vec![1, k], targets.y.clone())?);
    let ce = tape.mul(y, log_p);
    let ce = tape.sum(ce);
    let ce = tape.scale(ce, -1.0);

    let s: Vec<f64> = targets.scores.iter().flatten().copied().collect();
    let floor: f64 = s.iter().map(|&p| binary_entropy(p)).sum();
    let s = tape.constant(Tensor::new(vec![k, NUM_METRICS], s)?);
    let sp = tape.softplus(metric_logits);
    let sa = tape.mul(s, metric_logits);
    let bce = tape.sub(sp, sa);
    let bce = tape.sum(bce);
    let bce = tape.add_scalar(bce, -floor);
    let bce = tape.scale(bce, 1.0 / k as f64);
    Ok(tape.add(ce, bce))
}

fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// [`ranker_loss`] evaluated on fixed logits.
pub fn ranker_loss_value(metric_logits: &Tensor, imitation_logits: &Tensor, targets: &RankerTargets) -> Result<f64> {
    eval(&crate::numerics::ParamSet::new(), |tape, _| {
        let m = tape.constant(metric_logits.clone());
        let i = tape.constant(imitation_logits.clone());
        ranker_loss(tape, m, i, targets)
    })
}

#[derive(Debug, Clone)]
pub struct RankerOutcome {
    pub model: RankerModel,
    pub losses: Vec<f64>,
}

/// Per-scene training material; encodings are rebuilt on demand.
struct SceneExample {
    tokens: Tensor,
    ego: Tensor,
    ego_velocity: Vec2,
    planner: Vec<Trajectory>,
    targets: RankerTargets,
}

/// Draws the frozen planner's samples for `scenario`.
pub(crate) fn planner_candidates(
    planner: &DiffusionModel,
    cov: PerturbationCov,
    scenario: &Scenario,
    count: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let mut rng = RngStream::new(derive_seed_str(derive_seed(&[seed, 0x9A]), &scenario.id));
    predict_trajectories(planner, scenario, count, cov, &mut rng)
}

/// Trains a ranker on `scenarios`. Candidates are the vocabulary, samples of
/// the frozen `planner` under `cov`, or both, per `cfg.source`.
pub fn train_ranker(
    scenarios: &[Scenario],
    vocabulary: &CandidateSet,
    planner: Option<(&DiffusionModel, PerturbationCov)>,
    cfg: &RankerConfig,
    metric_cfg: &MetricConfig,
) -> Result<RankerOutcome> {
    cfg.validate()?;
    if scenarios.is_empty() {
        return Err(Error::EmptyDataset);
    }
    vocabulary.validate()?;
    let use_vocab = cfg.source != CandidateSource::Planner;
    let planner = match (cfg.source, planner) {
        (CandidateSource::Vocabulary, _) => None,
        (_, Some(p)) => Some(p),
        (_, None) => return Err(Error::Config("planner candidates requested without a planner".into())),
    };

    let mut examples = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let planner_samples = match planner {
            Some((model, cov)) => planner_candidates(model, cov, s, cfg.planner_samples, cfg.seed)?,
            None => Vec::new(),
        };
        let mut set = if use_vocab {
            vocabulary.clone()
        } else {
            CandidateSet::new(planner_samples.clone(), Origin::Planner)?
        };
        if use_vocab && !planner_samples.is_empty() {
            set.extend(CandidateSet::new(planner_samples.clone(), Origin::Planner)?)?;
        }
        let (tokens, ego) = scene_tokens(&s.features)?;
        examples.push(SceneExample {
            tokens,
            ego,
            ego_velocity: s.ego.velocity,
            planner: planner_samples,
            targets: ranker_targets(&set, &s.expert, s, metric_cfg)?,
        });
    }

    let mut net = RankerNet::new(cfg.arch, HORIZON, derive_seed(&[cfg.seed, 0x4A]))?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            clip_norm: cfg.clip_norm,
            ..AdamConfig::default()
        },
        &net.params,
    );
    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut shuffle = RngStream::new(derive_seed(&[cfg.seed, epoch as u64, 0x5B]));
        for i in (1..order.len()).rev() {
            let j = shuffle.int_in(0, i as u64) as usize;
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let step = losses.len();
            let encodings = chunk
                .iter()
                .map(|&i| {
                    let ex = &examples[i];
                    let mut cands: Vec<Trajectory> = Vec::with_capacity(ex.targets.y.len());
                    if use_vocab {
                        cands.extend_from_slice(&vocabulary.trajectories);
                    }
                    cands.extend_from_slice(&ex.planner);
                    candidate_encoding(&cands, ex.ego_velocity, cfg.arch.octaves)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut params = std::mem::take(&mut net.params);
            let result = eval_with_grad(&mut params, |tape, p| {
                let mut total: Option<Var> = None;
                for (&i, enc) in chunk.iter().zip(&encodings) {
                    let ex = &examples[i];
                    let (m, im) = net.forward(tape, p, &ex.tokens, &ex.ego, enc)?;
                    let l = ranker_loss(tape, m, im, &ex.targets)?;
                    total = Some(match total {
                        Some(t) => tape.add(t, l),
                        None => l,
                    });
                }
                let total = total.expect("chunks are nonempty");
                Ok(tape.scale(total, 1.0 / chunk.len() as f64))
            });
            net.params = params;
            let loss = result.map_err(|e| match e {
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
            adam.step(&mut net.params);
            losses.push(loss);
        }
    }
    net.params.round_to_f32();
    Ok(RankerOutcome {
        model: RankerModel {
            net,
            weights: cfg.weights,
        },
        losses,
    })
}
