//! Learned candidate scoring: a cross-attention network predicts the
//! rule-based sub-metrics of every candidate plan, and the plan with the best
//! PDMS-weighted prediction is selected.

mod net;
mod train;

use serde::{Deserialize, Serialize};

pub use net::{candidate_encoding, candidate_width, scene_tokens, RankerArch, RankerNet, RankerOutputs, SCENE_TOKENS, TOKEN_WIDTH};
pub use train::{
    ranker_loss, ranker_loss_value, train_ranker, CandidateSource, RankerConfig, RankerModel, RankerOutcome,
    RANKER_KIND,
};

use crate::error::{Error, Result};
use crate::metrics::{sub_metrics, MetricConfig};
use crate::numerics::sigmoid;
use crate::scenegen::Scenario;
use crate::trajcore::Trajectory;

/// Metrics predicted by the score heads, in head order.
pub const METRICS: [&str; 5] = ["nc", "dac", "ttc", "comfort", "ep"];
pub const NUM_METRICS: usize = METRICS.len();

/// Where a candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Vocabulary,
    Planner,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub trajectories: Vec<Trajectory>,
    pub origins: Vec<Origin>,
}

impl CandidateSet {
    pub fn new(trajectories: Vec<Trajectory>, origin: Origin) -> Result<Self> {
        let origins = vec![origin; trajectories.len()];
        let set = Self { trajectories, origins };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .trajectories
            .first()
            .ok_or_else(|| Error::Invalid("candidate set is empty".into()))?;
        if self.origins.len() != self.trajectories.len() {
            return Err(Error::Shape("one origin per candidate is required".into()));
        }
        if self.trajectories.iter().any(|t| t.len() != first.len() || t.dt != first.dt) {
            return Err(Error::Shape("candidates must share horizon and step".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Appends `other`, keeping each candidate's origin.
    pub fn extend(&mut self, other: CandidateSet) -> Result<()> {
        self.trajectories.extend(other.trajectories);
        self.origins.extend(other.origins);
        self.validate()
    }
}

/// Greedy farthest-point selection under average point-wise distance: the
/// medoid first, then repeatedly the trajectory farthest from everything
/// chosen so far. Ties go to the lowest index.
pub fn farthest_point_indices(trajectories: &[Trajectory], size: usize) -> Result<Vec<usize>> {
    if size == 0 {
        return Err(Error::Invalid("vocabulary size must be at least 1".into()));
    }
    if trajectories.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = trajectories.len();
    if size > n {
        return Err(Error::Invalid(format!("vocabulary size {size} exceeds the {n} available trajectories")));
    }
    let mut totals = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = trajectories[i].ade(&trajectories[j]);
            totals[i] += d;
            totals[j] += d;
        }
    }
    let medoid = argmax_by(&totals, |t| -t);
    let mut chosen = vec![medoid];
    let mut taken = vec![false; n];
    taken[medoid] = true;
    let mut nearest: Vec<f64> = trajectories.iter().map(|t| t.ade(&trajectories[medoid])).collect();
    while chosen.len() < size {
        let mut best = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            if best.is_none_or(|b: usize| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let pick = best.expect("size <= n leaves a candidate");
        taken[pick] = true;
        chosen.push(pick);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(trajectories[i].ade(&trajectories[pick]));
        }
    }
    Ok(chosen)
}

/// Lowest index maximizing `key`.
fn argmax_by(values: &[f64], key: impl Fn(f64) -> f64) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if key(values[i]) > key(values[best]) {
            best = i;
        }
    }
    best
}

/// Fixed candidate vocabulary drawn from the experts of `scenarios`.
pub fn build_vocabulary(scenarios: &[Scenario], size: usize) -> Result<CandidateSet> {
    let experts: Vec<Trajectory> = scenarios.iter().map(|s| s.expert.clone()).collect();
    let picks = farthest_point_indices(&experts, size)?;
    CandidateSet::new(picks.into_iter().map(|i| experts[i].clone()).collect(), Origin::Vocabulary)
}

/// Supervision for one scene's candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerTargets {
    /// Soft imitation distribution, `∝ exp(−‖τ_gt − τ_i‖²)`.
    pub y: Vec<f64>,
    /// Oracle sub-scores per candidate in [`METRICS`] order.
    pub scores: Vec<[f64; NUM_METRICS]>,
}

/// `softmax(−d_i)` computed with the minimum subtracted first.
pub fn imitation_distribution(sq_distances: &[f64]) -> Vec<f64> {
    let lo = sq_distances.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = sq_distances.iter().map(|d| (-(d - lo)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

pub fn ranker_targets(
    candidates: &CandidateSet,
    expert: &Trajectory,
    scenario: &Scenario,
    cfg: &MetricConfig,
) -> Result<RankerTargets> {
    candidates.validate()?;
    let d: Vec<f64> = candidates.trajectories.iter().map(|t| t.squared_distance(expert)).collect();
    let scores = candidates
        .trajectories
        .iter()
        .map(|t| {
            let m = sub_metrics(t, scenario, cfg)?;
            Ok([m.nc, m.dac, m.ttc, m.comfort, m.ep])
        })
        .collect::<Result<_>>()?;
    Ok(RankerTargets {
        y: imitation_distribution(&d),
        scores,
    })
}

/// Predicted sub-scores and imitation logit of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub metrics: [f64; NUM_METRICS],
    pub imitation_logit: f64,
}

/// PDMS weights applied to predicted sub-scores, plus an optional share of
/// the imitation probability mixed into the selection score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionWeights {
    pub ttc: f64,
    pub comfort: f64,
    pub ep: f64,
    /// In `[0, 1]`; `0` ignores the imitation head.
    pub imitation: f64,
}

impl Default for SelectionWeights {
    fn default() -> Self {
        Self {
            ttc: 5.0,
            comfort: 2.0,
            ep: 5.0,
            imitation: 0.0,
        }
    }
}

impl SelectionWeights {
    pub fn weighted(&self, m: &[f64; NUM_METRICS]) -> f64 {
        let [nc, dac, ttc, comfort, ep] = *m;
        nc * dac * (self.ttc * ttc + self.comfort * comfort + self.ep * ep) / (self.ttc + self.comfort + self.ep)
    }
}

/// Index and weighted score of the best candidate; ties go to the lowest index.
pub fn select(scores: &[ScoreVector], weights: &SelectionWeights) -> Result<(usize, f64)> {
    if scores.is_empty() {
        return Err(Error::Invalid("cannot select from an empty candidate set".into()));
    }
    let mut weighted: Vec<f64> = scores.iter().map(|s| weights.weighted(&s.metrics)).collect();
    if weights.imitation > 0.0 {
        let logits: Vec<f64> = scores.iter().map(|s| -s.imitation_logit).collect();
        let p = imitation_distribution(&logits);
        for (w, p) in weighted.iter_mut().zip(p) {
            *w = (1.0 - weights.imitation) * *w + weights.imitation * p;
        }
    }
    let best = argmax_by(&weighted, |v| v);
    Ok((best, weighted[best]))
}

/// Scores every candidate of `scenario` with a trained ranker.
pub fn score(model: &RankerModel, candidates: &CandidateSet, scenario: &Scenario) -> Result<Vec<ScoreVector>> {
    candidates.validate()?;
    let out = model.net.predict(scenario, &candidates.trajectories)?;
    Ok((0..candidates.len())
        .map(|i| {
            let row = out.metric_logits.row(i);
            ScoreVector {
                metrics: std::array::from_fn(|m| sigmoid(row[m])),
                imitation_logit: out.imitation_logits.data()[i],
            }
        })
        .collect())
}
