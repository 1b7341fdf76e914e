use serde::{Deserialize, Serialize};

use super::NUM_METRICS;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::metrics::accel_jerk_series;
use crate::numerics::{sinusoidal_features, Linear, ParamSet, RngStream, Tape, Tensor, Var};
use crate::scenegen::{
    scaled_features, CORRIDOR_OFFSET, CORRIDOR_SAMPLES, CORRIDOR_WIDTH, FEATURE_DIM, HALF_WIDTH_INDEX,
    OBSTACLE_OFFSET, OBSTACLE_SLOTS, OBSTACLE_WIDTH, STOP_INDEX, Scenario,
};
use crate::trajcore::Trajectory;

/// Ego, obstacle slots, corridor samples.
pub const SCENE_TOKENS: usize = 1 + OBSTACLE_SLOTS + CORRIDOR_SAMPLES;
const EGO_WIDTH: usize = 3;
const TYPE_COUNT: usize = 3;
/// Block layout `[ego | obstacle | corridor | one-hot type]`, so one affine
/// map acts as a separate embedding per token type.
pub const TOKEN_WIDTH: usize = EGO_WIDTH + OBSTACLE_WIDTH + CORRIDOR_WIDTH + TYPE_COUNT;

const CANDIDATE_SCALE: f64 = 20.0;
/// Kinematic inputs are divided by the default comfort limits.
const ACCEL_SCALE: f64 = 4.0;
const JERK_SCALE: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerArch {
    pub d_model: usize,
    pub octaves: usize,
}

impl Default for RankerArch {
    fn default() -> Self {
        Self {
            d_model: 64,
            octaves: 4,
        }
    }
}

/// Splits a raw scene feature vector into `[SCENE_TOKENS, TOKEN_WIDTH]`
/// tokens, plus the ego-status row `[1, 3]`.
pub fn scene_tokens(features: &[f64]) -> Result<(Tensor, Tensor)> {
    if features.len() != FEATURE_DIM {
        return Err(Error::Shape(format!(
            "scene has {} features, ranker expects {FEATURE_DIM}",
            features.len()
        )));
    }
    let f = scaled_features(features);
    let ego = [f[0], f[HALF_WIDTH_INDEX], f[STOP_INDEX]];
    let mut tokens = vec![0.0; SCENE_TOKENS * TOKEN_WIDTH];
    let type_col = EGO_WIDTH + OBSTACLE_WIDTH + CORRIDOR_WIDTH;
    tokens[..EGO_WIDTH].copy_from_slice(&ego);
    tokens[type_col] = 1.0;
    for j in 0..OBSTACLE_SLOTS {
        let row = &mut tokens[(1 + j) * TOKEN_WIDTH..(2 + j) * TOKEN_WIDTH];
        let src = OBSTACLE_OFFSET + j * OBSTACLE_WIDTH;
        row[EGO_WIDTH..EGO_WIDTH + OBSTACLE_WIDTH].copy_from_slice(&f[src..src + OBSTACLE_WIDTH]);
        row[type_col + 1] = 1.0;
    }
    for j in 0..CORRIDOR_SAMPLES {
        let r = 1 + OBSTACLE_SLOTS + j;
        let row = &mut tokens[r * TOKEN_WIDTH..(r + 1) * TOKEN_WIDTH];
        let src = CORRIDOR_OFFSET + j * CORRIDOR_WIDTH;
        let dst = EGO_WIDTH + OBSTACLE_WIDTH;
        row[dst..dst + CORRIDOR_WIDTH].copy_from_slice(&f[src..src + CORRIDOR_WIDTH]);
        row[type_col + 2] = 1.0;
    }
    Ok((
        Tensor::new(vec![SCENE_TOKENS, TOKEN_WIDTH], tokens)?,
        Tensor::new(vec![1, EGO_WIDTH], ego.to_vec())?,
    ))
}

/// Width of [`candidate_encoding`] for `horizon` waypoints.
pub fn candidate_width(horizon: usize, octaves: usize) -> usize {
    // Positional block, then acceleration and jerk vectors with their norms.
    2 * horizon * (1 + 2 * octaves) + 3 * horizon + 3 * (horizon - 1)
}

/// Per-candidate inputs `[k, candidate_width]`: a sinusoidal encoding of the
/// waypoints, then their finite-difference accelerations and jerks given the
/// ego's current velocity. Small waypoint wiggles that decide comfort are
/// invisible at the positional scale, so they get their own block.
pub fn candidate_encoding(candidates: &[Trajectory], ego_velocity: Vec2, octaves: usize) -> Result<Tensor> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::Invalid("no candidates to encode".into()))?;
    let horizon = first.len();
    if horizon < 2 {
        return Err(Error::Shape("candidates need at least two waypoints".into()));
    }
    let width = candidate_width(horizon, octaves);
    let mut data = Vec::with_capacity(candidates.len() * width);
    let mut path = Vec::with_capacity(horizon + 1);
    for c in candidates {
        if c.len() != horizon {
            return Err(Error::Shape("candidates differ in length".into()));
        }
        let scaled: Vec<f64> = c.to_flat().iter().map(|v| v / CANDIDATE_SCALE).collect();
        data.extend(sinusoidal_features(&scaled, octaves));
        path.clear();
        path.push(Vec2::ZERO);
        path.extend_from_slice(&c.waypoints);
        let (acc, jerk) = accel_jerk_series(&path, ego_velocity, c.dt);
        for (series, scale) in [(acc, ACCEL_SCALE), (jerk, JERK_SCALE)] {
            data.extend(series.iter().flat_map(|a| [a.x / scale, a.y / scale]));
            data.extend(series.iter().map(|a| a.norm() / scale));
        }
    }
    Tensor::new(vec![candidates.len(), width], data)
}

/// One cross-attention block: candidate embeddings query the scene tokens,
/// the ego-status embedding is added to the result, and separate heads read
/// out the metric logits and the imitation logit.
#[derive(Debug, Clone)]
pub struct RankerNet {
    pub arch: RankerArch,
    pub params: ParamSet,
    pub horizon: usize,
    token_embed: Linear,
    key: Linear,
    value: Linear,
    cand_in: Linear,
    cand_out: Linear,
    query: Linear,
    attn_out: Linear,
    ego_embed: Linear,
    hidden: Linear,
    metric_head: Linear,
    imitation_head: Linear,
}

/// Raw head outputs: `[k, NUM_METRICS]` and `[k, 1]` logits.
#[derive(Debug, Clone)]
pub struct RankerOutputs {
    pub metric_logits: Tensor,
    pub imitation_logits: Tensor,
}

impl RankerNet {
    pub fn new(arch: RankerArch, horizon: usize, seed: u64) -> Result<Self> {
        if arch.d_model == 0 || horizon == 0 {
            return Err(Error::Config("ranker width and horizon must be positive".into()));
        }
        let mut rng = RngStream::new(seed);
        let mut params = ParamSet::new();
        let p = &mut params;
        let d = arch.d_model;
        if horizon < 2 {
            return Err(Error::Config("ranker horizon must be at least 2".into()));
        }
        let enc = candidate_width(horizon, arch.octaves);
        let token_embed = Linear::new(p, "tokens", TOKEN_WIDTH, d, &mut rng);
        let key = Linear::new(p, "attn.key", d, d, &mut rng);
        let value = Linear::new(p, "attn.value", d, d, &mut rng);
        let cand_in = Linear::new(p, "candidate.0", enc, d, &mut rng);
        let cand_out = Linear::new(p, "candidate.1", d, d, &mut rng);
        let query = Linear::new(p, "attn.query", d, d, &mut rng);
        let attn_out = Linear::new(p, "attn.out", d, d, &mut rng);
        let ego_embed = Linear::new(p, "ego", EGO_WIDTH, d, &mut rng);
        let hidden = Linear::new(p, "head.hidden", d, d, &mut rng);
        let metric_head = Linear::new(p, "head.metrics", d, NUM_METRICS, &mut rng);
        let imitation_head = Linear::new(p, "head.imitation", d, 1, &mut rng);
        Ok(Self {
            arch,
            params,
            horizon,
            token_embed,
            key,
            value,
            cand_in,
            cand_out,
            query,
            attn_out,
            ego_embed,
            hidden,
            metric_head,
            imitation_head,
        })
    }

    /// Builds the scoring graph for one scene. Returns the metric and
    /// imitation logits.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        tokens: &Tensor,
        ego: &Tensor,
        candidates: &Tensor,
    ) -> Result<(Var, Var)> {
        let enc = candidate_width(self.horizon, self.arch.octaves);
        if tokens.shape() != [SCENE_TOKENS, TOKEN_WIDTH] || ego.shape() != [1, EGO_WIDTH] || candidates.cols() != enc {
            return Err(Error::Shape(format!(
                "ranker inputs: tokens {:?}, ego {:?}, candidates {:?}",
                tokens.shape(),
                ego.shape(),
                candidates.shape()
            )));
        }
        let tokens = tape.constant(tokens.clone());
        let env = self.token_embed.forward(tape, params, tokens);
        let env = tape.silu(env);
        let keys = self.key.forward(tape, params, env);
        let values = self.value.forward(tape, params, env);

        let cand = tape.constant(candidates.clone());
        let v = self.cand_in.forward(tape, params, cand);
        let v = tape.silu(v);
        let v = self.cand_out.forward(tape, params, v);

        let q = self.query.forward(tape, params, v);
        let logits = tape.matmul_nt(q, keys);
        let logits = tape.scale(logits, 1.0 / (self.arch.d_model as f64).sqrt());
        let attn = tape.softmax_rows(logits);
        let mixed = tape.matmul(attn, values);
        let mixed = self.attn_out.forward(tape, params, mixed);

        let ego = tape.constant(ego.clone());
        let ego = self.ego_embed.forward(tape, params, ego);
        let h = tape.add(v, mixed);
        let h = tape.add_row(h, ego);
        let h = self.hidden.forward(tape, params, h);
        let h = tape.silu(h);
        Ok((
            self.metric_head.forward(tape, params, h),
            self.imitation_head.forward(tape, params, h),
        ))
    }

    pub fn predict(&self, scenario: &Scenario, candidates: &[Trajectory]) -> Result<RankerOutputs> {
        let (tokens, ego) = scene_tokens(&scenario.features)?;
        let enc = candidate_encoding(candidates, scenario.ego.velocity, self.arch.octaves)?;
        let mut tape = Tape::new();
        let (m, i) = self.forward(&mut tape, &self.params, &tokens, &ego, &enc)?;
        tape.check()?;
        Ok(RankerOutputs {
            metric_logits: tape.value(m).clone(),
            imitation_logits: tape.value(i).clone(),
        })
    }
}
