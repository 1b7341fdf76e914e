use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sinusoidal_features, Linear, ParamSet, RngStream, Tape, Tensor, Var};
use crate::scenegen::FEATURE_DIM;
use crate::trajcore::HORIZON;

/// Flattened waypoint count of one plan (`T_f × 2`).
pub const PLAN_DIM: usize = HORIZON * 2;

/// Reference coordinates are divided by this before the sinusoidal encoding.
pub const REFERENCE_SCALE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserArch {
    pub feature_dim: usize,
    pub hidden: usize,
    pub cond_dim: usize,
    pub time_dim: usize,
    pub ref_octaves: usize,
}

impl Default for DenoiserArch {
    fn default() -> Self {
        Self {
            feature_dim: FEATURE_DIM,
            hidden: 256,
            cond_dim: 128,
            time_dim: 32,
            ref_octaves: 4,
        }
    }
}

impl DenoiserArch {
    pub fn ref_encoding_dim(&self) -> usize {
        PLAN_DIM * (1 + 2 * self.ref_octaves)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden == 0 || self.cond_dim == 0 {
            return Err(Error::Config("denoiser widths must be positive".into()));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::Config("time_dim must be a positive even number".into()));
        }
        Ok(())
    }
}

/// Fixed sinusoidal embedding of a diffusion step: `sin`/`cos` of
/// `step / 10000^(j / half)` for `j = 0..half`.
pub fn timestep_embedding(step: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for j in 0..half {
        let freq = (-(10000f64.ln()) * j as f64 / half as f64).exp();
        out.push((step as f64 * freq).sin());
    }
    for j in 0..half {
        let freq = (-(10000f64.ln()) * j as f64 / half as f64).exp();
        out.push((step as f64 * freq).cos());
    }
    out
}

/// Positional encoding of one flattened reference trajectory.
pub fn reference_encoding(reference_flat: &[f64], octaves: usize) -> Vec<f64> {
    let scaled: Vec<f64> = reference_flat.iter().map(|v| v / REFERENCE_SCALE).collect();
    sinusoidal_features(&scaled, octaves)
}

/// Conditioned x0-predictor.
///
/// `c = scene(features) + time(step) + reference(member)`; the trunk sees
/// `[z, c]` at its input and `c` again after the first layer.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    pub arch: DenoiserArch,
    pub params: ParamSet,
    scene_in: Linear,
    scene_out: Linear,
    time_proj: Linear,
    ref_proj: Linear,
    trunk_in: Linear,
    cond_inject: Linear,
    trunk_mid: Linear,
    trunk_out: Linear,
}

/// Constant inputs for a batch of `rows` members drawn from `scenes` scenes.
#[derive(Debug, Clone)]
pub struct DenoiserInputs {
    /// `[scenes, feature_dim]`, already scaled.
    pub features: Tensor,
    /// Scene row of each member.
    pub scene_of: Vec<usize>,
    /// `[rows, time_dim]`.
    pub time: Tensor,
    /// `[rows, ref_encoding_dim]`.
    pub reference: Tensor,
    /// `[rows, PLAN_DIM]` noisy samples.
    pub noisy: Tensor,
}

impl DenoiserNet {
    pub fn new(arch: DenoiserArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = RngStream::new(seed);
        let mut params = ParamSet::new();
        let p = &mut params;
        let (c, h) = (arch.cond_dim, arch.hidden);
        let scene_in = Linear::new(p, "scene.0", arch.feature_dim, c, &mut rng);
        let scene_out = Linear::new(p, "scene.1", c, c, &mut rng);
        let time_proj = Linear::new(p, "time", arch.time_dim, c, &mut rng);
        let ref_proj = Linear::new(p, "reference", arch.ref_encoding_dim(), c, &mut rng);
        let trunk_in = Linear::new(p, "trunk.0", PLAN_DIM + c, h, &mut rng);
        let cond_inject = Linear::new(p, "trunk.cond", c, h, &mut rng);
        let trunk_mid = Linear::new(p, "trunk.1", h, h, &mut rng);
        let trunk_out = Linear::new(p, "trunk.2", h, PLAN_DIM, &mut rng);
        Ok(Self {
            arch,
            params,
            scene_in,
            scene_out,
            time_proj,
            ref_proj,
            trunk_in,
            cond_inject,
            trunk_mid,
            trunk_out,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Builds the prediction graph against `params`, which must share this
    /// network's layout. Returns `[rows, PLAN_DIM]`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, inputs: &DenoiserInputs) -> Result<Var> {
        let rows = inputs.scene_of.len();
        let shapes_ok = inputs.features.cols() == self.arch.feature_dim
            && inputs.time.shape() == [rows, self.arch.time_dim]
            && inputs.reference.shape() == [rows, self.arch.ref_encoding_dim()]
            && inputs.noisy.shape() == [rows, PLAN_DIM]
            && inputs.scene_of.iter().all(|&s| s < inputs.features.rows());
        if !shapes_ok {
            return Err(Error::Shape(format!(
                "denoiser inputs: features {:?}, time {:?}, reference {:?}, noisy {:?} for {rows} rows",
                inputs.features.shape(),
                inputs.time.shape(),
                inputs.reference.shape(),
                inputs.noisy.shape()
            )));
        }
        let features = tape.constant(inputs.features.clone());
        let s = self.scene_in.forward(tape, params, features);
        let s = tape.silu(s);
        let s = self.scene_out.forward(tape, params, s);
        let scene = tape.gather_rows(s, &inputs.scene_of);

        let time = tape.constant(inputs.time.clone());
        let time = self.time_proj.forward(tape, params, time);
        let reference = tape.constant(inputs.reference.clone());
        let reference = self.ref_proj.forward(tape, params, reference);
        let c = tape.add(scene, time);
        let c = tape.add(c, reference);

        let z = tape.constant(inputs.noisy.clone());
        let x = tape.concat_cols(&[z, c]);
        let h = self.trunk_in.forward(tape, params, x);
        let h = tape.silu(h);
        let inject = self.cond_inject.forward(tape, params, c);
        let h = tape.add(h, inject);
        let h = self.trunk_mid.forward(tape, params, h);
        let h = tape.silu(h);
        Ok(self.trunk_out.forward(tape, params, h))
    }

    /// Forward pass with the network's own weights.
    pub fn predict(&self, inputs: &DenoiserInputs) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &self.params, inputs)?;
        tape.check()?;
        Ok(tape.value(out).clone())
    }
}
