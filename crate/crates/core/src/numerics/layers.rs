use super::{ParamId, ParamSet, RngStream, Tape, Tensor, Var};

/// Affine map `x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Uniform init in `±sqrt(1 / fan_in)`, zero bias.
    pub fn new(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.uniform_in(-bound, bound))
            .collect();
        let weight = params.add(format!("{name}.weight"), Tensor::from_parts(vec![fan_in, fan_out], w));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Var {
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        let h = tape.matmul(x, w);
        tape.add_row(h, b)
    }
}

/// Identity plus `sin`/`cos` at octave frequencies: for every input value `v`
/// emits `[v, sin(2^j π v), cos(2^j π v) for j in 0..octaves]`.
pub fn sinusoidal_features(values: &[f64], octaves: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() * (1 + 2 * octaves));
    for &v in values {
        out.push(v);
        for j in 0..octaves {
            let a = std::f64::consts::PI * (1u64 << j) as f64 * v;
            out.push(a.sin());
            out.push(a.cos());
        }
    }
    out
}
