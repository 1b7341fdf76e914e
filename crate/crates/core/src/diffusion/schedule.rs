use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Linear DDPM noise schedule. Index 0 of `alpha_bars` is the clean sample
/// (`ᾱ_0 = 1`); steps run `1..=steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    #[serde(skip)]
    betas: Vec<f64>,
    #[serde(skip)]
    alpha_bars: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(1000, 1e-4, 2e-2).expect("default schedule is valid")
    }
}

pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 || !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::Invalid(format!(
            "schedule needs T >= 1 and 0 < beta_min <= beta_max < 1 (got T={steps}, [{beta_min}, {beta_max}])"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bars = Vec::with_capacity(steps + 1);
    alpha_bars.push(1.0);
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule {
        steps,
        beta_min,
        beta_max,
        betas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    /// Rebuilds the tables after deserialization.
    pub fn rebuilt(&self) -> Result<Self> {
        make_schedule(self.steps, self.beta_min, self.beta_max)
    }

    /// `β_i` for `1 <= i <= T`.
    pub fn beta(&self, i: usize) -> f64 {
        self.betas[i - 1]
    }

    /// `ᾱ_i` for `0 <= i <= T`.
    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bars[i]
    }

    /// Decreasing DDIM sub-schedule of `n` steps with uniform stride:
    /// `⌈T·(n−j)/n⌉` for `j = 0..n`, e.g. `[1000, 500]` for `n = 2`.
    pub fn ddim_steps(&self, n: usize) -> Vec<usize> {
        let n = n.clamp(1, self.steps);
        let mut out: Vec<usize> = (0..n)
            .map(|j| (self.steps * (n - j)).div_ceil(n))
            .collect();
        out.dedup();
        out
    }
}

/// `√ᾱ · x0 + √(1 − ᾱ) · ε`, elementwise.
pub fn mix(alpha_bar: f64, x0: &[f64], eps: &[f64]) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

/// Noises a clean normalized sample to step `i`.
pub fn forward_noise(x0: &Tensor, i: usize, eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    if i == 0 || i > schedule.steps {
        return Err(Error::Invalid(format!("step {i} outside 1..={}", schedule.steps)));
    }
    if x0.shape() != eps.shape() {
        return Err(Error::Shape(format!(
            "noise shape {:?} does not match sample shape {:?}",
            eps.shape(),
            x0.shape()
        )));
    }
    Tensor::new(x0.shape().to_vec(), mix(schedule.alpha_bar(i), x0.data(), eps.data()))
}
