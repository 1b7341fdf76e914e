use serde::{Deserialize, Serialize};

use super::Residual;
use crate::error::{Error, Result};
use crate::geom::Vec2;

pub const NORM_STATS_VERSION: u32 = 1;

/// Per-dimension residual extremes plus the output half-range `gamma` and
/// the denominator guard `epsilon0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub version: u32,
    pub r_min: [f64; 2],
    pub r_max: [f64; 2],
    pub gamma: f64,
    pub epsilon0: f64,
    pub dataset_hash: String,
}

impl NormStats {
    pub fn new(r_min: [f64; 2], r_max: [f64; 2], gamma: f64, epsilon0: f64) -> Result<Self> {
        let s = Self {
            version: NORM_STATS_VERSION,
            r_min,
            r_max,
            gamma,
            epsilon0,
            dataset_hash: String::new(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for d in 0..2 {
            if !(self.r_min[d] <= self.r_max[d]) {
                return Err(Error::Invalid(format!(
                    "r_min[{d}] = {} exceeds r_max[{d}] = {}",
                    self.r_min[d], self.r_max[d]
                )));
            }
        }
        if !(self.gamma > 0.0) || !(self.epsilon0 > 0.0) {
            return Err(Error::Invalid("gamma and epsilon0 must be positive".into()));
        }
        Ok(())
    }

    fn span(&self, d: usize) -> f64 {
        self.r_max[d] - self.r_min[d] + self.epsilon0
    }

    pub fn normalize_component(&self, v: f64, d: usize) -> f64 {
        2.0 * self.gamma * ((v - self.r_min[d]) / self.span(d)) - self.gamma
    }

    pub fn denormalize_component(&self, v: f64, d: usize) -> f64 {
        (v + self.gamma) / (2.0 * self.gamma) * self.span(d) + self.r_min[d]
    }

    pub fn normalize(&self, r: &Residual) -> Residual {
        Residual {
            deltas: r
                .deltas
                .iter()
                .map(|p| Vec2::new(self.normalize_component(p.x, 0), self.normalize_component(p.y, 1)))
                .collect(),
        }
    }

    /// Exact algebraic inverse of [`normalize`](Self::normalize). Values
    /// outside `[-gamma, gamma]` are mapped through unclamped.
    pub fn denormalize(&self, r: &Residual) -> Residual {
        Residual {
            deltas: r
                .deltas
                .iter()
                .map(|p| Vec2::new(self.denormalize_component(p.x, 0), self.denormalize_component(p.y, 1)))
                .collect(),
        }
    }

    /// Components of a normalized residual that fall outside `[-gamma, gamma]`.
    pub fn count_out_of_range(&self, normalized: &Residual) -> usize {
        normalized
            .deltas
            .iter()
            .flat_map(|p| [p.x, p.y])
            .filter(|v| v.abs() > self.gamma)
            .count()
    }
}

/// Exact componentwise extremes over every residual and timestep.
pub fn fit_norm_stats<'a>(
    residuals: impl IntoIterator<Item = &'a Residual>,
    gamma: f64,
    epsilon0: f64,
) -> Result<NormStats> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut any = false;
    for r in residuals {
        for p in &r.deltas {
            any = true;
            lo[0] = lo[0].min(p.x);
            lo[1] = lo[1].min(p.y);
            hi[0] = hi[0].max(p.x);
            hi[1] = hi[1].max(p.y);
        }
    }
    if !any {
        return Err(Error::EmptyDataset);
    }
    NormStats::new(lo, hi, gamma, epsilon0)
}

/// Plain min-max scaling to `[0, 1]` with one range shared by every
/// coordinate; the baseline the point-wise scheme is compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMinMax {
    pub min: f64,
    pub max: f64,
    pub epsilon0: f64,
}

impl GlobalMinMax {
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min + self.epsilon0)
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * (self.max - self.min + self.epsilon0) + self.min
    }
}

pub fn fit_global_minmax<'a>(
    values: impl IntoIterator<Item = &'a [f64]>,
    epsilon0: f64,
) -> Result<GlobalMinMax> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for chunk in values {
        for &v in chunk {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo > hi {
        return Err(Error::EmptyDataset);
    }
    Ok(GlobalMinMax {
        min: lo,
        max: hi,
        epsilon0,
    })
}

/// The normalization applied to the diffusion target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scaler {
    PointWise(NormStats),
    Global(GlobalMinMax),
}

impl Scaler {
    /// Normalizes a flat `[x1, y1, x2, y2, ...]` vector.
    pub fn normalize_flat(&self, flat: &[f64]) -> Vec<f64> {
        match self {
            Scaler::PointWise(s) => flat
                .iter()
                .enumerate()
                .map(|(i, &v)| s.normalize_component(v, i % 2))
                .collect(),
            Scaler::Global(g) => flat.iter().map(|&v| g.normalize(v)).collect(),
        }
    }

    pub fn denormalize_flat(&self, flat: &[f64]) -> Vec<f64> {
        match self {
            Scaler::PointWise(s) => flat
                .iter()
                .enumerate()
                .map(|(i, &v)| s.denormalize_component(v, i % 2))
                .collect(),
            Scaler::Global(g) => flat.iter().map(|&v| g.denormalize(v)).collect(),
        }
    }

    /// Normalized values outside the scaler's nominal output range.
    pub fn count_out_of_range(&self, normalized: &[f64]) -> usize {
        match self {
            Scaler::PointWise(s) => normalized.iter().filter(|v| v.abs() > s.gamma).count(),
            Scaler::Global(_) => normalized.iter().filter(|&&v| !(0.0..=1.0).contains(&v)).count(),
        }
    }
}
