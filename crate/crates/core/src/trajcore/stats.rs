use serde::{Deserialize, Serialize};

use super::{inertial_reference, residual, EgoState, NormStats, Trajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Raw,
    Residual,
    Normalized,
}

impl Representation {
    pub const ALL: [Representation; 3] = [
        Representation::Raw,
        Representation::Residual,
        Representation::Normalized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Representation::Raw => "raw",
            Representation::Residual => "residual",
            Representation::Normalized => "normalized",
        }
    }
}

/// Per-timestep mean and (population) standard deviation, `[t][dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonStats {
    pub representation: Representation,
    pub mean: Vec<[f64; 2]>,
    pub std: Vec<[f64; 2]>,
}

impl HorizonStats {
    pub fn max_abs_mean(&self, dim: usize) -> f64 {
        self.mean.iter().map(|m| m[dim].abs()).fold(0.0, f64::max)
    }

    /// `std[last] / std[first]` for one dimension.
    pub fn std_ratio(&self, dim: usize) -> f64 {
        self.std.last().unwrap()[dim] / self.std[0][dim]
    }
}

/// Statistics of expert trajectories in the requested representation.
/// `stats` is required for [`Representation::Normalized`].
pub fn horizon_stats<'a>(
    samples: impl IntoIterator<Item = (&'a EgoState, &'a Trajectory)>,
    representation: Representation,
    stats: Option<&NormStats>,
) -> Result<HorizonStats> {
    if representation == Representation::Normalized && stats.is_none() {
        return Err(Error::Invalid("normalized statistics need NormStats".into()));
    }
    let mut rows: Vec<Vec<[f64; 2]>> = Vec::new();
    for (ego, traj) in samples {
        let pts: Vec<[f64; 2]> = match representation {
            Representation::Raw => traj.waypoints.iter().map(|p| [p.x, p.y]).collect(),
            Representation::Residual | Representation::Normalized => {
                let reference = inertial_reference(ego, traj.len(), traj.dt)?;
                let mut r = residual(traj, &reference)?;
                if let Some(s) = stats.filter(|_| representation == Representation::Normalized) {
                    r = s.normalize(&r);
                }
                r.deltas.iter().map(|p| [p.x, p.y]).collect()
            }
        };
        if let Some(first) = rows.first() {
            if first.len() != pts.len() {
                return Err(Error::Shape("trajectories of differing lengths".into()));
            }
        }
        rows.push(pts);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = rows.len() as f64;
    let horizon = rows[0].len();
    let mut mean = vec![[0.0; 2]; horizon];
    let mut std = vec![[0.0; 2]; horizon];
    for t in 0..horizon {
        for d in 0..2 {
            let m = rows.iter().map(|r| r[t][d]).sum::<f64>() / n;
            let v = rows.iter().map(|r| (r[t][d] - m).powi(2)).sum::<f64>() / n;
            mean[t][d] = m;
            std[t][d] = v.sqrt();
        }
    }
    Ok(HorizonStats {
        representation,
        mean,
        std,
    })
}
