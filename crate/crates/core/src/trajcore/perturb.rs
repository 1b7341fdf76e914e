use serde::{Deserialize, Serialize};

use super::{inertial_reference, EgoState, Trajectory};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::numerics::RngStream;

/// Diagonal velocity-perturbation covariance in the ego-aligned
/// (longitudinal, lateral) basis, in (m/s)².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCov {
    pub var_long: f64,
    pub var_lat: f64,
}

impl PerturbationCov {
    pub const ZERO: PerturbationCov = PerturbationCov {
        var_long: 0.0,
        var_lat: 0.0,
    };

    pub fn from_std(sigma_long: f64, sigma_lat: f64) -> Self {
        Self {
            var_long: sigma_long * sigma_long,
            var_lat: sigma_lat * sigma_lat,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.var_long == 0.0 && self.var_lat == 0.0
    }
}

impl Default for PerturbationCov {
    fn default() -> Self {
        Self::from_std(1.0, 0.5)
    }
}

/// `K` constant-velocity references under perturbed initial velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCluster {
    pub references: Vec<Trajectory>,
    pub perturbations: Vec<Vec2>,
    pub cov: PerturbationCov,
}

impl ReferenceCluster {
    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }
}

/// Draws `k` velocity offsets `δ ~ N(0, diag(var_long, var_lat))` in the ego
/// basis, rotates them by the heading, and extrapolates `v0 + δ`.
///
/// Each member consumes two draws from `rng`: longitudinal, then lateral.
pub fn perturb_references(
    ego: &EgoState,
    cov: PerturbationCov,
    k: usize,
    horizon: usize,
    dt: f64,
    rng: &mut RngStream,
) -> Result<ReferenceCluster> {
    if k == 0 {
        return Err(Error::Invalid("cluster size must be at least 1".into()));
    }
    if !(cov.var_long >= 0.0 && cov.var_lat >= 0.0) {
        return Err(Error::Invalid("perturbation variances must be nonnegative".into()));
    }
    let (sl, st) = (cov.var_long.sqrt(), cov.var_lat.sqrt());
    let mut references = Vec::with_capacity(k);
    let mut perturbations = Vec::with_capacity(k);
    for _ in 0..k {
        let local = Vec2::new(sl * rng.gaussian(), st * rng.gaussian());
        let delta = if cov.is_zero() {
            Vec2::ZERO
        } else {
            local.rotate(ego.heading)
        };
        let perturbed = EgoState {
            velocity: ego.velocity + delta,
            ..*ego
        };
        references.push(inertial_reference(&perturbed, horizon, dt)?);
        perturbations.push(delta);
    }
    Ok(ReferenceCluster {
        references,
        perturbations,
        cov,
    })
}
