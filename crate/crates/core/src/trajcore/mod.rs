//! Inertial references, residuals, point-wise residual normalization,
//! reference perturbation, and per-timestep distribution statistics.

mod norm;
mod perturb;
mod stats;

pub use norm::{fit_global_minmax, fit_norm_stats, GlobalMinMax, NormStats, Scaler};
pub use perturb::{perturb_references, PerturbationCov, ReferenceCluster};
pub use stats::{horizon_stats, HorizonStats, Representation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};

/// Number of future waypoints.
pub const HORIZON: usize = 8;
/// Waypoint spacing in seconds.
pub const STEP: f64 = 0.5;

/// Trajectory coordinates live on this dyadic grid (meters). With
/// `|coord| < 2^20` every difference and sum of grid values is exact, so
/// `compose(reference, residual(target, reference))` returns `target` bit for bit.
pub const LATTICE: f64 = 1.0 / 4_294_967_296.0;
const LATTICE_INV: f64 = 4_294_967_296.0;

pub fn snap(v: f64) -> f64 {
    (v * LATTICE_INV).round() * LATTICE
}

fn snap_point(p: Vec2) -> Vec2 {
    Vec2::new(snap(p.x), snap(p.y))
}

/// Ego pose and velocity at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub position: Vec2,
    pub heading: f64,
    pub velocity: Vec2,
}

impl EgoState {
    pub fn new(position: Vec2, heading: f64, velocity: Vec2) -> Result<Self> {
        if !(position.is_finite() && velocity.is_finite() && heading.is_finite()) {
            return Err(Error::Invalid("ego state must be finite".into()));
        }
        Ok(Self {
            position,
            heading: wrap_angle(heading),
            velocity,
        })
    }

    /// Ego at the origin of its own frame moving forward at `speed`.
    pub fn at_origin(speed: f64) -> Self {
        Self {
            position: Vec2::ZERO,
            heading: 0.0,
            velocity: Vec2::new(speed, 0.0),
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// Ordered future waypoints at a fixed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Vec2>,
    pub dt: f64,
}

impl Trajectory {
    /// Snaps every coordinate onto [`LATTICE`].
    pub fn new(waypoints: Vec<Vec2>, dt: f64) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::Invalid("trajectory needs at least one waypoint".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::Invalid(format!("trajectory step must be positive, got {dt}")));
        }
        if let Some(p) = waypoints.iter().find(|p| !p.is_finite() || p.x.abs() >= 1e6 || p.y.abs() >= 1e6) {
            return Err(Error::Invalid(format!("waypoint out of range: {p:?}")));
        }
        Ok(Self {
            waypoints: waypoints.into_iter().map(snap_point).collect(),
            dt,
        })
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// `[x1, y1, x2, y2, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.waypoints.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn from_flat(flat: &[f64], dt: f64) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::Shape(format!("odd flat trajectory length {}", flat.len())));
        }
        Self::new(flat.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect(), dt)
    }

    pub fn last(&self) -> Vec2 {
        *self.waypoints.last().expect("nonempty")
    }

    /// Mean point-wise Euclidean distance.
    pub fn ade(&self, other: &Trajectory) -> f64 {
        self.waypoints
            .iter()
            .zip(&other.waypoints)
            .map(|(a, b)| (*a - *b).norm())
            .sum::<f64>()
            / self.len() as f64
    }

    /// Sum of squared point-wise differences.
    pub fn squared_distance(&self, other: &Trajectory) -> f64 {
        self.waypoints
            .iter()
            .zip(&other.waypoints)
            .map(|(a, b)| (*a - *b).norm_sq())
            .sum()
    }
}

/// Point-wise displacements `target - reference`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub deltas: Vec<Vec2>,
}

impl Residual {
    pub fn zeros(n: usize) -> Self {
        Self {
            deltas: vec![Vec2::ZERO; n],
        }
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.deltas.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Self {
            deltas: flat.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect(),
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.deltas.iter().map(|d| d.norm()).fold(0.0, f64::max)
    }
}

/// Constant-velocity extrapolation: waypoint `i` is `p0 + v0 * (i * dt)`.
pub fn inertial_reference(ego: &EgoState, horizon: usize, dt: f64) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    let pts = (1..=horizon)
        .map(|i| ego.position + ego.velocity * (i as f64 * dt))
        .collect();
    Trajectory::new(pts, dt)
}

pub fn residual(target: &Trajectory, reference: &Trajectory) -> Result<Residual> {
    check_pair(target.len(), reference.len(), target.dt, reference.dt)?;
    Ok(Residual {
        deltas: target
            .waypoints
            .iter()
            .zip(&reference.waypoints)
            .map(|(g, r)| *g - *r)
            .collect(),
    })
}

pub fn compose(reference: &Trajectory, residual: &Residual) -> Result<Trajectory> {
    check_pair(reference.len(), residual.len(), reference.dt, reference.dt)?;
    Trajectory::new(
        reference
            .waypoints
            .iter()
            .zip(&residual.deltas)
            .map(|(r, d)| *r + *d)
            .collect(),
        reference.dt,
    )
}

fn check_pair(a: usize, b: usize, dta: f64, dtb: f64) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("length mismatch: {a} vs {b}")));
    }
    if dta != dtb {
        return Err(Error::Shape(format!("step mismatch: {dta} vs {dtb}")));
    }
    Ok(())
}
