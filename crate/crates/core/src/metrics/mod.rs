//! Closed-form toy sub-metrics and the PDMS / EPDMS aggregators.

mod report;

pub use report::{evaluate_planner, EvalReport, MeanScores, ScenarioResult, CSV_HEADER};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::{point_segment_distance, Vec2};
use crate::scenegen::{Obstacle, Scenario};
use crate::trajcore::Trajectory;

/// Per-scenario metric vector. Every field lies in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubScores {
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub ep: f64,
    pub ddc: f64,
    pub lk: f64,
    /// Traffic-light compliance; not simulated, supplied externally.
    #[serde(default = "one")]
    pub tl: f64,
    /// Human comfort; not simulated, supplied externally.
    #[serde(default = "one")]
    pub hc: f64,
    /// Extended comfort; not simulated, supplied externally.
    #[serde(default = "one")]
    pub ec: f64,
}

fn one() -> f64 {
    1.0
}

impl SubScores {
    pub const ONES: SubScores = SubScores {
        nc: 1.0,
        dac: 1.0,
        ttc: 1.0,
        comfort: 1.0,
        ep: 1.0,
        ddc: 1.0,
        lk: 1.0,
        tl: 1.0,
        hc: 1.0,
        ec: 1.0,
    };

    /// Recorded for scenarios on which the planner failed.
    pub const ZEROS: SubScores = SubScores {
        nc: 0.0,
        dac: 0.0,
        ttc: 0.0,
        comfort: 0.0,
        ep: 0.0,
        ddc: 0.0,
        lk: 0.0,
        tl: 0.0,
        hc: 0.0,
        ec: 0.0,
    };

    pub fn fields(&self) -> [f64; 10] {
        [
            self.nc, self.dac, self.ttc, self.comfort, self.ep, self.ddc, self.lk, self.tl,
            self.hc, self.ec,
        ]
    }

    pub fn from_fields(f: [f64; 10]) -> Self {
        Self {
            nc: f[0],
            dac: f[1],
            ttc: f[2],
            comfort: f[3],
            ep: f[4],
            ddc: f[5],
            lk: f[6],
            tl: f[7],
            hc: f[8],
            ec: f[9],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.fields().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// `NC · DAC · (5·TTC + 2·C + 5·EP) / 12`.
pub fn pdms(s: &SubScores) -> f64 {
    s.nc * s.dac * (5.0 * s.ttc + 2.0 * s.comfort + 5.0 * s.ep) / 12.0
}

/// `NC · DAC · DDC · TL · (5·TTC + 2·C + 5·EP + 5·LK + 5·EC) / 22`.
pub fn epdms(s: &SubScores) -> f64 {
    s.nc * s.dac
        * s.ddc
        * s.tl
        * (5.0 * s.ttc + 2.0 * s.comfort + 5.0 * s.ep + 5.0 * s.lk + 5.0 * s.ec)
        / 22.0
}

/// Thresholds and geometry of the toy sub-metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Minimum acceptable time to collision, seconds.
    pub ttc_s: f64,
    pub max_accel: f64,
    pub max_jerk: f64,
    /// Maximum mean absolute lateral deviation for lane keeping, meters.
    pub lane_keep_m: f64,
    /// Maximum angle between a segment heading and the local tangent, degrees.
    pub ddc_deg: f64,
    /// Ego footprint radius; obstacle discs are inflated by it.
    pub ego_radius: f64,
    /// Segments shorter than this have no meaningful heading and skip DDC.
    pub ddc_min_segment_m: f64,
    /// Floor on the expert progress used as the EP denominator.
    pub min_expert_progress_m: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            ttc_s: 1.0,
            max_accel: 4.0,
            max_jerk: 8.0,
            lane_keep_m: 0.5,
            ddc_deg: 90.0,
            ego_radius: 1.0,
            ddc_min_segment_m: 0.1,
            min_expert_progress_m: 0.5,
        }
    }
}

fn gate(ok: bool) -> f64 {
    if ok {
        1.0
    } else {
        0.0
    }
}

/// Scores `traj` against `scenario`. TL, HC and EC are set to 1.
pub fn sub_metrics(traj: &Trajectory, scenario: &Scenario, cfg: &MetricConfig) -> Result<SubScores> {
    scenario.corridor.validate()?;
    let ego = &scenario.ego;
    let dt = traj.dt;
    let mut path = Vec::with_capacity(traj.len() + 1);
    path.push(ego.position);
    path.extend_from_slice(&traj.waypoints);

    let nc = gate(!collides(&path, dt, &scenario.obstacles, cfg.ego_radius));

    let corridor = &scenario.corridor;
    let projections: Vec<_> = path.iter().map(|&p| corridor.project(p)).collect();
    let dac = gate(projections[1..].iter().all(|p| p.distance <= corridor.half_width));

    let ttc = gate(min_time_to_collision(&path, ego.velocity, dt, &scenario.obstacles, cfg.ego_radius) > cfg.ttc_s);

    let (accel, jerk) = max_accel_jerk(&path, ego.velocity, dt);
    let comfort = gate(accel <= cfg.max_accel && jerk <= cfg.max_jerk);

    let start_s = projections[0].s;
    let progress = projections.last().unwrap().s - start_s;
    let expert_end = corridor.project(scenario.expert.last()).s;
    let expert_progress = (expert_end - start_s).max(cfg.min_expert_progress_m);
    let ep = (progress / expert_progress).clamp(0.0, 1.0);

    let max_angle = cfg.ddc_deg.to_radians();
    let ddc = gate(path.windows(2).all(|w| {
        let seg = w[1] - w[0];
        let len = seg.norm();
        if len < cfg.ddc_min_segment_m {
            return true;
        }
        let tangent = corridor.project((w[0] + w[1]) * 0.5).tangent;
        let cos = (seg.dot(tangent) / len).clamp(-1.0, 1.0);
        cos.acos() <= max_angle
    }));

    let n = (projections.len() - 1) as f64;
    let mean_lat = projections[1..].iter().map(|p| p.lateral.abs()).sum::<f64>() / n;
    let lk = gate(mean_lat <= cfg.lane_keep_m);

    Ok(SubScores {
        nc,
        dac,
        ttc,
        comfort,
        ep,
        ddc,
        lk,
        tl: 1.0,
        hc: 1.0,
        ec: 1.0,
    })
}

/// True when any segment `path[i-1] → path[i]` comes strictly closer than
/// `radius + ego_radius` to an obstacle propagated to the segment's midpoint time.
pub fn collides(path: &[Vec2], dt: f64, obstacles: &[Obstacle], ego_radius: f64) -> bool {
    path.windows(2).enumerate().any(|(i, w)| {
        let t_mid = (i as f64 + 0.5) * dt;
        obstacles.iter().any(|o| {
            let c = o.center + o.velocity * t_mid;
            point_segment_distance(c, w[0], w[1]) < o.radius + ego_radius
        })
    })
}

/// Smallest `τ ≥ 0` at which a point at `rel` moving with `rel_vel` enters the
/// disc of radius `r` around the origin; infinite when it never does.
pub fn time_to_enter_disc(rel: Vec2, rel_vel: Vec2, r: f64) -> f64 {
    let c = rel.norm_sq() - r * r;
    if c < 0.0 {
        return 0.0;
    }
    let a = rel_vel.norm_sq();
    let b = rel.dot(rel_vel);
    if a == 0.0 || b >= 0.0 {
        return f64::INFINITY;
    }
    let disc = b * b - a * c;
    if disc <= 0.0 {
        return f64::INFINITY;
    }
    // Smaller root of a τ² + 2 b τ + c, written to avoid cancellation.
    c / (-b + disc.sqrt())
}

/// Minimum constant-velocity time to collision over the plan's states.
/// State `i` is the position `path[i]` at `t = i·dt` moving with the backward
/// difference velocity; state 0 moves with the current ego velocity.
pub fn min_time_to_collision(
    path: &[Vec2],
    v0: Vec2,
    dt: f64,
    obstacles: &[Obstacle],
    ego_radius: f64,
) -> f64 {
    let mut best = f64::INFINITY;
    for (i, &p) in path.iter().enumerate() {
        let v = if i == 0 { v0 } else { (p - path[i - 1]) * (1.0 / dt) };
        let t = i as f64 * dt;
        for o in obstacles {
            let rel = p - (o.center + o.velocity * t);
            best = best.min(time_to_enter_disc(rel, v - o.velocity, o.radius + ego_radius));
        }
    }
    best
}

/// Acceleration and jerk vectors by finite differences.
///
/// Segment velocities `u_i = (p_i - p_{i-1}) / dt` sit at `(i - ½)·dt`; with
/// the current velocity at `t = 0` this gives accelerations at `dt/4` and at
/// each interior waypoint, and jerk from consecutive accelerations divided by
/// their actual time spacing.
pub fn accel_jerk_series(path: &[Vec2], v0: Vec2, dt: f64) -> (Vec<Vec2>, Vec<Vec2>) {
    let mut times = vec![0.0];
    let mut vels = vec![v0];
    for (i, w) in path.windows(2).enumerate() {
        times.push((i as f64 + 0.5) * dt);
        vels.push((w[1] - w[0]) * (1.0 / dt));
    }
    let mut acc_t = Vec::new();
    let mut acc = Vec::new();
    for i in 1..vels.len() {
        let h = times[i] - times[i - 1];
        acc.push((vels[i] - vels[i - 1]) * (1.0 / h));
        acc_t.push(0.5 * (times[i] + times[i - 1]));
    }
    let jerk = (1..acc.len())
        .map(|i| (acc[i] - acc[i - 1]) * (1.0 / (acc_t[i] - acc_t[i - 1])))
        .collect();
    (acc, jerk)
}

/// Maximum acceleration and jerk magnitudes of [`accel_jerk_series`].
pub fn max_accel_jerk(path: &[Vec2], v0: Vec2, dt: f64) -> (f64, f64) {
    let (acc, jerk) = accel_jerk_series(path, v0, dt);
    let max_norm = |v: &[Vec2]| v.iter().map(|a| a.norm()).fold(0.0, f64::max);
    (max_norm(&acc), max_norm(&jerk))
}
