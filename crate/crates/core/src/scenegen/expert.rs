//! Scripted expert: pure pursuit of a laterally offset centerline with a
//! jerk-limited longitudinal controller (cruise, car following, stop line).

use serde::{Deserialize, Serialize};

use super::{Obstacle, Scene};
use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, wrap_angle, Vec2};
use crate::metrics::{collides, max_accel_jerk, min_time_to_collision, MetricConfig};
use crate::trajcore::{Trajectory, HORIZON, STEP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub sim_dt: f64,
    /// Lookahead distance per m/s of speed.
    pub lookahead_time: f64,
    pub lookahead_min: f64,
    pub lookahead_max: f64,
    pub max_lateral_accel: f64,
    pub max_lateral_jerk: f64,
    pub max_accel: f64,
    pub max_decel: f64,
    pub max_long_jerk: f64,
    /// Clearance kept between the ego footprint and a static obstacle.
    pub safety_margin: f64,
    /// Extra planned clearance so path-tracking error does not eat the margin.
    pub clearance_buffer: f64,
    /// Distance before the stop line at which the expert aims to halt.
    pub stop_margin: f64,
    /// Required deceleration that triggers stop-line braking.
    pub brake_trigger: f64,
    pub follow_standstill: f64,
    pub follow_time_gap: f64,
    pub speed_gain: f64,
    pub gap_gain: f64,
    pub closing_gain: f64,
    /// Maximum final speed allowed in stop-line scenes.
    pub stop_terminal_speed: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            sim_dt: 0.05,
            lookahead_time: 1.0,
            lookahead_min: 5.0,
            lookahead_max: 15.0,
            max_lateral_accel: 3.0,
            max_lateral_jerk: 3.0,
            max_accel: 1.5,
            max_decel: 3.5,
            max_long_jerk: 5.0,
            safety_margin: 0.5,
            clearance_buffer: 0.5,
            stop_margin: 1.0,
            brake_trigger: 1.0,
            follow_standstill: 3.0,
            follow_time_gap: 1.2,
            speed_gain: 0.8,
            gap_gain: 0.25,
            closing_gain: 0.8,
            stop_terminal_speed: 0.5,
        }
    }
}

/// Dense rollout of the expert at `sim_dt`.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub positions: Vec<Vec2>,
    pub speeds: Vec<f64>,
}

/// Lateral target offset around one blocking static obstacle.
#[derive(Debug, Clone, Copy)]
struct Bypass {
    center_s: f64,
    half_hold: f64,
    ramp: f64,
    offset: f64,
}

impl Bypass {
    fn at(&self, s: f64) -> f64 {
        let d = (s - self.center_s).abs() - self.half_hold;
        if d <= 0.0 {
            self.offset
        } else if d >= self.ramp {
            0.0
        } else {
            self.offset * 0.5 * (1.0 + (std::f64::consts::PI * d / self.ramp).cos())
        }
    }
}

fn is_static(o: &Obstacle) -> bool {
    o.velocity.norm() < 0.1
}

fn plan_bypasses(scene: &Scene, cfg: &ExpertConfig, ego_radius: f64) -> Result<Vec<Bypass>> {
    let corridor = &scene.corridor;
    let s_ego = corridor.project(scene.ego.position).s;
    let v0 = scene.ego.speed();
    let mut out = Vec::new();
    for o in scene.obstacles.iter().filter(|o| is_static(o)) {
        let pr = corridor.project(o.center);
        let clearance = o.radius + ego_radius + cfg.safety_margin + cfg.clearance_buffer;
        if pr.s <= s_ego || pr.distance > corridor.half_width + o.radius || pr.lateral.abs() >= clearance {
            continue;
        }
        let offset = if pr.lateral >= 0.0 {
            pr.lateral - clearance
        } else {
            pr.lateral + clearance
        };
        if offset.abs() > corridor.half_width - 0.25 {
            return Err(Error::Invalid(format!(
                "obstacle at s={:.1} leaves no room to pass",
                pr.s
            )));
        }
        out.push(Bypass {
            center_s: pr.s,
            half_hold: o.radius + ego_radius,
            ramp: (1.5 * v0).max(12.0),
            offset,
        });
    }
    Ok(out)
}

fn lateral_target(bypasses: &[Bypass], s: f64) -> f64 {
    bypasses
        .iter()
        .map(|b| b.at(s))
        .fold(0.0, |acc: f64, v| if v.abs() > acc.abs() { v } else { acc })
}

/// Simulates the expert for the full horizon.
pub fn rollout(scene: &Scene, cfg: &ExpertConfig, ego_radius: f64) -> Result<Rollout> {
    scene.corridor.validate()?;
    let corridor = &scene.corridor;
    let bypasses = plan_bypasses(scene, cfg, ego_radius)?;
    let steps = (HORIZON as f64 * STEP / cfg.sim_dt).round() as usize;
    let dt = cfg.sim_dt;

    let mut pos = scene.ego.position;
    let mut v = scene.ego.speed();
    let mut psi = if v > 1e-6 {
        scene.ego.velocity.angle()
    } else {
        scene.ego.heading
    };
    let v_target = v;
    let mut accel = 0.0;
    let mut kappa = 0.0;
    let mut braking = false;

    let mut positions = vec![pos];
    let mut speeds = vec![v];
    for step in 0..steps {
        let t = step as f64 * dt;
        let pr = corridor.project(pos);

        // Lateral: pure pursuit on the offset centerline.
        let look = (cfg.lookahead_time * v).clamp(cfg.lookahead_min, cfg.lookahead_max);
        let s_look = pr.s + look;
        let target = corridor.point_at(s_look, lateral_target(&bypasses, s_look));
        let to_target = target - pos;
        let alpha = wrap_angle(to_target.angle() - psi);
        let v2 = (v * v).max(1.0);
        let k_cmd = (2.0 * alpha.sin() / to_target.norm().max(1e-3))
            .clamp(-cfg.max_lateral_accel / v2, cfg.max_lateral_accel / v2);
        let k_rate = cfg.max_lateral_jerk / v2 * dt;
        kappa += (k_cmd - kappa).clamp(-k_rate, k_rate);

        // Longitudinal: the most restrictive of cruise, following, stopping.
        let mut a_cmd = cfg.speed_gain * (v_target - v);
        for o in scene.obstacles.iter().filter(|o| !is_static(o)) {
            let c = o.center + o.velocity * t;
            let po = corridor.project(c);
            if po.s <= pr.s || po.lateral.abs() > corridor.half_width + o.radius {
                continue;
            }
            let gap = (c - pos).norm() - o.radius - ego_radius;
            let lead_v = o.velocity.dot(po.tangent);
            let desired = cfg.follow_standstill + cfg.follow_time_gap * v;
            let a_follow = cfg.gap_gain * (gap - desired) + cfg.closing_gain * (lead_v - v);
            a_cmd = a_cmd.min(a_follow);
        }
        if let Some(line) = scene.stop_line {
            let remaining = line - cfg.stop_margin - pr.s;
            let a_req = v * v / (2.0 * remaining.max(0.05));
            if a_req >= cfg.brake_trigger || remaining <= 0.0 {
                braking = true;
            }
            if braking {
                a_cmd = a_cmd.min(if remaining <= 0.05 { -cfg.max_decel } else { -a_req });
            }
        }
        let a_cmd = a_cmd.clamp(-cfg.max_decel, cfg.max_accel);
        let j = cfg.max_long_jerk * dt;
        accel += (a_cmd - accel).clamp(-j, j);

        let mut ds = v * dt + 0.5 * accel * dt * dt;
        let mut v_next = v + accel * dt;
        if v_next <= 0.0 {
            // Stopped within the step: cover the remaining distance and hold.
            ds = if accel < 0.0 { v * v / (-2.0 * accel) } else { 0.0 };
            v_next = 0.0;
            accel = 0.0;
        }
        let heading_mid = psi + 0.5 * kappa * ds;
        pos += Vec2::from_angle(heading_mid) * ds;
        psi = wrap_angle(psi + kappa * ds);
        v = v_next;
        positions.push(pos);
        speeds.push(v);
        if !pos.is_finite() {
            return Err(Error::NonFinite("expert rollout".into()));
        }
    }
    Ok(Rollout { positions, speeds })
}

/// Expert trajectory sampled every 0.5 s. Fails when the result violates
/// collision, drivable-area, time-to-collision, comfort or stop-line bounds.
pub fn scripted_expert(scene: &Scene, cfg: &ExpertConfig, metrics: &MetricConfig) -> Result<Trajectory> {
    let roll = rollout(scene, cfg, metrics.ego_radius)?;
    let stride = (STEP / cfg.sim_dt).round() as usize;
    let waypoints: Vec<Vec2> = (1..=HORIZON).map(|i| roll.positions[i * stride]).collect();
    let traj = Trajectory::new(waypoints, STEP)?;
    check_expert(scene, &traj, &roll, cfg, metrics)?;
    Ok(traj)
}

fn check_expert(
    scene: &Scene,
    traj: &Trajectory,
    roll: &Rollout,
    cfg: &ExpertConfig,
    metrics: &MetricConfig,
) -> Result<()> {
    let fail = |why: String| Err(Error::Invalid(format!("expert rejected: {why}")));
    let mut path = vec![scene.ego.position];
    path.extend_from_slice(&traj.waypoints);
    if collides(&path, traj.dt, &scene.obstacles, metrics.ego_radius) {
        return fail("collision".into());
    }
    if let Some(p) = traj.waypoints.iter().find(|p| !scene.corridor.contains(**p)) {
        return fail(format!("waypoint ({:.2}, {:.2}) leaves the corridor", p.x, p.y));
    }
    let ttc = min_time_to_collision(&path, scene.ego.velocity, traj.dt, &scene.obstacles, metrics.ego_radius);
    if ttc <= metrics.ttc_s {
        return fail(format!("time to collision {ttc:.2} s"));
    }
    let (a, j) = max_accel_jerk(&path, scene.ego.velocity, traj.dt);
    if a > metrics.max_accel || j > metrics.max_jerk {
        return fail(format!("comfort bounds exceeded (accel {a:.2}, jerk {j:.2})"));
    }
    for o in scene.obstacles.iter().filter(|o| is_static(o)) {
        let gap = roll
            .positions
            .windows(2)
            .map(|w| point_segment_distance(o.center, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
            - o.radius
            - metrics.ego_radius;
        if gap < cfg.safety_margin {
            return fail(format!("clearance {gap:.2} m below the safety margin"));
        }
    }
    if scene.stop_line.is_some() {
        let n = traj.len();
        let terminal = (traj.waypoints[n - 1] - traj.waypoints[n - 2]).norm() / traj.dt;
        if terminal >= cfg.stop_terminal_speed {
            return fail(format!("terminal speed {terminal:.2} m/s at the stop line"));
        }
    }
    Ok(())
}
