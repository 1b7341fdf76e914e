//! Fixed-length scene description used to condition the learned models.
//!
//! Layout (55 values, all in the ego frame):
//!
//! | index  | content                                                        |
//! |--------|----------------------------------------------------------------|
//! | 0      | ego speed                                                      |
//! | 1..21  | 4 nearest obstacles × (x, y, vx, vy, radius), zero-padded      |
//! | 21..53 | 8 centerline samples 7.5 m apart ahead × (x, y, tx, ty)        |
//! | 53     | corridor half width                                            |
//! | 54     | arc length to the stop line, or [`STOP_SENTINEL`] when absent  |

use super::{Corridor, Obstacle};
use crate::geom::Vec2;
use crate::trajcore::EgoState;

pub const FEATURE_DIM: usize = 55;
pub const OBSTACLE_SLOTS: usize = 4;
pub const OBSTACLE_WIDTH: usize = 5;
pub const OBSTACLE_OFFSET: usize = 1;
pub const CORRIDOR_SAMPLES: usize = 8;
pub const CORRIDOR_WIDTH: usize = 4;
pub const CORRIDOR_OFFSET: usize = OBSTACLE_OFFSET + OBSTACLE_SLOTS * OBSTACLE_WIDTH;
pub const CORRIDOR_SPACING: f64 = 7.5;
pub const HALF_WIDTH_INDEX: usize = CORRIDOR_OFFSET + CORRIDOR_SAMPLES * CORRIDOR_WIDTH;
pub const STOP_INDEX: usize = HALF_WIDTH_INDEX + 1;
pub const STOP_SENTINEL: f64 = 100.0;

const POS_SCALE: f64 = 20.0;
/// Obstacle lateral offsets are bounded by the corridor width, and their sign
/// decides which way the expert passes, so they get a finer scale.
const LATERAL_SCALE: f64 = 2.0;
const VEL_SCALE: f64 = 10.0;

/// Divisors that bring every feature to roughly unit magnitude.
pub fn feature_scale() -> [f64; FEATURE_DIM] {
    let mut s = [1.0; FEATURE_DIM];
    s[0] = VEL_SCALE;
    for k in 0..OBSTACLE_SLOTS {
        let o = OBSTACLE_OFFSET + k * OBSTACLE_WIDTH;
        s[o] = POS_SCALE;
        s[o + 1] = LATERAL_SCALE;
        s[o + 2] = VEL_SCALE;
        s[o + 3] = VEL_SCALE;
    }
    for k in 0..CORRIDOR_SAMPLES {
        let o = CORRIDOR_OFFSET + k * CORRIDOR_WIDTH;
        s[o] = POS_SCALE;
        s[o + 1] = POS_SCALE;
    }
    s[HALF_WIDTH_INDEX] = 2.0;
    s[STOP_INDEX] = POS_SCALE;
    s
}

/// Features divided by [`feature_scale`].
pub fn scaled_features(features: &[f64]) -> Vec<f64> {
    features.iter().zip(feature_scale()).map(|(f, s)| f / s).collect()
}

pub fn compute_features(
    ego: &EgoState,
    obstacles: &[Obstacle],
    corridor: &Corridor,
    stop_line: Option<f64>,
) -> Vec<f64> {
    let to_ego = |p: Vec2| (p - ego.position).rotate(-ego.heading);
    let mut f = vec![0.0; FEATURE_DIM];
    f[0] = ego.speed();

    let mut order: Vec<usize> = (0..obstacles.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (obstacles[a].center - ego.position).norm();
        let db = (obstacles[b].center - ego.position).norm();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    for (slot, &i) in order.iter().take(OBSTACLE_SLOTS).enumerate() {
        let o = &obstacles[i];
        let rel = to_ego(o.center);
        let vel = o.velocity.rotate(-ego.heading);
        let base = OBSTACLE_OFFSET + slot * OBSTACLE_WIDTH;
        f[base..base + OBSTACLE_WIDTH].copy_from_slice(&[rel.x, rel.y, vel.x, vel.y, o.radius]);
    }

    let s_ego = corridor.project(ego.position).s;
    let length = corridor.length();
    for k in 0..CORRIDOR_SAMPLES {
        let s = (s_ego + CORRIDOR_SPACING * (k + 1) as f64).min(length);
        let p = to_ego(corridor.point_at(s, 0.0));
        let t = corridor.tangent_at(s).rotate(-ego.heading);
        let base = CORRIDOR_OFFSET + k * CORRIDOR_WIDTH;
        f[base..base + CORRIDOR_WIDTH].copy_from_slice(&[p.x, p.y, t.x, t.y]);
    }
    f[HALF_WIDTH_INDEX] = corridor.half_width;
    f[STOP_INDEX] = stop_line.map_or(STOP_SENTINEL, |s| s - s_ego);
    f
}
