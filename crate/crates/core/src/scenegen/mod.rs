//! Synthetic 2D driving scenes with a scripted expert, and their JSONL storage.
//!
//! Every scene is expressed in the ego frame: the ego sits at the origin with
//! heading 0, x points forward and y to the left. Scenes are first laid out in
//! a road frame where the centerline starts along +x, then moved into the ego
//! frame so the ego can start slightly off-center and misaligned.

mod corridor;
mod dataset;
mod expert;
mod features;

pub use corridor::{Corridor, Projection};
pub use dataset::{read_dataset, write_dataset, DatasetManifest, DATASET_VERSION};
pub use expert::{rollout, scripted_expert, ExpertConfig, Rollout};
pub use features::{
    compute_features, feature_scale, scaled_features, CORRIDOR_OFFSET, CORRIDOR_SAMPLES,
    CORRIDOR_SPACING, CORRIDOR_WIDTH, FEATURE_DIM, HALF_WIDTH_INDEX, OBSTACLE_OFFSET,
    OBSTACLE_SLOTS, OBSTACLE_WIDTH, STOP_INDEX, STOP_SENTINEL,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::metrics::MetricConfig;
use crate::numerics::{derive_seed, RngStream};
use crate::trajcore::{EgoState, Trajectory, HORIZON};

/// Circular agent moving at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec2,
    pub radius: f64,
    pub velocity: Vec2,
}

impl Obstacle {
    pub fn new(center: Vec2, radius: f64, velocity: Vec2) -> Result<Self> {
        if !(radius > 0.0) || !center.is_finite() || !velocity.is_finite() {
            return Err(Error::Invalid("obstacle needs a positive radius and finite state".into()));
        }
        Ok(Self {
            center,
            radius,
            velocity,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Cruise,
    Bend,
    Obstacle,
    Lead,
    Stop,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Cruise, Family::Bend, Family::Obstacle, Family::Lead, Family::Stop];

    pub fn name(self) -> &'static str {
        match self {
            Family::Cruise => "cruise",
            Family::Bend => "bend",
            Family::Obstacle => "obstacle",
            Family::Lead => "lead",
            Family::Stop => "stop",
        }
    }
}

/// Scene geometry: everything the expert and the features depend on.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub ego: EgoState,
    pub obstacles: Vec<Obstacle>,
    pub corridor: Corridor,
    /// Arc length of the stop line along the centerline, if any.
    pub stop_line: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    pub family: Family,
    pub ego: EgoState,
    pub obstacles: Vec<Obstacle>,
    pub corridor: Corridor,
    pub stop_line: Option<f64>,
    pub expert: Trajectory,
    pub features: Vec<f64>,
}

impl Scenario {
    pub fn scene(&self) -> Scene {
        Scene {
            ego: self.ego,
            obstacles: self.obstacles.clone(),
            corridor: self.corridor.clone(),
            stop_line: self.stop_line,
        }
    }

    /// Checks the structural invariants of a stored scenario.
    pub fn validate(&self) -> Result<()> {
        self.corridor.validate()?;
        if self.expert.len() != HORIZON {
            return Err(Error::Invalid(format!(
                "expert has {} waypoints, expected {HORIZON}",
                self.expert.len()
            )));
        }
        if self.features.len() != FEATURE_DIM {
            return Err(Error::Invalid(format!(
                "features have length {}, expected {FEATURE_DIM}",
                self.features.len()
            )));
        }
        if let Some(o) = self.obstacles.iter().find(|o| !(o.radius > 0.0)) {
            return Err(Error::Invalid(format!("obstacle radius {} is not positive", o.radius)));
        }
        Ok(())
    }
}

/// Relative frequency of each scene family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyMix {
    pub cruise: f64,
    pub bend: f64,
    pub obstacle: f64,
    pub lead: f64,
    pub stop: f64,
}

impl Default for FamilyMix {
    fn default() -> Self {
        Self {
            cruise: 0.30,
            bend: 0.25,
            obstacle: 0.20,
            lead: 0.15,
            stop: 0.10,
        }
    }
}

impl FamilyMix {
    fn weights(&self) -> [f64; 5] {
        [self.cruise, self.bend, self.obstacle, self.lead, self.stop]
    }

    fn pick(&self, u: f64) -> Result<Family> {
        let w = self.weights();
        let total: f64 = w.iter().sum();
        if w.iter().any(|v| !(*v >= 0.0)) || !(total > 0.0) {
            return Err(Error::Config("family mix needs nonnegative weights with a positive sum".into()));
        }
        let mut acc = 0.0;
        for (f, wi) in Family::ALL.iter().zip(w) {
            acc += wi / total;
            if u < acc && wi > 0.0 {
                return Ok(*f);
            }
        }
        Ok(*Family::ALL.iter().zip(w).rev().find(|(_, wi)| *wi > 0.0).unwrap().0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub family_mix: FamilyMix,
    /// Ego speed range in m/s; each family further restricts it.
    pub speed_range: [f64; 2],
    /// Inclusive range of off-road distractor obstacles in cruise scenes.
    pub obstacle_count: [usize; 2],
    pub max_retries: usize,
    /// Largest initial lateral offset from the centerline, meters.
    pub max_initial_offset: f64,
    /// Largest initial heading error relative to the centerline, radians.
    pub max_initial_heading: f64,
    pub expert: ExpertConfig,
    /// Thresholds the expert must satisfy for a scene to be accepted.
    pub validation: MetricConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            family_mix: FamilyMix::default(),
            speed_range: [4.0, 15.0],
            obstacle_count: [0, 2],
            max_retries: 8,
            max_initial_offset: 0.4,
            max_initial_heading: 0.04,
            expert: ExpertConfig::default(),
            validation: MetricConfig::default(),
        }
    }
}

const CORRIDOR_START: f64 = -10.0;
const CORRIDOR_END: f64 = 120.0;
const CORRIDOR_SPACING_M: f64 = 2.0;

/// Road-frame layout before conversion to the ego frame.
struct Layout {
    centerline: Vec<Vec2>,
    half_width: f64,
    speed: f64,
    obstacles: Vec<Obstacle>,
    stop_line_x: Option<f64>,
}

fn straight_centerline(end: f64) -> Vec<Vec2> {
    let mut pts = Vec::new();
    let mut x = CORRIDOR_START;
    while x < end - 1e-9 {
        pts.push(Vec2::new(x, 0.0));
        x += CORRIDOR_SPACING_M;
    }
    pts.push(Vec2::new(end, 0.0));
    pts
}

fn speed_in(rng: &mut RngStream, cfg: &SceneConfig, lo: f64, hi: f64) -> Result<f64> {
    let lo = lo.max(cfg.speed_range[0]);
    let hi = hi.min(cfg.speed_range[1]);
    if !(lo <= hi) {
        return Err(Error::Config(format!(
            "speed range {:?} does not overlap [{lo}, {hi}]",
            cfg.speed_range
        )));
    }
    Ok(rng.uniform_in(lo, hi))
}

fn distractors(rng: &mut RngStream, cfg: &SceneConfig, half_width: f64) -> Vec<Obstacle> {
    let [lo, hi] = cfg.obstacle_count;
    let n = if hi >= lo { rng.int_in(lo as u64, hi as u64) } else { 0 };
    (0..n)
        .map(|_| {
            let radius = rng.uniform_in(0.5, 1.2);
            let x = rng.uniform_in(5.0, 60.0);
            let side = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            let y = side * (half_width + radius + rng.uniform_in(1.5, 4.0));
            Obstacle {
                center: Vec2::new(x, y),
                radius,
                velocity: Vec2::ZERO,
            }
        })
        .collect()
}

fn layout_cruise(rng: &mut RngStream, cfg: &SceneConfig) -> Result<Layout> {
    let half_width = rng.uniform_in(1.6, 2.2);
    let speed = speed_in(rng, cfg, 4.0, 15.0)?;
    let obstacles = distractors(rng, cfg, half_width);
    Ok(Layout {
        centerline: straight_centerline(CORRIDOR_END),
        half_width,
        speed,
        obstacles,
        stop_line_x: None,
    })
}

fn layout_bend(rng: &mut RngStream, cfg: &SceneConfig) -> Result<Layout> {
    let half_width = rng.uniform_in(1.6, 2.2);
    let speed = speed_in(rng, cfg, 5.0, 14.0)?;
    let k_max = (1.0 / 25.0f64).min(2.5 / (speed * speed));
    let k_min = 1.0 / 120.0;
    let kappa = rng.uniform_in(k_min, k_max.max(k_min)) * if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
    let lead_in = rng.uniform_in(0.0, 20.0);
    let max_turn = std::f64::consts::FRAC_PI_2 * 1.2;

    let mut pts = straight_centerline(lead_in.max(CORRIDOR_START + CORRIDOR_SPACING_M));
    let mut p = *pts.last().unwrap();
    let mut heading: f64 = 0.0;
    let mut s = p.x - CORRIDOR_START;
    let total = CORRIDOR_END - CORRIDOR_START;
    while s < total {
        let turn = (kappa * CORRIDOR_SPACING_M).abs();
        if heading.abs() + turn <= max_turn {
            // Chord of an arc with curvature kappa.
            let mid = heading + 0.5 * kappa * CORRIDOR_SPACING_M;
            let chord = 2.0 * (0.5 * turn).sin() / kappa.abs();
            p += Vec2::from_angle(mid) * chord;
            heading += kappa * CORRIDOR_SPACING_M;
        } else {
            p += Vec2::from_angle(heading) * CORRIDOR_SPACING_M;
        }
        pts.push(p);
        s += CORRIDOR_SPACING_M;
    }
    Ok(Layout {
        centerline: pts,
        half_width,
        speed,
        obstacles: Vec::new(),
        stop_line_x: None,
    })
}

fn layout_obstacle(rng: &mut RngStream, cfg: &SceneConfig) -> Result<Layout> {
    let half_width = rng.uniform_in(3.4, 4.2);
    let speed = speed_in(rng, cfg, 5.0, 11.0)?;
    let radius = rng.uniform_in(0.6, 1.2);
    let near = (2.0 * speed).max(15.0);
    let x = rng.uniform_in(near, near + 15.0);
    let y = rng.uniform_in(-0.8, 0.8);
    Ok(Layout {
        centerline: straight_centerline(CORRIDOR_END),
        half_width,
        speed,
        obstacles: vec![Obstacle {
            center: Vec2::new(x, y),
            radius,
            velocity: Vec2::ZERO,
        }],
        stop_line_x: None,
    })
}

fn layout_lead(rng: &mut RngStream, cfg: &SceneConfig) -> Result<Layout> {
    let half_width = rng.uniform_in(1.6, 2.2);
    let speed = speed_in(rng, cfg, 8.0, 15.0)?;
    let lead_speed = speed * rng.uniform_in(0.4, 0.8);
    let radius = rng.uniform_in(1.0, 1.3);
    let e = &cfg.expert;
    let gap = rng.uniform_in(1.0, 1.6) * (e.follow_standstill + e.follow_time_gap * speed);
    let x = gap + radius + cfg.validation.ego_radius;
    Ok(Layout {
        centerline: straight_centerline(CORRIDOR_END),
        half_width,
        speed,
        obstacles: vec![Obstacle {
            center: Vec2::new(x, 0.0),
            radius,
            velocity: Vec2::new(lead_speed, 0.0),
        }],
        stop_line_x: None,
    })
}

fn layout_stop(rng: &mut RngStream, cfg: &SceneConfig) -> Result<Layout> {
    let half_width = rng.uniform_in(1.6, 2.2);
    let speed = speed_in(rng, cfg, 4.0, 8.0)?;
    let decel = rng.uniform_in(1.6, 2.6).max(speed / 2.8).min(3.0);
    let line = speed * speed / (2.0 * decel) + 0.35 * speed + cfg.expert.stop_margin;
    Ok(Layout {
        centerline: straight_centerline(line),
        half_width,
        speed,
        obstacles: Vec::new(),
        stop_line_x: Some(line),
    })
}

/// Moves a road-frame layout into the ego frame of an ego placed at
/// `(0, offset)` with heading `heading` in road coordinates.
fn to_ego_frame(layout: Layout, offset: f64, heading: f64) -> Result<Scene> {
    let origin = Vec2::new(0.0, offset);
    let tf = |p: Vec2| (p - origin).rotate(-heading);
    let centerline: Vec<Vec2> = layout.centerline.iter().map(|&p| tf(p)).collect();
    let corridor = Corridor::new(centerline, layout.half_width)?;
    let obstacles = layout
        .obstacles
        .iter()
        .map(|o| Obstacle {
            center: tf(o.center),
            radius: o.radius,
            velocity: o.velocity.rotate(-heading),
        })
        .collect();
    let stop_line = layout.stop_line_x.map(|x| x - CORRIDOR_START);
    Ok(Scene {
        ego: EgoState::at_origin(layout.speed),
        obstacles,
        corridor,
        stop_line,
    })
}

fn attempt(seed: u64, family: Family, cfg: &SceneConfig) -> Result<(Scene, Trajectory)> {
    let mut rng = RngStream::new(seed);
    let layout = match family {
        Family::Cruise => layout_cruise(&mut rng, cfg)?,
        Family::Bend => layout_bend(&mut rng, cfg)?,
        Family::Obstacle => layout_obstacle(&mut rng, cfg)?,
        Family::Lead => layout_lead(&mut rng, cfg)?,
        Family::Stop => layout_stop(&mut rng, cfg)?,
    };
    let offset = rng.uniform_in(-cfg.max_initial_offset, cfg.max_initial_offset);
    let heading = rng.uniform_in(-cfg.max_initial_heading, cfg.max_initial_heading);
    let scene = to_ego_frame(layout, offset, heading)?;
    let expert = scripted_expert(&scene, &cfg.expert, &cfg.validation)?;
    Ok((scene, expert))
}

/// Builds one scenario. The family is fixed by `seed`; the layout is redrawn
/// from derived seeds until the expert is accepted, up to `max_retries` times.
pub fn generate_scenario(seed: u64, cfg: &SceneConfig, id: &str) -> Result<Scenario> {
    let family = cfg.family_mix.pick(RngStream::new(derive_seed(&[seed, 0xFA])).uniform())?;
    let mut last_err = None;
    for retry in 0..cfg.max_retries.max(1) {
        match attempt(derive_seed(&[seed, retry as u64]), family, cfg) {
            Ok((scene, expert)) => {
                let features = compute_features(&scene.ego, &scene.obstacles, &scene.corridor, scene.stop_line);
                return Ok(Scenario {
                    id: id.to_string(),
                    seed,
                    family,
                    ego: scene.ego,
                    obstacles: scene.obstacles,
                    corridor: scene.corridor,
                    stop_line: scene.stop_line,
                    expert,
                    features,
                });
            }
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::Generation {
        seed,
        reason: last_err.map_or_else(|| "no attempts".into(), |e| e.to_string()),
    })
}

/// `count` scenarios with ids `{prefix}-{index:06}`. Scenario `i` uses seed
/// `derive_seed([base_seed, i])`; on generation failure the seed is resampled
/// deterministically.
pub fn generate_dataset(base_seed: u64, count: usize, cfg: &SceneConfig, prefix: &str) -> Result<Vec<Scenario>> {
    const RESAMPLES: u64 = 32;
    (0..count)
        .map(|i| {
            let id = format!("{prefix}-{i:06}");
            let mut last = None;
            for round in 0..RESAMPLES {
                let seed = if round == 0 {
                    derive_seed(&[base_seed, i as u64])
                } else {
                    derive_seed(&[base_seed, i as u64, round])
                };
                match generate_scenario(seed, cfg, &id) {
                    Ok(s) => return Ok(s),
                    Err(e @ Error::Generation { .. }) => last = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(last.unwrap())
        })
        .collect()
}
