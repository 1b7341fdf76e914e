use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{segment_param, Vec2};

/// Drivable area: every point within `half_width` of the centerline polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub centerline: Vec<Vec2>,
    pub half_width: f64,
}

/// Foot point of a query on the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point, measured from the first vertex.
    pub s: f64,
    /// Signed offset, positive to the left of the local tangent.
    pub lateral: f64,
    /// Unsigned distance to the polyline (differs from `|lateral|` past the ends).
    pub distance: f64,
    pub tangent: Vec2,
}

impl Corridor {
    pub fn new(centerline: Vec<Vec2>, half_width: f64) -> Result<Self> {
        let c = Self {
            centerline,
            half_width,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.centerline.len() < 2 {
            return Err(Error::DegenerateCorridor("centerline needs at least two points".into()));
        }
        if let Some(i) = self.centerline.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::DegenerateCorridor(format!("repeated centerline point at index {i}")));
        }
        if !(self.half_width > 0.0) {
            return Err(Error::DegenerateCorridor("half_width must be positive".into()));
        }
        Ok(())
    }

    /// Cumulative arc length at each vertex.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.centerline.len());
        let mut s = 0.0;
        out.push(0.0);
        for w in self.centerline.windows(2) {
            s += (w[1] - w[0]).norm();
            out.push(s);
        }
        out
    }

    pub fn length(&self) -> f64 {
        *self.arc_lengths().last().unwrap()
    }

    pub fn project(&self, p: Vec2) -> Projection {
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for (i, w) in self.centerline.windows(2).enumerate() {
            let t = segment_param(p, w[0], w[1]);
            let d = (w[0] + (w[1] - w[0]) * t - p).norm_sq();
            if d < best.0 {
                best = (d, i, t);
            }
        }
        let (d2, i, t) = best;
        let (a, b) = (self.centerline[i], self.centerline[i + 1]);
        let seg = b - a;
        let tangent = seg.normalized();
        let foot = a + seg * t;
        let s0: f64 = self.centerline[..=i]
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .sum();
        let side = tangent.cross(p - foot);
        let distance = d2.sqrt();
        Projection {
            s: s0 + seg.norm() * t,
            lateral: if side >= 0.0 { distance } else { -distance },
            distance,
            tangent,
        }
    }

    /// Point at arc length `s` shifted `lateral` meters to the left.
    /// Beyond either end the end segments are extended linearly.
    pub fn point_at(&self, s: f64, lateral: f64) -> Vec2 {
        let (p, tangent) = self.pose_at(s);
        p + tangent.perp() * lateral
    }

    pub fn tangent_at(&self, s: f64) -> Vec2 {
        self.pose_at(s).1
    }

    fn pose_at(&self, s: f64) -> (Vec2, Vec2) {
        let n = self.centerline.len();
        let mut acc = 0.0;
        for i in 0..n - 1 {
            let (a, b) = (self.centerline[i], self.centerline[i + 1]);
            let len = (b - a).norm();
            let last = i == n - 2;
            if s <= acc + len || last {
                let tangent = (b - a).normalized();
                let local = if i == 0 { s - acc } else { (s - acc).max(0.0) };
                let local = if last { local } else { local.min(len) };
                return (a + tangent * local, tangent);
            }
            acc += len;
        }
        unreachable!("validated corridors have at least one segment")
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.project(p).distance <= self.half_width
    }
}
