/*
Copyright 2026 The msgan Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
//! Planar serial chains of revolute joints.
//!
//! Joint `i` rotates link `i` relative to link `i - 1`; the absolute angle of
//! link `i` is the cumulative sum of the first `i + 1` joint angles. Every link
//! carries a point mass at its midpoint.

use nalgebra::{DMatrix, DVector, Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint angles in radians.
pub type Configuration = DVector<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarChain {
    name: String,
    link_lengths: Vec<f64>,
    link_masses: Vec<f64>,
    base: Point2<f64>,
    joint_lower: Vec<f64>,
    joint_upper: Vec<f64>,
}

/// End-effector pose. `theta` is the unwrapped sum of joint angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EePose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl EePose {
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }
}

/// A line segment between two joint frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Point2<f64>,
    pub end: Point2<f64>,
}

impl Segment {
    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn distance_to_point(&self, p: &Point2<f64>) -> f64 {
        let d = self.end - self.start;
        let len2 = d.norm_squared();
        let t = if len2 > 0.0 {
            ((p - self.start).dot(&d) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p - (self.start + d * t)).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Obstacle {
    Circle {
        center: [f64; 2],
        radius: f64,
    },
    #[serde(rename = "box")]
    Aabb {
        min: [f64; 2],
        max: [f64; 2],
    },
}

impl Obstacle {
    pub fn circle(center: [f64; 2], radius: f64) -> Result<Self> {
        let o = Obstacle::Circle { center, radius };
        o.validate()?;
        Ok(o)
    }

    pub fn aabb(min: [f64; 2], max: [f64; 2]) -> Result<Self> {
        let o = Obstacle::Aabb { min, max };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Obstacle::Circle { center, radius } => {
                if !(radius > 0.0 && radius.is_finite()) || !center.iter().all(|c| c.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "bad circle radius {radius}"
                    )));
                }
            }
            Obstacle::Aabb { min, max } => {
                if !(min[0] < max[0] && min[1] < max[1]) {
                    return Err(Error::InvalidArgument(format!(
                        "box min {min:?} must be below max {max:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Distance from the segment to the obstacle surface, clamped at zero
    /// when they touch or overlap.
    pub fn clearance(&self, seg: &Segment) -> f64 {
        match *self {
            Obstacle::Circle { center, radius } => {
                (seg.distance_to_point(&Point2::new(center[0], center[1])) - radius).max(0.0)
            }
            Obstacle::Aabb { min, max } => segment_box_distance(seg, min, max),
        }
    }
}

fn point_box_distance(p: &Point2<f64>, min: [f64; 2], max: [f64; 2]) -> f64 {
    let dx = (min[0] - p.x).max(0.0).max(p.x - max[0]);
    let dy = (min[1] - p.y).max(0.0).max(p.y - max[1]);
    dx.hypot(dy)
}

// Liang-Barsky clip of the segment against the box.
fn segment_intersects_box(seg: &Segment, min: [f64; 2], max: [f64; 2]) -> bool {
    let d = seg.end - seg.start;
    let mut t0 = 0.0_f64;
    let mut t1 = 1.0_f64;
    let checks = [
        (-d.x, seg.start.x - min[0]),
        (d.x, max[0] - seg.start.x),
        (-d.y, seg.start.y - min[1]),
        (d.y, max[1] - seg.start.y),
    ];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

fn segment_box_distance(seg: &Segment, min: [f64; 2], max: [f64; 2]) -> f64 {
    if segment_intersects_box(seg, min, max) {
        return 0.0;
    }
    // Two disjoint convex sets: the closest pair involves a vertex of one of them.
    let corners = [
        Point2::new(min[0], min[1]),
        Point2::new(max[0], min[1]),
        Point2::new(max[0], max[1]),
        Point2::new(min[0], max[1]),
    ];
    let from_ends =
        point_box_distance(&seg.start, min, max).min(point_box_distance(&seg.end, min, max));
    corners
        .iter()
        .map(|c| seg.distance_to_point(c))
        .fold(from_ends, f64::min)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct World {
    pub obstacles: Vec<Obstacle>,
    pub clearance_margin: f64,
}

impl World {
    pub fn new(obstacles: Vec<Obstacle>, clearance_margin: f64) -> Result<Self> {
        for o in &obstacles {
            o.validate()?;
        }
        if !(clearance_margin >= 0.0 && clearance_margin.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "clearance margin must be finite and >= 0, got {clearance_margin}"
            )));
        }
        Ok(World {
            obstacles,
            clearance_margin,
        })
    }

    pub fn empty() -> Self {
        World::default()
    }
}

impl PlanarChain {
    pub fn new(
        name: impl Into<String>,
        link_lengths: Vec<f64>,
        link_masses: Vec<f64>,
        base: [f64; 2],
        joint_lower: Vec<f64>,
        joint_upper: Vec<f64>,
    ) -> Result<Self> {
        let n = link_lengths.len();
        if n == 0 {
            return Err(Error::InvalidModel("chain needs at least one link".into()));
        }
        for (what, len) in [
            ("link_masses", link_masses.len()),
            ("joint_lower", joint_lower.len()),
            ("joint_upper", joint_upper.len()),
        ] {
            if len != n {
                return Err(Error::InvalidModel(format!(
                    "{what} has {len} entries, expected {n}"
                )));
            }
        }
        if link_lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidModel("link lengths must be positive".into()));
        }
        if link_masses.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(Error::InvalidModel(
                "link masses must be non-negative".into(),
            ));
        }
        if joint_lower
            .iter()
            .zip(&joint_upper)
            .any(|(lo, hi)| !(lo < hi && lo.is_finite() && hi.is_finite()))
        {
            return Err(Error::InvalidModel(
                "joint_lower must be below joint_upper".into(),
            ));
        }
        if !base.iter().all(|b| b.is_finite()) {
            return Err(Error::InvalidModel("base must be finite".into()));
        }
        Ok(PlanarChain {
            name: name.into(),
            link_lengths,
            link_masses,
            base: Point2::new(base[0], base[1]),
            joint_lower,
            joint_upper,
        })
    }

    /// Unit-mass chain with symmetric limits, handy for tests.
    pub fn uniform(n: usize, link_length: f64, limit: f64) -> Result<Self> {
        PlanarChain::new(
            format!("planar{n}"),
            vec![link_length; n],
            vec![1.0; n],
            [0.0, 0.0],
            vec![-limit; n],
            vec![limit; n],
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn link_lengths(&self) -> &[f64] {
        &self.link_lengths
    }

    pub fn link_masses(&self) -> &[f64] {
        &self.link_masses
    }

    pub fn base(&self) -> Point2<f64> {
        self.base
    }

    pub fn joint_lower(&self) -> &[f64] {
        &self.joint_lower
    }

    pub fn joint_upper(&self) -> &[f64] {
        &self.joint_upper
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn within_limits(&self, q: &Configuration) -> bool {
        q.iter()
            .zip(self.joint_lower.iter().zip(&self.joint_upper))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn check_dim(&self, q: &Configuration) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::dim(self.dof(), q.len()));
        }
        Ok(())
    }

    fn absolute_angles(&self, q: &Configuration) -> Vec<f64> {
        q.iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }

    pub fn forward_kinematics(&self, q: &Configuration) -> Result<EePose> {
        self.check_dim(q)?;
        let mut x = self.base.x;
        let mut y = self.base.y;
        let mut phi = 0.0;
        for (l, qi) in self.link_lengths.iter().zip(q.iter()) {
            phi += qi;
            x += l * phi.cos();
            y += l * phi.sin();
        }
        Ok(EePose { x, y, theta: phi })
    }

    /// 3 x n Jacobian of `(x, y, theta)`.
    pub fn jacobian(&self, q: &Configuration) -> Result<DMatrix<f64>> {
        self.check_dim(q)?;
        let n = self.dof();
        let phi = self.absolute_angles(q);
        let mut jac = DMatrix::zeros(3, n);
        // column k collects the contribution of every link at or after joint k
        let mut sx = 0.0;
        let mut sy = 0.0;
        for k in (0..n).rev() {
            sx += self.link_lengths[k] * phi[k].cos();
            sy += self.link_lengths[k] * phi[k].sin();
            jac[(0, k)] = -sy;
            jac[(1, k)] = sx;
            jac[(2, k)] = 1.0;
        }
        Ok(jac)
    }

    fn total_mass(&self) -> Result<f64> {
        let m: f64 = self.link_masses.iter().sum();
        if m <= 0.0 {
            return Err(Error::InvalidModel("total link mass is zero".into()));
        }
        Ok(m)
    }

    pub fn center_of_mass(&self, q: &Configuration) -> Result<Point2<f64>> {
        self.check_dim(q)?;
        let total = self.total_mass()?;
        let mut joint = self.base.coords;
        let mut acc = Vector2::zeros();
        let mut phi = 0.0;
        for ((l, m), qi) in self
            .link_lengths
            .iter()
            .zip(&self.link_masses)
            .zip(q.iter())
        {
            phi += qi;
            let dir = Vector2::new(phi.cos(), phi.sin());
            acc += *m * (joint + dir * (0.5 * l));
            joint += dir * *l;
        }
        Ok(Point2::from(acc / total))
    }

    /// 2 x n Jacobian of the center of mass.
    pub fn com_jacobian(&self, q: &Configuration) -> Result<DMatrix<f64>> {
        self.check_dim(q)?;
        let total = self.total_mass()?;
        let n = self.dof();
        let phi = self.absolute_angles(q);
        // Moving link j's direction by d(phi_j) moves the midpoint of link j by
        // L_j/2 and every later midpoint by L_j. Joint k rotates links k..n.
        let mut suffix_mass = vec![0.0; n + 1];
        for i in (0..n).rev() {
            suffix_mass[i] = suffix_mass[i + 1] + self.link_masses[i];
        }
        let mut jac = DMatrix::zeros(2, n);
        let mut gx = 0.0;
        let mut gy = 0.0;
        for k in (0..n).rev() {
            let lever = self.link_lengths[k] * (0.5 * self.link_masses[k] + suffix_mass[k + 1]);
            gx += lever * phi[k].cos();
            gy += lever * phi[k].sin();
            jac[(0, k)] = -gy / total;
            jac[(1, k)] = gx / total;
        }
        Ok(jac)
    }

    pub fn link_segments(&self, q: &Configuration) -> Result<Vec<Segment>> {
        self.check_dim(q)?;
        let mut start = self.base;
        let mut phi = 0.0;
        let mut out = Vec::with_capacity(self.dof());
        for (l, qi) in self.link_lengths.iter().zip(q.iter()) {
            phi += qi;
            let end = start + Vector2::new(phi.cos(), phi.sin()) * *l;
            out.push(Segment { start, end });
            start = end;
        }
        Ok(out)
    }

    /// Smallest link-to-obstacle clearance, `f64::INFINITY` for an empty world.
    pub fn min_clearance(&self, q: &Configuration, world: &World) -> Result<f64> {
        let segs = self.link_segments(q)?;
        Ok(segs
            .iter()
            .flat_map(|s| world.obstacles.iter().map(move |o| o.clearance(s)))
            .fold(f64::INFINITY, f64::min))
    }

    pub fn in_collision(&self, q: &Configuration, world: &World) -> Result<bool> {
        let segs = self.link_segments(q)?;
        for s in &segs {
            for o in &world.obstacles {
                // touching counts as collision even at zero margin
                let c = o.clearance(s);
                if c < world.clearance_margin || c <= 0.0 {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }
}
