//! Small 2D/3D geometry kernel: vectors, axis-aligned boxes, planar rigid transforms.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// 2D point/vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        if n > 0.0 {
            Some(Vec2::new(self.x / n, self.y / n))
        } else {
            None
        }
    }

    /// Counterclockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    /// Rotate counterclockwise by `angle` radians.
    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Unit direction from an angle.
pub fn heading_dir(angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c, s)
}

/// 2D pose: position plus heading angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub pos: Vec2,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose2 {
            pos: Vec2::new(x, y),
            heading,
        }
    }
}

/// Axis-aligned 2D box, closed on its boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Aabb { min, max }
    }

    pub fn from_center_extents(center: Vec2, extents: Vec2) -> Self {
        let half = extents * 0.5;
        Aabb {
            min: center - half,
            max: center + half,
        }
    }

    pub fn center(&self) -> Vec2 {
        (self.min + self.max) * 0.5
    }

    pub fn extents(&self) -> Vec2 {
        self.max - self.min
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Strict interior test (boundary excluded).
    pub fn contains_interior(&self, p: Vec2) -> bool {
        p.x > self.min.x && p.x < self.max.x && p.y > self.min.y && p.y < self.max.y
    }

    pub fn intersects(&self, o: &Aabb) -> bool {
        self.min.x <= o.max.x && self.max.x >= o.min.x && self.min.y <= o.max.y && self.max.y >= o.min.y
    }

    pub fn translated(&self, d: Vec2) -> Aabb {
        Aabb {
            min: self.min + d,
            max: self.max + d,
        }
    }

    pub fn inflated(&self, m: f64) -> Aabb {
        Aabb {
            min: self.min - Vec2::new(m, m),
            max: self.max + Vec2::new(m, m),
        }
    }

    /// Smallest box containing a set of points. None for an empty set.
    pub fn hull_of(points: impl IntoIterator<Item = Vec2>) -> Option<Aabb> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut bb = Aabb::new(first, first);
        for p in it {
            bb.min.x = bb.min.x.min(p.x);
            bb.min.y = bb.min.y.min(p.y);
            bb.max.x = bb.max.x.max(p.x);
            bb.max.y = bb.max.y.max(p.y);
        }
        Some(bb)
    }
}

/// Planar rigid transform: rotation followed by translation.
///
/// `apply(p) = R(angle) * p + t`. z coordinates pass through untouched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform2 {
    cos: f64,
    sin: f64,
    pub trans: Vec2,
}

impl RigidTransform2 {
    pub fn identity() -> Self {
        RigidTransform2 {
            cos: 1.0,
            sin: 0.0,
            trans: Vec2::ZERO,
        }
    }

    pub fn from_angle_translation(angle: f64, trans: Vec2) -> Self {
        let (sin, cos) = angle.sin_cos();
        RigidTransform2 { cos, sin, trans }
    }

    pub fn angle(&self) -> f64 {
        self.sin.atan2(self.cos)
    }

    pub fn apply_pt(&self, p: Vec2) -> Vec2 {
        Vec2::new(
            self.cos * p.x - self.sin * p.y + self.trans.x,
            self.sin * p.x + self.cos * p.y + self.trans.y,
        )
    }

    /// Rotation only; for direction vectors.
    pub fn apply_dir(&self, d: Vec2) -> Vec2 {
        Vec2::new(self.cos * d.x - self.sin * d.y, self.sin * d.x + self.cos * d.y)
    }

    /// Rotate the xy part of a 3D point, keep z.
    pub fn apply_pt3(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.apply_pt(Vec2::new(p[0], p[1]));
        [q.x, q.y, p[2]]
    }

    pub fn apply_dir3(&self, d: [f64; 3]) -> [f64; 3] {
        let q = self.apply_dir(Vec2::new(d[0], d[1]));
        [q.x, q.y, d[2]]
    }

    pub fn inverse(&self) -> RigidTransform2 {
        // R^-1 = R^T; t' = -R^T t
        let inv = RigidTransform2 {
            cos: self.cos,
            sin: -self.sin,
            trans: Vec2::ZERO,
        };
        let t = inv.apply_dir(self.trans);
        RigidTransform2 {
            cos: self.cos,
            sin: -self.sin,
            trans: -t,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform2) -> RigidTransform2 {
        RigidTransform2 {
            cos: self.cos * other.cos - self.sin * other.sin,
            sin: self.sin * other.cos + self.cos * other.sin,
            trans: self.apply_pt(other.trans),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rotate_quarter_turn() {
        let v = Vec2::new(1.0, 0.0).rotated(std::f64::consts::FRAC_PI_2);
        assert_abs_diff_eq!(v.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn transform_roundtrip() {
        let g = RigidTransform2::from_angle_translation(0.7, Vec2::new(3.0, -2.0));
        let p = Vec2::new(1.5, 2.5);
        let q = g.inverse().apply_pt(g.apply_pt(p));
        assert_abs_diff_eq!(q.x, p.x, epsilon = 1e-12);
        assert_abs_diff_eq!(q.y, p.y, epsilon = 1e-12);
    }

    #[test]
    fn compose_matches_sequential() {
        let a = RigidTransform2::from_angle_translation(0.3, Vec2::new(1.0, 0.0));
        let b = RigidTransform2::from_angle_translation(-1.1, Vec2::new(0.0, 2.0));
        let p = Vec2::new(-0.5, 0.25);
        let q1 = a.apply_pt(b.apply_pt(p));
        let q2 = a.compose(&b).apply_pt(p);
        assert_abs_diff_eq!(q1.x, q2.x, epsilon = 1e-12);
        assert_abs_diff_eq!(q1.y, q2.y, epsilon = 1e-12);
    }

    #[test]
    fn aabb_contains_is_closed() {
        let bb = Aabb::from_center_extents(Vec2::ZERO, Vec2::new(2.0, 2.0));
        assert!(bb.contains(Vec2::new(1.0, 0.0)));
        assert!(!bb.contains_interior(Vec2::new(1.0, 0.0)));
        assert!(!bb.contains(Vec2::new(1.0001, 0.0)));
    }
}
