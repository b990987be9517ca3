//! Minimal 3D vector and axis-aligned box geometry used by the simulator.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// A 3D point or direction in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n == 0.0 {
            Vec3::ZERO
        } else {
            self / n
        }
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    /// Component access by axis index (0 = x, 1 = y, 2 = z).
    pub fn axis(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis index out of range: {i}"),
        }
    }

    pub fn set_axis(&mut self, i: usize, v: f64) {
        match i {
            0 => self.x = v,
            1 => self.y = v,
            2 => self.z = v,
            _ => panic!("axis index out of range: {i}"),
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Axis-aligned box given by its minimum and maximum corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn from_center_half(center: Vec3, half: Vec3) -> Self {
        Self {
            min: center - half,
            max: center + half,
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn contains_strict(&self, p: Vec3) -> bool {
        p.x > self.min.x
            && p.x < self.max.x
            && p.y > self.min.y
            && p.y < self.max.y
            && p.z > self.min.z
            && p.z < self.max.z
    }

    /// Whether `inner` lies entirely inside `self`.
    pub fn encloses(&self, inner: &Aabb) -> bool {
        self.contains(inner.min) && self.contains(inner.max)
    }

    /// Slab-method entry distance of a ray starting outside the box, if any.
    ///
    /// Returns the smallest `t > eps` with `origin + dir * t` on the box
    /// surface, for `dir` of unit length.
    pub fn ray_enter(&self, origin: Vec3, dir: Vec3, eps: f64) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            let o = origin.axis(i);
            let d = dir.axis(i);
            let (lo, hi) = (self.min.axis(i), self.max.axis(i));
            if d.abs() < 1e-15 {
                if o < lo || o > hi {
                    return None;
                }
            } else {
                let mut t0 = (lo - o) / d;
                let mut t1 = (hi - o) / d;
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                t_near = t_near.max(t0);
                t_far = t_far.min(t1);
                if t_near > t_far {
                    return None;
                }
            }
        }
        if t_far < eps {
            return None;
        }
        if t_near > eps {
            Some(t_near)
        } else {
            // origin inside or on the surface; report the exit instead
            Some(t_far)
        }
    }

    /// Exit distance of a ray starting inside the box.
    pub fn ray_exit(&self, origin: Vec3, dir: Vec3) -> f64 {
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            let o = origin.axis(i);
            let d = dir.axis(i);
            if d.abs() < 1e-15 {
                continue;
            }
            let t0 = (self.min.axis(i) - o) / d;
            let t1 = (self.max.axis(i) - o) / d;
            t_far = t_far.min(t0.max(t1));
        }
        t_far
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_follows_right_hand_rule() {
        let x = Vec3::new(1.0, 0.0, 0.0);
        let y = Vec3::new(0.0, 1.0, 0.0);
        assert_eq!(x.cross(y), Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn ray_exit_from_box_center() {
        let b = Aabb::new(Vec3::ZERO, Vec3::new(4.0, 4.0, 3.0));
        let t = b.ray_exit(Vec3::new(2.0, 2.0, 1.5), Vec3::new(1.0, 0.0, 0.0));
        assert!((t - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ray_enter_misses_offset_box() {
        let b = Aabb::new(Vec3::new(2.0, 2.0, 2.0), Vec3::new(3.0, 3.0, 3.0));
        let hit = b.ray_enter(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), 1e-9);
        assert!(hit.is_none());
    }

    #[test]
    fn ray_enter_hits_face_head_on() {
        let b = Aabb::new(Vec3::new(2.0, -1.0, -1.0), Vec3::new(3.0, 1.0, 1.0));
        let t = b
            .ray_enter(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), 1e-9)
            .unwrap();
        assert!((t - 2.0).abs() < 1e-12);
    }
}
