use super::Vec3;
use crate::error::{Error, Result};

/// Axis-aligned box, `lo < hi` on every axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl Aabb {
    pub fn new(lo: Vec3, hi: Vec3) -> Result<Self> {
        let valid = (0..3).all(|k| lo[k].is_finite() && hi[k].is_finite() && lo[k] < hi[k]);
        if !valid {
            return Err(Error::InvalidDomain {
                lo: lo.into(),
                hi: hi.into(),
            });
        }
        Ok(Self { lo, hi })
    }

    /// `[-h, h]^3` around the origin.
    pub fn cube(half: f64) -> Result<Self> {
        Self::new(Vec3::repeat(-half), Vec3::repeat(half))
    }

    pub fn extent(&self) -> Vec3 {
        self.hi - self.lo
    }

    pub fn center(&self) -> Vec3 {
        (self.lo + self.hi) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.lo[k] && p[k] <= self.hi[k])
    }

    pub fn contains_strict(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] > self.lo[k] && p[k] < self.hi[k])
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.lo.x, self.hi.x),
            p.y.clamp(self.lo.y, self.hi.y),
            p.z.clamp(self.lo.z, self.hi.z),
        )
    }

    /// Euclidean distance from `p` to the box, zero inside.
    pub fn exterior_distance(&self, p: &Vec3) -> f64 {
        (p - self.clamp(p)).norm()
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (lo, hi) = (self.lo, self.hi);
        std::array::from_fn(|c| {
            Vec3::new(
                if c & 1 == 0 { lo.x } else { hi.x },
                if c & 2 == 0 { lo.y } else { hi.y },
                if c & 4 == 0 { lo.z } else { hi.z },
            )
        })
    }

    /// Smallest box containing every point; `None` for an empty or flat set.
    pub fn bounding(points: impl IntoIterator<Item = Vec3>) -> Option<Self> {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        Self::new(lo, hi).ok()
    }

    pub fn intersection(&self, other: &Aabb) -> Option<Aabb> {
        Self::new(self.lo.sup(&other.lo), self.hi.inf(&other.hi)).ok()
    }

    /// Slab test. Returns the parametric interval `[t0, t1]` (with `t0 >= 0`)
    /// where `origin + t * dir` lies inside the box.
    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = 0.0_f64;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            if dir[k].abs() < 1e-300 {
                if origin[k] < self.lo[k] || origin[k] > self.hi[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let (mut a, mut b) = ((self.lo[k] - origin[k]) * inv, (self.hi[k] - origin[k]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        (t0 < t1).then_some((t0, t1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inverted_bounds() {
        assert!(Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, -1.0, 1.0)).is_err());
        assert!(Aabb::new(Vec3::zeros(), Vec3::zeros()).is_err());
    }

    #[test]
    fn ray_interval_through_unit_cube() {
        let b = Aabb::new(Vec3::zeros(), Vec3::repeat(1.0)).unwrap();
        let (t0, t1) = b
            .ray_interval(&Vec3::new(-1.0, 0.5, 0.5), &Vec3::new(1.0, 0.0, 0.0))
            .unwrap();
        assert_eq!((t0, t1), (1.0, 2.0));
        assert!(b
            .ray_interval(&Vec3::new(-1.0, 2.0, 0.5), &Vec3::new(1.0, 0.0, 0.0))
            .is_none());
        // origin inside
        let (t0, _) = b
            .ray_interval(&Vec3::new(0.5, 0.5, 0.5), &Vec3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert_eq!(t0, 0.0);
    }

    #[test]
    fn exterior_distance_is_zero_inside() {
        let b = Aabb::cube(1.0).unwrap();
        assert_eq!(b.exterior_distance(&Vec3::new(0.3, -0.2, 0.9)), 0.0);
        assert!((b.exterior_distance(&Vec3::new(2.0, 2.0, 0.0)) - 2f64.sqrt()).abs() < 1e-15);
    }
}
