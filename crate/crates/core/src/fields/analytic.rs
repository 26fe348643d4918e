use std::f64::consts::TAU;

use super::{Rgb, SignedDistance, Vec3};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half_extents: Vec3 },
    /// `normal . x - offset`, with a unit normal.
    Plane { normal: Vec3, offset: f64 },
}

impl Primitive {
    pub fn sphere(center: Vec3, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("sphere radius {radius} must be positive")));
        }
        Ok(Primitive::Sphere { center, radius })
    }

    pub fn cuboid(center: Vec3, half_extents: Vec3) -> Result<Self> {
        if half_extents.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "box half-extents {:?} must be positive",
                half_extents.as_slice()
            )));
        }
        Ok(Primitive::Box { center, half_extents })
    }

    pub fn plane(normal: Vec3, offset: f64) -> Result<Self> {
        if (normal.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "plane normal must be unit length, got |n| = {}",
                normal.norm()
            )));
        }
        Ok(Primitive::Plane { normal, offset })
    }

    pub fn eval(&self, p: &Vec3) -> f64 {
        match self {
            Primitive::Sphere { center, radius } => (p - center).norm() - radius,
            Primitive::Box { center, half_extents } => {
                let q = (p - center).abs() - half_extents;
                let outside = q.sup(&Vec3::zeros()).norm();
                let inside = q.max().min(0.0);
                outside + inside
            }
            Primitive::Plane { normal, offset } => normal.dot(p) - offset,
        }
    }
}

/// Exact min-union of analytic primitives.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticSdf {
    parts: Vec<Primitive>,
}

impl AnalyticSdf {
    pub fn new(parts: Vec<Primitive>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Empty("analytic sdf needs at least one primitive"));
        }
        Ok(Self { parts })
    }

    pub fn single(p: Primitive) -> Self {
        Self { parts: vec![p] }
    }

    pub fn parts(&self) -> &[Primitive] {
        &self.parts
    }

    pub fn eval(&self, p: &Vec3) -> f64 {
        self.parts
            .iter()
            .map(|s| s.eval(p))
            .fold(f64::INFINITY, f64::min)
    }
}

impl SignedDistance for AnalyticSdf {
    fn distance(&self, p: &Vec3) -> f64 {
        self.eval(p)
    }
}

/// Position-dependent albedo used when baking node fields.
#[derive(Clone, Debug, PartialEq)]
pub enum Colorizer {
    Constant(Rgb),
    /// Linear ramp between two tones along one axis over `[lo, hi]`.
    Ramp {
        axis: usize,
        lo: f64,
        hi: f64,
        from: Rgb,
        to: Rgb,
    },
    /// Smooth sinusoidal bands, distinct per channel. Gives photometric
    /// registration a texture to lock onto.
    Bands { wavelength: f64 },
}

impl Colorizer {
    /// Parses the ids used in scene specs: `white`, `red`, `bands`,
    /// `bands:<wavelength>`.
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "white" => Ok(Colorizer::Constant(Rgb::repeat(1.0))),
            "red" => Ok(Colorizer::Constant(Rgb::new(1.0, 0.0, 0.0))),
            "bands" => Ok(Colorizer::Bands { wavelength: 0.5 }),
            other => match other.strip_prefix("bands:") {
                Some(w) => {
                    let wavelength: f64 = w
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad colorizer wavelength {w:?}")))?;
                    if !(wavelength > 0.0) {
                        return Err(Error::InvalidArgument("wavelength must be positive".into()));
                    }
                    Ok(Colorizer::Bands { wavelength })
                }
                None => Err(Error::Parse(format!("unknown colorizer {other:?}"))),
            },
        }
    }

    pub fn eval(&self, p: &Vec3) -> Rgb {
        let c = match self {
            Colorizer::Constant(c) => *c,
            Colorizer::Ramp { axis, lo, hi, from, to } => {
                let t = ((p[*axis] - lo) / (hi - lo)).clamp(0.0, 1.0);
                from * (1.0 - t) + to * t
            }
            Colorizer::Bands { wavelength } => {
                let k = TAU / wavelength;
                Rgb::new(
                    0.5 + 0.4 * (k * (p.x + 0.5 * p.y)).sin(),
                    0.5 + 0.4 * (k * (p.y - 0.4 * p.z) + 1.0).sin(),
                    0.5 + 0.4 * (k * (p.z + 0.3 * p.x) + 2.0).sin(),
                )
            }
        };
        c.map(|v| v.clamp(0.0, 1.0))
    }
}
