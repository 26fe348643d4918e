use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::kdtree::KdTree;
use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::fields::{Aabb, SignedDistance, Vec3};

/// Uniform area-weighted samples on the mesh surface.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if mesh.is_empty() {
        return Err(Error::Empty("mesh"));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let areas = mesh.triangle_areas();
    let pick = WeightedIndex::new(&areas).map_err(|_| Error::Empty("mesh surface area"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let [a, b, c] = mesh.corners(pick.sample(&mut rng));
            let r1: f64 = rng.random();
            let r2: f64 = rng.random();
            let s = r1.sqrt();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChamferOptions {
    /// Average both directions instead of source to target only.
    pub symmetric: bool,
    /// Mean of squared nearest distances (otherwise plain distances).
    pub squared: bool,
}

impl Default for ChamferOptions {
    fn default() -> Self {
        Self {
            symmetric: false,
            squared: true,
        }
    }
}

fn nearest_sq(from: &[Vec3], to: &KdTree) -> Vec<f64> {
    from.par_iter()
        .map(|p| to.nearest(p).expect("non-empty tree").1)
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    xs.sum::<f64>() / n as f64
}

/// Mean squared nearest-neighbor distance from `source` to `target`.
pub fn chamfer(source: &[Vec3], target: &[Vec3]) -> Result<f64> {
    chamfer_with(source, target, ChamferOptions::default())
}

pub fn chamfer_with(source: &[Vec3], target: &[Vec3], opts: ChamferOptions) -> Result<f64> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Empty("point set"));
    }
    let one_way = |a: &[Vec3], b: &[Vec3]| {
        let d = nearest_sq(a, &KdTree::new(b.to_vec()));
        if opts.squared {
            mean(d.into_iter(), a.len())
        } else {
            mean(d.into_iter().map(f64::sqrt), a.len())
        }
    };
    let forward = one_way(source, target);
    Ok(if opts.symmetric {
        0.5 * (forward + one_way(target, source))
    } else {
        forward
    })
}

/// Harmonic mean of the fractions of `a` within `threshold` of `b` and of
/// `b` within `threshold` of `a`.
pub fn f_score(a: &[Vec3], b: &[Vec3], threshold: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("point set"));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument("threshold must be positive".into()));
    }
    let t2 = threshold * threshold;
    let within = |from: &[Vec3], to: &[Vec3]| {
        let d = nearest_sq(from, &KdTree::new(to.to_vec()));
        d.iter().filter(|v| **v <= t2).count() as f64 / from.len() as f64
    };
    let precision = within(a, b);
    let recall = within(b, a);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Mean `|f(p)|` over the points.
pub fn mean_abs_sdf<F: SignedDistance + ?Sized>(points: &[Vec3], field: &F) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Empty("point set"));
    }
    let v: Vec<f64> = points.par_iter().map(|p| field.distance(p).abs()).collect();
    Ok(mean(v.into_iter(), points.len()))
}

/// Accuracy of a reconstructed mesh together with the settings that
/// produced it.
///
/// Text form, one `key=value` per line: `chamfer`, `f_score`,
/// `mean_abs_sdf`, `threshold`, `samples`, `resolution` (`nx,ny,nz`),
/// `region` (`lo_x,lo_y,lo_z,hi_x,hi_y,hi_z`).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub chamfer: f64,
    pub f_score: f64,
    pub mean_abs_sdf: f64,
    pub threshold: f64,
    pub samples: usize,
    pub resolution: [usize; 3],
    pub region: Aabb,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "chamfer,f_score,mean_abs_sdf,threshold,samples,nx,ny,nz,lo_x,lo_y,lo_z,hi_x,hi_y,hi_z";

    fn region_values(&self) -> [f64; 6] {
        let (l, h) = (self.region.lo, self.region.hi);
        [l.x, l.y, l.z, h.x, h.y, h.z]
    }

    pub fn to_text(&self) -> String {
        let [nx, ny, nz] = self.resolution;
        let region: Vec<String> = self.region_values().iter().map(|v| v.to_string()).collect();
        format!(
            "chamfer={}\nf_score={}\nmean_abs_sdf={}\nthreshold={}\nsamples={}\nresolution={nx},{ny},{nz}\nregion={}\n",
            self.chamfer,
            self.f_score,
            self.mean_abs_sdf,
            self.threshold,
            self.samples,
            region.join(",")
        )
    }

    pub fn to_csv_row(&self) -> String {
        let [nx, ny, nz] = self.resolution;
        let region: Vec<String> = self.region_values().iter().map(|v| v.to_string()).collect();
        format!(
            "{},{},{},{},{},{nx},{ny},{nz},{}",
            self.chamfer,
            self.f_score,
            self.mean_abs_sdf,
            self.threshold,
            self.samples,
            region.join(",")
        )
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut get = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("report line {line:?}")))?;
            get.insert(k.trim(), v.trim());
        }
        let field = |k: &str| get.get(k).copied().ok_or_else(|| Error::Parse(format!("report misses {k}")));
        let num = |k: &str| -> Result<f64> {
            field(k)?.parse().map_err(|_| Error::Parse(format!("report {k} is not a number")))
        };
        let list = |k: &str| -> Result<Vec<f64>> {
            field(k)?
                .split(',')
                .map(|s| s.parse().map_err(|_| Error::Parse(format!("report {k}"))))
                .collect()
        };
        let res = list("resolution")?;
        let reg = list("region")?;
        if res.len() != 3 || reg.len() != 6 {
            return Err(Error::Parse("report resolution/region arity".into()));
        }
        Ok(Self {
            chamfer: num("chamfer")?,
            f_score: num("f_score")?,
            mean_abs_sdf: num("mean_abs_sdf")?,
            threshold: num("threshold")?,
            samples: num("samples")? as usize,
            resolution: [res[0] as usize, res[1] as usize, res[2] as usize],
            region: Aabb::new(Vec3::new(reg[0], reg[1], reg[2]), Vec3::new(reg[3], reg[4], reg[5]))?,
        })
    }
}
