use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Aabb, Rgb, SignedDistance, Vec3};
use crate::error::{Error, Result};

/// Offsets closer than this (in cell units) to a vertex snap onto it, so a
/// query at a vertex position returns the stored value exactly.
const VERTEX_SNAP: f64 = 1e-11;

/// Shared layout of the vertex-centered grids: x-fastest,
/// `index = ix + nx * (iy + ny * iz)`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Lattice {
    domain: Aabb,
    dims: [usize; 3],
    // cells per world unit on each axis
    scale: [f64; 3],
}

struct Stencil {
    base: usize,
    strides: [usize; 3],
    t: [f64; 3],
}

impl Lattice {
    fn new(domain: Aabb, dims: [usize; 3]) -> Result<Self> {
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::InvalidDims(dims));
        }
        let e = domain.extent();
        let scale = std::array::from_fn(|k| (dims[k] - 1) as f64 / e[k]);
        Ok(Self { domain, dims, scale })
    }

    fn len(&self) -> usize {
        self.dims.iter().product()
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    fn coord(&self, axis: usize, i: usize) -> f64 {
        let n = self.dims[axis];
        let (lo, hi) = (self.domain.lo[axis], self.domain.hi[axis]);
        if i + 1 == n {
            hi
        } else {
            lo + (hi - lo) * (i as f64 / (n - 1) as f64)
        }
    }

    fn vertex(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Vec3::new(self.coord(0, i), self.coord(1, j), self.coord(2, k))
    }

    /// `p` must already be inside the domain.
    fn stencil(&self, p: &Vec3) -> Stencil {
        let mut cell = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let mut u = (p[a] - self.domain.lo[a]) * self.scale[a];
            let r = u.round();
            if (u - r).abs() < VERTEX_SNAP {
                u = r;
            }
            let top = self.dims[a] - 2;
            let c = (u.floor().max(0.0) as usize).min(top);
            cell[a] = c;
            t[a] = (u - c as f64).clamp(0.0, 1.0);
        }
        let strides = [1, self.dims[0], self.dims[0] * self.dims[1]];
        Stencil {
            base: self.index(cell[0], cell[1], cell[2]),
            strides,
            t,
        }
    }
}

impl Stencil {
    fn interpolate<T>(&self, values: &[T]) -> T
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    {
        let [sx, sy, sz] = self.strides;
        let [tx, ty, tz] = self.t;
        let b = self.base;
        let lerp = |a: T, c: T, t: f64| a * (1.0 - t) + c * t;
        let x00 = lerp(values[b], values[b + sx], tx);
        let x10 = lerp(values[b + sy], values[b + sy + sx], tx);
        let x01 = lerp(values[b + sz], values[b + sz + sx], tx);
        let x11 = lerp(values[b + sz + sy], values[b + sz + sy + sx], tx);
        lerp(lerp(x00, x10, ty), lerp(x01, x11, ty), tz)
    }
}

/// Dense signed distance samples on a vertex-centered lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfGrid {
    lattice: Lattice,
    values: Vec<f64>,
}

impl SdfGrid {
    pub fn new(domain: Aabb, dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        let lattice = Lattice::new(domain, dims)?;
        if values.len() != lattice.len() {
            return Err(Error::PayloadMismatch(format!(
                "{} values for dims {:?}",
                values.len(),
                dims
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite sdf value at index {i}")));
        }
        Ok(Self { lattice, values })
    }

    /// Samples `f` at every vertex.
    pub fn from_fn(domain: Aabb, dims: [usize; 3], f: impl Fn(&Vec3) -> f64) -> Result<Self> {
        let lattice = Lattice::new(domain, dims)?;
        let values = vertices(&lattice).map(|p| f(&p)).collect();
        Self::new(domain, dims, values)
    }

    pub fn domain(&self) -> &Aabb {
        &self.lattice.domain
    }

    pub fn dims(&self) -> [usize; 3] {
        self.lattice.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spacing(&self) -> Vec3 {
        Vec3::from_fn(|k, _| 1.0 / self.lattice.scale[k])
    }

    pub fn vertex_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.lattice.vertex(i, j, k)
    }

    pub fn value_at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.lattice.index(i, j, k)]
    }

    /// Trilinear inside the domain. Outside, the value at the nearest
    /// domain point plus the distance to it, so the field keeps growing away
    /// from the box and never grows a spurious zero crossing out there.
    pub fn eval(&self, p: &Vec3) -> f64 {
        let d = &self.lattice.domain;
        if d.contains(p) {
            self.lattice.stencil(p).interpolate(&self.values)
        } else {
            let q = d.clamp(p);
            self.lattice.stencil(&q).interpolate(&self.values) + (p - q).norm()
        }
    }

    /// Upper bound on the gradient norm of the interpolant, from the largest
    /// adjacent-vertex difference along each axis.
    pub fn lipschitz_bound(&self) -> f64 {
        let [nx, ny, nz] = self.lattice.dims;
        let h = self.spacing();
        let mut worst = [0.0f64; 3];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let v = self.value_at(i, j, k);
                    if i + 1 < nx {
                        worst[0] = worst[0].max((self.value_at(i + 1, j, k) - v).abs());
                    }
                    if j + 1 < ny {
                        worst[1] = worst[1].max((self.value_at(i, j + 1, k) - v).abs());
                    }
                    if k + 1 < nz {
                        worst[2] = worst[2].max((self.value_at(i, j, k + 1) - v).abs());
                    }
                }
            }
        }
        Vec3::new(worst[0] / h.x, worst[1] / h.y, worst[2] / h.z).norm()
    }
}

impl SignedDistance for SdfGrid {
    fn distance(&self, p: &Vec3) -> f64 {
        self.eval(p)
    }
}

/// RGB samples on the same lattice as an [`SdfGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct ColorGrid {
    lattice: Lattice,
    values: Vec<Rgb>,
    background: Rgb,
}

impl ColorGrid {
    pub fn new(domain: Aabb, dims: [usize; 3], values: Vec<Rgb>) -> Result<Self> {
        let lattice = Lattice::new(domain, dims)?;
        if values.len() != lattice.len() {
            return Err(Error::PayloadMismatch(format!(
                "{} colors for dims {:?}",
                values.len(),
                dims
            )));
        }
        if let Some(i) = values
            .iter()
            .position(|c| c.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::InvalidArgument(format!("color channel outside [0,1] at index {i}")));
        }
        Ok(Self {
            lattice,
            values,
            background: Rgb::zeros(),
        })
    }

    pub fn constant(domain: Aabb, dims: [usize; 3], c: Rgb) -> Result<Self> {
        let n = Lattice::new(domain, dims)?.len();
        Self::new(domain, dims, vec![c; n])
    }

    pub fn from_fn(domain: Aabb, dims: [usize; 3], f: impl Fn(&Vec3) -> Rgb) -> Result<Self> {
        let lattice = Lattice::new(domain, dims)?;
        let values = vertices(&lattice).map(|p| f(&p)).collect();
        Self::new(domain, dims, values)
    }

    pub fn with_background(mut self, background: Rgb) -> Self {
        self.background = background;
        self
    }

    pub fn domain(&self) -> &Aabb {
        &self.lattice.domain
    }

    pub fn dims(&self) -> [usize; 3] {
        self.lattice.dims
    }

    pub fn values(&self) -> &[Rgb] {
        &self.values
    }

    pub fn background(&self) -> Rgb {
        self.background
    }

    pub fn eval(&self, p: &Vec3) -> Rgb {
        if self.lattice.domain.contains(p) {
            self.lattice.stencil(p).interpolate(&self.values)
        } else {
            self.background
        }
    }
}

/// One node's local field: geometry plus albedo over a shared domain.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeField {
    pub sdf: SdfGrid,
    pub color: ColorGrid,
}

impl NodeField {
    pub fn new(sdf: SdfGrid, color: ColorGrid) -> Result<Self> {
        if sdf.domain() != color.domain() || sdf.dims() != color.dims() {
            return Err(Error::DimensionMismatch(
                "sdf and color grids must share domain and dims".into(),
            ));
        }
        Ok(Self { sdf, color })
    }

    pub fn domain(&self) -> &Aabb {
        self.sdf.domain()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.sdf.dims()
    }

    /// Largest cell edge length.
    pub fn voxel_size(&self) -> f64 {
        self.sdf.spacing().max()
    }
}

impl SignedDistance for NodeField {
    fn distance(&self, p: &Vec3) -> f64 {
        self.sdf.eval(p)
    }
}

/// Uniform additive noise on baked SDF values, emulating reconstruction error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Noise {
    pub amplitude: f64,
    pub seed: u64,
}

/// Samples an SDF and a colorizer on a fresh lattice.
pub fn bake<S, C>(
    sdf: &S,
    colorizer: C,
    domain: Aabb,
    dims: [usize; 3],
    noise: Option<Noise>,
) -> Result<NodeField>
where
    S: SignedDistance + ?Sized,
    C: Fn(&Vec3) -> Rgb,
{
    let lattice = Lattice::new(domain, dims)?;
    let mut values: Vec<f64> = vertices(&lattice).map(|p| sdf.distance(&p)).collect();
    if let Some(Noise { amplitude, seed }) = noise {
        if amplitude < 0.0 {
            return Err(Error::InvalidArgument("noise amplitude must be >= 0".into()));
        }
        if amplitude > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in &mut values {
                *v += rng.random_range(-amplitude..=amplitude);
            }
        }
    }
    let colors = vertices(&lattice)
        .map(|p| colorizer(&p).map(|c| c.clamp(0.0, 1.0)))
        .collect();
    NodeField::new(
        SdfGrid::new(domain, dims, values)?,
        ColorGrid::new(domain, dims, colors)?,
    )
}

fn vertices(l: &Lattice) -> impl Iterator<Item = Vec3> + '_ {
    let [nx, ny, nz] = l.dims;
    (0..nz).flat_map(move |k| (0..ny).flat_map(move |j| (0..nx).map(move |i| l.vertex(i, j, k))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AnalyticSdf, Primitive};
    use proptest::prelude::*;

    fn unit() -> Aabb {
        Aabb::new(Vec3::zeros(), Vec3::repeat(1.0)).unwrap()
    }

    #[test]
    fn linear_field_is_reproduced() {
        let g = SdfGrid::from_fn(unit(), [9, 9, 9], |p| p.x).unwrap();
        assert!((g.eval(&Vec3::new(0.37, 0.5, 0.5)) - 0.37).abs() < 1e-15);
    }

    #[test]
    fn exterior_adds_distance_to_box() {
        let g = SdfGrid::from_fn(unit(), [5, 5, 5], |_| 0.1).unwrap();
        assert!((g.eval(&Vec3::new(2.0, 0.5, 0.5)) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn sphere_center_within_one_voxel() {
        let r = 0.5;
        let s = AnalyticSdf::single(Primitive::sphere(Vec3::new(0.03, -0.02, 0.01), r).unwrap());
        let d = Aabb::cube(1.0).unwrap();
        let g = SdfGrid::from_fn(d, [65, 65, 65], |p| s.eval(p)).unwrap();
        let h = g.spacing().norm();
        let got = g.eval(&Vec3::new(0.03, -0.02, 0.01));
        assert!((got + r).abs() <= h, "{got}");
    }

    #[test]
    fn bake_hits_exact_vertex_values() {
        let s = AnalyticSdf::single(Primitive::sphere(Vec3::zeros(), 0.5).unwrap());
        let f = bake(&s, |_| Rgb::new(1.0, 0.0, 0.0), Aabb::cube(1.0).unwrap(), [33, 33, 33], None)
            .unwrap();
        assert_eq!(f.sdf.value_at(16, 16, 16), -0.5);
        assert_eq!(f.sdf.eval(&Vec3::zeros()), -0.5);
        let again =
            bake(&s, |_| Rgb::new(1.0, 0.0, 0.0), Aabb::cube(1.0).unwrap(), [33, 33, 33], None)
                .unwrap();
        assert_eq!(f, again);
    }

    #[test]
    fn noise_is_bounded_and_seeded() {
        let s = AnalyticSdf::single(Primitive::sphere(Vec3::zeros(), 0.5).unwrap());
        let d = Aabb::cube(1.0).unwrap();
        let noise = Some(Noise { amplitude: 0.01, seed: 7 });
        let a = bake(&s, |_| Rgb::zeros(), d, [17, 17, 17], noise).unwrap();
        let b = bake(&s, |_| Rgb::zeros(), d, [17, 17, 17], noise).unwrap();
        assert_eq!(a, b);
        let mut worst = 0.0f64;
        for k in 0..17 {
            for j in 0..17 {
                for i in 0..17 {
                    let p = a.sdf.vertex_position(i, j, k);
                    worst = worst.max((a.sdf.value_at(i, j, k) - s.eval(&p)).abs());
                }
            }
        }
        assert!(worst <= 0.01 && worst > 0.0);
    }

    #[test]
    fn color_lookup() {
        let red = ColorGrid::constant(unit(), [3, 3, 3], Rgb::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(red.eval(&Vec3::new(0.2, 0.9, 0.4)), Rgb::new(1.0, 0.0, 0.0));
        assert_eq!(red.eval(&Vec3::new(1.5, 0.5, 0.5)), Rgb::zeros());

        let a = Rgb::new(0.2, 0.4, 1.0);
        let b = Rgb::new(0.8, 0.0, 0.0);
        let ramp = ColorGrid::from_fn(unit(), [4, 4, 4], |p| a * (1.0 - p.x) + b * p.x).unwrap();
        let mid = ramp.eval(&Vec3::new(0.5, 0.3, 0.7));
        assert!((mid - (a + b) * 0.5).norm() < 1e-15);
    }

    #[test]
    fn rejects_bad_dims_and_mismatches() {
        assert!(matches!(
            SdfGrid::from_fn(unit(), [1, 4, 4], |_| 0.0),
            Err(Error::InvalidDims(_))
        ));
        assert!(SdfGrid::new(unit(), [2, 2, 2], vec![0.0; 7]).is_err());
        assert!(SdfGrid::new(unit(), [2, 2, 2], vec![f64::NAN; 8]).is_err());
        let s = SdfGrid::new(unit(), [2, 2, 2], vec![0.0; 8]).unwrap();
        let c = ColorGrid::constant(unit(), [3, 2, 2], Rgb::zeros()).unwrap();
        assert!(NodeField::new(s, c).is_err());
    }

    fn affine_grid(a: [f64; 3], b: f64, dims: [usize; 3]) -> SdfGrid {
        let d = Aabb::new(Vec3::new(-1.0, -0.5, 0.25), Vec3::new(2.0, 1.5, 1.75)).unwrap();
        let a = Vec3::from(a);
        SdfGrid::from_fn(d, dims, |p| a.dot(p) + b).unwrap()
    }

    proptest! {
        #[test]
        fn trilinear_reproduces_affine(
            a in prop::array::uniform3(-3.0f64..3.0),
            b in -2.0f64..2.0,
            n in prop::array::uniform3(2usize..12),
            u in prop::array::uniform3(0.0f64..=1.0),
        ) {
            let g = affine_grid(a, b, n);
            let d = g.domain();
            let p = d.lo + d.extent().component_mul(&Vec3::from(u));
            let exact = Vec3::from(a).dot(&p) + b;
            let got = g.eval(&p);
            prop_assert!((got - exact).abs() <= 1e-12 * exact.abs().max(1.0), "{} vs {}", got, exact);
        }

        #[test]
        fn vertex_queries_are_exact(
            a in prop::array::uniform3(-3.0f64..3.0),
            n in prop::array::uniform3(2usize..10),
            idx in prop::array::uniform3(0usize..100),
        ) {
            let g = affine_grid(a, 0.3, n);
            let (i, j, k) = (idx[0] % n[0], idx[1] % n[1], idx[2] % n[2]);
            prop_assert_eq!(g.eval(&g.vertex_position(i, j, k)), g.value_at(i, j, k));
        }

        #[test]
        fn lipschitz_bound_holds(
            seed in any::<u64>(),
            pts in prop::array::uniform6(-1.5f64..1.5),
        ) {
            let f = bake(
                &|p: &Vec3| (p.x * 3.0).sin() + p.y * p.z,
                |_| Rgb::zeros(),
                Aabb::cube(1.0).unwrap(),
                [9, 9, 9],
                Some(Noise { amplitude: 0.05, seed }),
            ).unwrap();
            let l = f.sdf.lipschitz_bound();
            let x = Vec3::new(pts[0], pts[1], pts[2]);
            let y = Vec3::new(pts[3], pts[4], pts[5]);
            let d = f.domain();
            // the exterior extension adds at most a unit slope
            let bound = if d.contains(&x) && d.contains(&y) { l } else { l + 1.0 };
            prop_assert!((f.sdf.eval(&x) - f.sdf.eval(&y)).abs() <= bound * (x - y).norm() + 1e-12);
        }
    }
}
