use rayon::prelude::*;

use super::camera::{ray_for_pixel, CameraIntrinsics, CameraPose, Ray};
use crate::error::{Error, Result};
use crate::fields::{NodeField, Rgb};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    /// Samples per ray, at least 2.
    pub n_samples: usize,
    /// Explicit `[t_near, t_far]`; `None` clips each ray to the field's box.
    pub bounds: Option<(f64, f64)>,
    /// Logistic slope `s` of the SDF-to-opacity conversion, in the field's
    /// local units.
    pub slope_s: f64,
    pub background: Rgb,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            n_samples: 128,
            bounds: None,
            slope_s: 40.0,
            background: Rgb::zeros(),
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::InvalidArgument("n_samples must be >= 2".into()));
        }
        if !(self.slope_s > 0.0) {
            return Err(Error::InvalidArgument("slope_s must be positive".into()));
        }
        if let Some((n, f)) = self.bounds {
            if !(n >= 0.0 && n < f) {
                return Err(Error::InvalidArgument(format!("invalid ray bounds [{n}, {f}]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderResult {
    pub color: Rgb,
    pub opacity: f64,
    /// Expected termination distance along the ray.
    pub depth: f64,
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic CDF `Φ_s(x) = 1 / (1 + e^{-s x})`.
pub fn logistic_cdf(x: f64, s: f64) -> f64 {
    1.0 / (1.0 + (-s * x).exp())
}

/// Discrete opacity of the segment between consecutive SDF samples:
/// `max((Φ_s(f_a) - Φ_s(f_b)) / Φ_s(f_a), 0)`.
pub fn neus_alpha(f_a: f64, f_b: f64, slope_s: f64) -> f64 {
    // Φ(b)/Φ(a) = (1 + e^{-s a}) / (1 + e^{-s b}), evaluated in log space
    let log_ratio = softplus(-slope_s * f_a) - softplus(-slope_s * f_b);
    (1.0 - log_ratio.exp()).clamp(0.0, 1.0)
}

/// Per-segment quadrature terms, exposed for diagnostics and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub sdf: Vec<f64>,
    pub weights: Vec<f64>,
}

fn ray_bounds(field: &NodeField, ray: &Ray, cfg: &RenderConfig) -> Option<(f64, f64)> {
    match cfg.bounds {
        Some(b) => Some(b),
        None => field.domain().ray_interval(&ray.origin, &ray.dir),
    }
}

/// Sample positions, SDF values and weights `w_k = α_k Π_{m<k} (1 - α_m)`.
pub fn ray_samples(field: &NodeField, ray: &Ray, cfg: &RenderConfig) -> RaySamples {
    let Some((t0, t1)) = ray_bounds(field, ray, cfg) else {
        return RaySamples {
            t: vec![],
            sdf: vec![],
            weights: vec![],
        };
    };
    let n = cfg.n_samples;
    let step = (t1 - t0) / (n - 1) as f64;
    let t: Vec<f64> = (0..n).map(|k| t0 + step * k as f64).collect();
    let sdf: Vec<f64> = t.iter().map(|&tk| field.sdf.eval(&ray.at(tk))).collect();
    let mut weights = Vec::with_capacity(n - 1);
    let mut trans = 1.0;
    for k in 0..n - 1 {
        let a = neus_alpha(sdf[k], sdf[k + 1], cfg.slope_s);
        weights.push(trans * a);
        trans *= 1.0 - a;
    }
    RaySamples { t, sdf, weights }
}

/// Volume-renders one ray: uniform samples, discrete NeuS opacity per
/// segment, albedo looked up at segment midpoints, background composited
/// behind.
pub fn render_ray(field: &NodeField, ray: &Ray, cfg: &RenderConfig) -> RenderResult {
    let Some((t0, t1)) = ray_bounds(field, ray, cfg) else {
        return RenderResult {
            color: cfg.background,
            opacity: 0.0,
            depth: 0.0,
        };
    };
    let n = cfg.n_samples;
    let step = (t1 - t0) / (n - 1) as f64;
    let mut trans = 1.0;
    let mut color = Rgb::zeros();
    let mut opacity = 0.0;
    let mut depth = 0.0;
    let mut f_prev = field.sdf.eval(&ray.at(t0));
    for k in 0..n - 1 {
        let ta = t0 + step * k as f64;
        let tb = t0 + step * (k + 1) as f64;
        let f_next = field.sdf.eval(&ray.at(tb));
        let a = neus_alpha(f_prev, f_next, cfg.slope_s);
        if a > 0.0 {
            let w = trans * a;
            let mid = 0.5 * (ta + tb);
            color += field.color.eval(&ray.at(mid)) * w;
            opacity += w;
            depth += w * mid;
            trans *= 1.0 - a;
        }
        f_prev = f_next;
    }
    color += cfg.background * (1.0 - opacity).max(0.0);
    RenderResult {
        color,
        opacity: opacity.min(1.0),
        depth: depth / opacity.max(1e-10),
    }
}

/// A rendered view: colors, opacity and depth, row-major from the top-left.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub color: Vec<Rgb>,
    pub opacity: Vec<f64>,
    pub depth: Vec<f64>,
}

impl RenderedImage {
    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.color[y * self.width + x]
    }
}

/// Renders every pixel; parallel over pixels, identical to the serial result.
pub fn render_image(
    field: &NodeField,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Result<RenderedImage> {
    cfg.validate()?;
    intr.validate()?;
    pose.validate()?;
    let w = intr.width;
    let results: Vec<RenderResult> = (0..intr.pixel_count())
        .into_par_iter()
        .map(|i| {
            let ray = ray_for_pixel(pose, intr, (i % w) as f64, (i / w) as f64);
            render_ray(field, &ray, cfg)
        })
        .collect();
    Ok(RenderedImage {
        width: w,
        height: intr.height,
        color: results.iter().map(|r| r.color).collect(),
        opacity: results.iter().map(|r| r.opacity).collect(),
        depth: results.iter().map(|r| r.depth).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{bake, Aabb, ColorGrid, SdfGrid, Vec3};
    use proptest::prelude::*;

    #[test]
    fn alpha_matches_direct_logistic_evaluation() {
        // oracle: the textbook expression, evaluated directly
        let direct = |a: f64, b: f64, s: f64| {
            let pa = 1.0 / (1.0 + (-s * a).exp());
            let pb = 1.0 / (1.0 + (-s * b).exp());
            ((pa - pb) / pa).max(0.0)
        };
        let got = neus_alpha(0.1, -0.1, 10.0);
        assert!((got - direct(0.1, -0.1, 10.0)).abs() < 1e-15);
        // Φ(-x)/Φ(x) = e^{-x}, so this is 1 - 1/e
        assert!((got - 0.632_120_558_828_557_7).abs() < 1e-15);
        assert!((got - 0.632121).abs() < 1e-6);
        assert_eq!(neus_alpha(0.3, 0.3, 10.0), 0.0);
        assert_eq!(neus_alpha(-0.1, 0.1, 10.0), 0.0);
        // deep inside, where Φ underflows in the naive form
        let deep = neus_alpha(-50.0, -50.1, 40.0);
        assert!((deep - (1.0 - (-4.0f64).exp())).abs() < 1e-12);
    }

    fn plane_field(t0: f64) -> NodeField {
        let d = Aabb::new(Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 4.0)).unwrap();
        NodeField::new(
            SdfGrid::from_fn(d, [3, 3, 9], |p| t0 - p.z).unwrap(),
            ColorGrid::constant(d, [3, 3, 9], Rgb::new(1.0, 0.0, 0.0)).unwrap(),
        )
        .unwrap()
    }

    fn axis_ray() -> Ray {
        Ray::new(Vec3::zeros(), Vec3::z())
    }

    #[test]
    fn empty_space_shows_background() {
        let d = Aabb::cube(1.0).unwrap();
        let f = bake(&|_: &Vec3| 5.0, |_| Rgb::repeat(1.0), d, [4, 4, 4], None).unwrap();
        let cfg = RenderConfig {
            background: Rgb::new(0.1, 0.2, 0.3),
            ..Default::default()
        };
        let r = render_ray(&f, &Ray::new(Vec3::new(0.0, 0.0, -3.0), Vec3::z()), &cfg);
        assert!(r.opacity < 1e-12);
        assert!((r.color - cfg.background).norm() < 1e-12);
        // a ray that misses the box entirely
        let miss = render_ray(&f, &Ray::new(Vec3::new(5.0, 5.0, -3.0), Vec3::z()), &cfg);
        assert_eq!(miss.opacity, 0.0);
        assert_eq!(miss.color, cfg.background);
    }

    #[test]
    fn plane_depth_is_unbiased() {
        let f = plane_field(2.137);
        for n in [64, 128, 256] {
            let cfg = RenderConfig {
                n_samples: n,
                ..Default::default()
            };
            let r = render_ray(&f, &axis_ray(), &cfg);
            assert!((r.depth - 2.137).abs() <= 4.0 / n as f64, "n={n} depth={}", r.depth);
        }
    }

    #[test]
    fn solid_red_interval_is_opaque() {
        let d = Aabb::new(Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 4.0)).unwrap();
        // surface right at the start of the interval, solid behind it
        let f = NodeField::new(
            SdfGrid::from_fn(d, [3, 3, 9], |p| 0.05 - p.z).unwrap(),
            ColorGrid::constant(d, [3, 3, 9], Rgb::new(1.0, 0.0, 0.0)).unwrap(),
        )
        .unwrap();
        let cfg = RenderConfig::default();
        let s = ray_samples(&f, &axis_ray(), &cfg);
        // oracle: plain running-product quadrature over the same samples
        let mut trans = 1.0;
        let mut total = 0.0;
        for k in 0..s.sdf.len() - 1 {
            let pa = logistic_cdf(s.sdf[k], cfg.slope_s);
            let pb = logistic_cdf(s.sdf[k + 1], cfg.slope_s);
            let a = ((pa - pb) / pa).max(0.0);
            total += trans * a;
            trans *= 1.0 - a;
        }
        let r = render_ray(&f, &axis_ray(), &cfg);
        assert!((r.opacity - total).abs() < 1e-12);
        assert!(r.opacity >= 0.99);
        assert!((r.color - Rgb::new(1.0, 0.0, 0.0)).norm() < 0.01 + 1e-12);
    }

    #[test]
    fn sphere_silhouette_matches_projection() {
        let radius = 0.5;
        let d = Aabb::cube(1.0).unwrap();
        let f = bake(&|p: &Vec3| p.norm() - radius, |_| Rgb::repeat(1.0), d, [65, 65, 65], None)
            .unwrap();
        let dist = 3.0;
        let pose = CameraPose::look_at(Vec3::new(0.0, 0.0, -dist), Vec3::zeros(), Vec3::y()).unwrap();
        let intr = CameraIntrinsics::from_fov(48, 30.0).unwrap();
        let img = render_image(&f, &pose, &intr, &RenderConfig::default()).unwrap();
        // projected silhouette radius of a sphere: f r / sqrt(D² - r²)
        let px_radius = intr.fx * radius / (dist * dist - radius * radius).sqrt();
        for y in 0..intr.height {
            for x in 0..intr.width {
                let dx = x as f64 + 0.5 - intr.cx;
                let dy = y as f64 + 0.5 - intr.cy;
                let rho = (dx * dx + dy * dy).sqrt();
                let o = img.opacity[y * intr.width + x];
                if rho < px_radius - 1.0 {
                    assert!(o > 0.5, "({x},{y}) inside but opacity {o}");
                } else if rho > px_radius + 1.0 {
                    assert!(o < 0.5, "({x},{y}) outside but opacity {o}");
                }
            }
        }
    }

    #[test]
    fn empty_image_and_determinism() {
        let d = Aabb::cube(1.0).unwrap();
        let f = bake(&|_: &Vec3| 3.0, |_| Rgb::repeat(1.0), d, [3, 3, 3], None).unwrap();
        let intr = CameraIntrinsics::from_fov(2, 40.0).unwrap();
        let pose = CameraPose::look_at(Vec3::new(0.0, 0.0, 4.0), Vec3::zeros(), Vec3::y()).unwrap();
        let cfg = RenderConfig::default();
        let a = render_image(&f, &pose, &intr, &cfg).unwrap();
        assert_eq!(a.color, vec![Rgb::zeros(); 4]);
        assert!(a.opacity.iter().all(|o| *o < 1e-12));
        let b = render_image(&f, &pose, &intr, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let bad = RenderConfig {
            n_samples: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = RenderConfig {
            bounds: Some((2.0, 1.0)),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn sphere_field() -> NodeField {
        let d = Aabb::cube(1.0).unwrap();
        bake(&|p: &Vec3| p.norm() - 0.6, |_| Rgb::repeat(0.5), d, [33, 33, 33], None).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn weights_are_a_sub_partition(
            o in prop::array::uniform3(-3.0f64..3.0),
            target in prop::array::uniform3(-0.5f64..0.5),
            s in 1.0f64..200.0,
        ) {
            let f = sphere_field();
            let o = Vec3::from(o);
            prop_assume!((Vec3::from(target) - o).norm() > 1e-3);
            let ray = Ray::new(o, Vec3::from(target) - o);
            let cfg = RenderConfig { slope_s: s, ..Default::default() };
            let smp = ray_samples(&f, &ray, &cfg);
            prop_assert!(smp.weights.iter().all(|w| *w >= 0.0));
            prop_assert!(smp.weights.iter().sum::<f64>() <= 1.0 + 1e-9);
        }

        #[test]
        fn opacity_grows_with_slope(
            dir in prop::array::uniform3(-1.0f64..1.0),
            offset in prop::array::uniform2(-0.3f64..0.3),
            s in 2.0f64..100.0,
            ds in 0.0f64..100.0,
        ) {
            let f = sphere_field();
            let d = Vec3::from(dir);
            prop_assume!(d.norm() > 0.1);
            let d = d.normalize();
            // ray passing within 0.43 of the center: always crosses the surface
            let side = d.cross(&Vec3::new(0.3, 0.5, 0.7)).normalize();
            let up = d.cross(&side);
            let o = side * offset[0] + up * offset[1] - d * 2.5;
            let ray = Ray::new(o, d);
            let lo = render_ray(&f, &ray, &RenderConfig { slope_s: s, ..Default::default() });
            let hi = render_ray(&f, &ray, &RenderConfig { slope_s: s + ds, ..Default::default() });
            prop_assert!(hi.opacity >= lo.opacity - 1e-12, "{} -> {}", lo.opacity, hi.opacity);
        }
    }
}
