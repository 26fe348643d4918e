//! Synthetic scenes with known answers: an analytic shape cut into
//! overlapping node boxes, each node baked in its own randomly disturbed
//! frame, with cameras whose images are shared between adjacent nodes.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{bake, Aabb, AnalyticSdf, Colorizer, NodeField, Noise, Primitive, Vec3};
use crate::graph::{GraphNode, NodeId, PoseEntry};
use crate::register::transform_pose;
use crate::render::{CameraIntrinsics, CameraPose};
use crate::transform::{axis_angle, SimilarityTransform};

/// Independent generator for one named purpose, derived from a run seed.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a of the name selects the ChaCha stream
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half_extents: [f64; 3] },
    Plane { normal: [f64; 3], offset: f64 },
}

impl ShapeSpec {
    pub fn to_primitive(&self) -> Result<Primitive> {
        match *self {
            ShapeSpec::Sphere { center, radius } => Primitive::sphere(center.into(), radius),
            ShapeSpec::Box { center, half_extents } => Primitive::cuboid(center.into(), half_extents.into()),
            ShapeSpec::Plane { normal, offset } => Primitive::plane(normal.into(), offset),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    /// Cameras looking at each node's own cell; these images belong to that
    /// node alone.
    pub per_node: usize,
    /// Cameras looking at the overlap of each pair of face-adjacent cells;
    /// these images belong to both nodes.
    pub per_overlap: usize,
    /// Orbit radius of node cameras in multiples of the cell diagonal.
    pub radius: f64,
    /// Orbit radius of overlap cameras in multiples of the cell diagonal.
    pub overlap_radius: f64,
    /// Smallest elevation of a camera above its target, in degrees.
    pub min_elevation_deg: f64,
    pub fov_deg: f64,
    pub image_size: usize,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            per_node: 2,
            per_overlap: 4,
            radius: 1.5,
            overlap_radius: 0.5,
            min_elevation_deg: -60.0,
            fov_deg: 50.0,
            image_size: 64,
        }
    }
}

/// Bounds of the random node frames. Node 0 always keeps the scene frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub max_rotation_deg: f64,
    pub max_translation: f64,
    /// Scale drawn log-uniformly from `[1/(1+d), 1+d]`.
    pub max_scale_deviation: f64,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            max_rotation_deg: 20.0,
            max_translation: 0.3,
            max_scale_deviation: 0.2,
        }
    }
}

impl DisturbanceSpec {
    pub fn none() -> Self {
        Self {
            max_rotation_deg: 0.0,
            max_translation: 0.0,
            max_scale_deviation: 0.0,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> SimilarityTransform {
        let axis = random_unit(rng);
        let angle = self.max_rotation_deg.to_radians() * rng.random_range(-1.0..=1.0);
        let translation = random_unit(rng) * (self.max_translation * rng.random::<f64>());
        let log_s = (1.0 + self.max_scale_deviation).ln() * rng.random_range(-1.0..=1.0);
        SimilarityTransform {
            rotation: axis_angle(&axis, angle),
            translation,
            scale: log_s.exp(),
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub shapes: Vec<ShapeSpec>,
    /// Colorizer id, see [`Colorizer::from_id`].
    pub colorizer: String,
    pub bbox_lo: [f64; 3],
    pub bbox_hi: [f64; 3],
    /// Cells per axis.
    pub partition: [usize; 3],
    /// Each cell grows by this fraction of its width on every interior side.
    pub overlap: f64,
    /// Lattice vertices per axis of every node grid.
    pub grid_dims: [usize; 3],
    pub rig: RigSpec,
    pub disturbance: DisturbanceSpec,
    /// Uniform noise amplitude added to baked SDF values.
    pub noise: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Two overlapping spheres split across two nodes along x.
    pub fn sphere_pair() -> Self {
        Self {
            name: "sphere_pair".into(),
            shapes: vec![
                ShapeSpec::Sphere {
                    center: [-0.3, 0.0, 0.0],
                    radius: 0.45,
                },
                ShapeSpec::Sphere {
                    center: [0.3, 0.0, 0.0],
                    radius: 0.45,
                },
            ],
            colorizer: "bands".into(),
            bbox_lo: [-1.0; 3],
            bbox_hi: [1.0; 3],
            partition: [2, 1, 1],
            overlap: 0.2,
            grid_dims: [65; 3],
            rig: RigSpec::default(),
            disturbance: DisturbanceSpec::default(),
            noise: 0.0,
            seed: 0,
        }
    }

    /// Two separate spheres, each entirely inside one node's exclusive part.
    pub fn islands() -> Self {
        Self {
            name: "islands".into(),
            shapes: vec![
                ShapeSpec::Sphere {
                    center: [-0.55, 0.0, 0.0],
                    radius: 0.3,
                },
                ShapeSpec::Sphere {
                    center: [0.55, 0.0, 0.0],
                    radius: 0.3,
                },
            ],
            ..Self::sphere_pair()
        }
    }

    /// An `n × n` block of ground with one building or dome per cell.
    pub fn campus(n: usize) -> Self {
        let half = 0.5 * n as f64;
        let mut shapes = vec![ShapeSpec::Plane {
            normal: [0.0, 0.0, 1.0],
            offset: 0.0,
        }];
        for j in 0..n {
            for i in 0..n {
                let c = [i as f64 + 0.5 - half, j as f64 + 0.5 - half];
                shapes.push(if (i + j) % 2 == 0 {
                    ShapeSpec::Box {
                        center: [c[0], c[1], 0.25],
                        half_extents: [0.18, 0.22, 0.25],
                    }
                } else {
                    ShapeSpec::Sphere {
                        center: [c[0], c[1], 0.05],
                        radius: 0.25,
                    }
                });
            }
        }
        Self {
            name: format!("campus_{n}x{n}"),
            shapes,
            colorizer: "bands".into(),
            bbox_lo: [-half, -half, -0.5],
            bbox_hi: [half, half, 0.75],
            partition: [n, n, 1],
            overlap: 0.2,
            grid_dims: [33; 3],
            rig: RigSpec {
                per_node: 1,
                per_overlap: 3,
                radius: 1.4,
                overlap_radius: 0.8,
                min_elevation_deg: 35.0,
                ..RigSpec::default()
            },
            disturbance: DisturbanceSpec::default(),
            noise: 0.0,
            seed: 0,
        }
    }

    pub fn bbox(&self) -> Result<Aabb> {
        Aabb::new(self.bbox_lo.into(), self.bbox_hi.into())
    }

    pub fn sdf(&self) -> Result<AnalyticSdf> {
        AnalyticSdf::new(self.shapes.iter().map(ShapeSpec::to_primitive).collect::<Result<_>>()?)
    }

    pub fn colorizer(&self) -> Result<Colorizer> {
        Colorizer::from_id(&self.colorizer)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.overlap > 0.0 && self.overlap < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "overlap fraction {} outside (0, 0.5)",
                self.overlap
            )));
        }
        if self.partition.contains(&0) {
            return Err(Error::InvalidArgument("partition counts must be >= 1".into()));
        }
        if self.grid_dims.iter().any(|d| *d < 2) {
            return Err(Error::InvalidDims(self.grid_dims));
        }
        let d = &self.disturbance;
        if d.max_rotation_deg < 0.0 || d.max_translation < 0.0 || d.max_scale_deviation < 0.0 {
            return Err(Error::InvalidArgument("disturbance bounds must be >= 0".into()));
        }
        if self.rig.image_size == 0 || self.rig.radius <= 0.0 || self.rig.overlap_radius <= 0.0 {
            return Err(Error::InvalidArgument("camera rig needs a positive size and radius".into()));
        }
        self.bbox()?;
        self.sdf()?;
        self.colorizer()?;
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.partition.iter().product()
    }

    /// Cell index of node `k`, x fastest.
    pub fn cell_of(&self, k: usize) -> [usize; 3] {
        let [px, py, _] = self.partition;
        [k % px, (k / px) % py, k / (px * py)]
    }

    fn cell_width(&self) -> Vec3 {
        let b = Vec3::from(self.bbox_hi) - Vec3::from(self.bbox_lo);
        Vec3::new(
            b.x / self.partition[0] as f64,
            b.y / self.partition[1] as f64,
            b.z / self.partition[2] as f64,
        )
    }

    /// The exact tile of node `k`.
    pub fn cell_box(&self, k: usize) -> Result<Aabb> {
        let c = self.cell_of(k);
        let w = self.cell_width();
        let lo = Vec3::from(self.bbox_lo);
        let a = Vec3::new(c[0] as f64 * w.x, c[1] as f64 * w.y, c[2] as f64 * w.z) + lo;
        Aabb::new(a, a + w)
    }

    /// Node `k`'s region in the scene frame: its tile grown by `overlap`
    /// cell widths on every side, clipped to the scene box.
    pub fn node_box(&self, k: usize) -> Result<Aabb> {
        let cell = self.cell_box(k)?;
        let grow = self.cell_width() * self.overlap;
        let bbox = self.bbox()?;
        Aabb::new(
            (cell.lo - grow).sup(&bbox.lo),
            (cell.hi + grow).inf(&bbox.hi),
        )
    }

    /// Pairs of face-adjacent cells, sorted.
    pub fn adjacent_pairs(&self) -> Vec<(usize, usize)> {
        let [px, py, pz] = self.partition;
        let mut out = Vec::new();
        for k in 0..self.node_count() {
            let c = self.cell_of(k);
            if c[0] + 1 < px {
                out.push((k, k + 1));
            }
            if c[1] + 1 < py {
                out.push((k, k + px));
            }
            if c[2] + 1 < pz {
                out.push((k, k + px * py));
            }
        }
        out.sort_unstable();
        out
    }
}

/// Camera orbit directions: a golden-angle spiral over the allowed
/// elevations, rotated per target by `phase`.
fn orbit_directions(count: usize, min_elevation_deg: f64, phase: f64) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let z_lo = min_elevation_deg.to_radians().sin();
    let z_hi = 80f64.to_radians().sin();
    (0..count)
        .map(|m| {
            let t = (m as f64 + 0.5) / count as f64;
            let z = z_hi + (z_lo - z_hi) * t;
            let r = (1.0 - z * z).sqrt();
            let phi = phase + golden * m as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

fn camera_at(target: Vec3, dir: Vec3, distance: f64) -> Result<CameraPose> {
    let up = if dir.z.abs() > 0.99 { Vec3::y() } else { Vec3::z() };
    CameraPose::look_at(target + dir * distance, target, up)
}

/// A named camera in the scene frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneCamera {
    pub image_id: String,
    pub pose: CameraPose,
    pub intrinsics: CameraIntrinsics,
    /// Nodes whose image sets contain this camera.
    pub nodes: Vec<usize>,
}

/// Everything a generated scene produces, in memory.
#[derive(Clone, Debug)]
pub struct GeneratedScene {
    pub spec: SceneSpec,
    /// Node-local to scene frame, per node.
    pub ground_truth: Vec<SimilarityTransform>,
    pub cameras: Vec<SceneCamera>,
    pub nodes: Vec<GraphNode>,
}

pub fn cameras(spec: &SceneSpec) -> Result<Vec<SceneCamera>> {
    let intr = CameraIntrinsics::from_fov(spec.rig.image_size, spec.rig.fov_deg)?;
    let diag = spec.cell_width().norm();
    let reach = spec.rig.radius * diag;
    let mut out = Vec::new();
    for k in 0..spec.node_count() {
        let target = spec.cell_box(k)?.center();
        for (m, dir) in orbit_directions(spec.rig.per_node, spec.rig.min_elevation_deg, k as f64)
            .into_iter()
            .enumerate()
        {
            out.push(SceneCamera {
                image_id: format!("n{k}_c{m}"),
                pose: camera_at(target, dir, reach)?,
                intrinsics: intr,
                nodes: vec![k],
            });
        }
    }
    for (a, b) in spec.adjacent_pairs() {
        let overlap = spec
            .node_box(a)?
            .intersection(&spec.node_box(b)?)
            .ok_or_else(|| Error::InvalidArgument(format!("cells {a} and {b} do not overlap")))?;
        let target = overlap.center();
        let phase = 0.5 + (a * 7 + b) as f64;
        for (m, dir) in orbit_directions(spec.rig.per_overlap, spec.rig.min_elevation_deg, phase)
            .into_iter()
            .enumerate()
        {
            out.push(SceneCamera {
                image_id: format!("e{a}_{b}_c{m}"),
                pose: camera_at(target, dir, spec.rig.overlap_radius * diag)?,
                intrinsics: intr,
                nodes: vec![a, b],
            });
        }
    }
    Ok(out)
}

/// Bakes every node in its disturbed frame and expresses the cameras there.
pub fn generate(spec: &SceneSpec) -> Result<GeneratedScene> {
    spec.validate()?;
    let sdf = spec.sdf()?;
    let colors = spec.colorizer()?;
    let mut rng = substream(spec.seed, "disturbance");
    let ground_truth: Vec<SimilarityTransform> = (0..spec.node_count())
        .map(|k| {
            let g = spec.disturbance.draw(&mut rng);
            if k == 0 {
                SimilarityTransform::identity()
            } else {
                g
            }
        })
        .collect();
    let cams = cameras(spec)?;
    let mut nodes = Vec::with_capacity(spec.node_count());
    for (k, g) in ground_truth.iter().enumerate() {
        let inv = g.inverse()?;
        let cell = spec.node_box(k)?;
        let domain = Aabb::bounding(cell.corners().map(|c| inv.apply(&c))).expect("eight corners");
        let s = g.scale;
        let local_sdf = |x: &Vec3| s * sdf.eval(&g.apply(x));
        let noise = (spec.noise > 0.0).then(|| Noise {
            amplitude: spec.noise,
            seed: substream(spec.seed, &format!("noise/{k}")).random(),
        });
        let field = bake(&local_sdf, |x: &Vec3| colors.eval(&g.apply(x)), domain, spec.grid_dims, noise)?;
        if field.sdf.values().iter().all(|v| *v > 0.0) {
            warn!("node {k} holds no surface");
        }
        let mut image_ids = BTreeSet::new();
        let mut poses = Vec::new();
        for cam in cams.iter().filter(|c| c.nodes.contains(&k)) {
            image_ids.insert(cam.image_id.clone());
            poses.push(PoseEntry {
                image_id: cam.image_id.clone(),
                pose: transform_pose(&cam.pose, g).0,
                intrinsics: cam.intrinsics,
            });
        }
        nodes.push(GraphNode::new(NodeId(k), Arc::new(field), image_ids, poses)?);
    }
    Ok(GeneratedScene {
        spec: spec.clone(),
        ground_truth,
        cameras: cams,
        nodes,
    })
}

/// Writes `manifest.json`, `scene.json`, `ground_truth.txt`, and per-node
/// grid and pose files under `dir`.
pub fn write_scene(scene: &GeneratedScene, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    crate::manifest::write_manifest(
        dir,
        &scene.nodes,
        crate::manifest::ManifestExtras {
            scene: Some(&scene.spec),
            ..Default::default()
        },
    )?;
    crate::manifest::write_ground_truth(dir.join("ground_truth.txt"), &scene.ground_truth)
}

/// Points on the analytic surface inside `region`: marching cubes at
/// `resolution`, area-weighted samples, then a few Newton steps onto the
/// exact zero set.
pub fn analytic_surface_samples(
    sdf: &AnalyticSdf,
    region: &Aabb,
    resolution: [usize; 3],
    n: usize,
    seed: u64,
) -> Result<Vec<Vec3>> {
    let mesh = crate::mesh::marching_cubes(sdf, region, resolution, 0.0)?;
    let mut pts = crate::mesh::sample_surface(&mesh, n, seed)?;
    let h = 1e-6;
    for p in &mut pts {
        for _ in 0..4 {
            let f = sdf.eval(p);
            let g = Vec3::new(
                sdf.eval(&(*p + Vec3::x() * h)) - sdf.eval(&(*p - Vec3::x() * h)),
                sdf.eval(&(*p + Vec3::y() * h)) - sdf.eval(&(*p - Vec3::y() * h)),
                sdf.eval(&(*p + Vec3::z() * h)) - sdf.eval(&(*p - Vec3::z() * h)),
            ) / (2.0 * h);
            let g2 = g.norm_squared();
            if g2 < 1e-12 {
                break;
            }
            *p -= g * (f / g2);
        }
    }
    Ok(pts)
}

/// Same scene baked as one node over the whole box, in the scene frame.
pub fn bake_undivided(spec: &SceneSpec, dims: [usize; 3]) -> Result<NodeField> {
    let sdf = spec.sdf()?;
    let colors = spec.colorizer()?;
    bake(&sdf, |p: &Vec3| colors.eval(p), spec.bbox()?, dims, None)
}
