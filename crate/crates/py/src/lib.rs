//! Python bindings, importable as `sdfgraph`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sdfgraph::blend::{self, BlendConfig, BlendMode, GlobalField};
use sdfgraph::fields::{read_grid, SignedDistance, Vec3};
use sdfgraph::mesh as core_mesh;
use sdfgraph::pipeline::{self, Perturbation, PipelineConfig};
use sdfgraph::register::{self, EarlyStop, RefineConfig};
use sdfgraph::render::{self, RenderConfig};
use sdfgraph::scene::{self, DisturbanceSpec, SceneSpec};
use sdfgraph::transform::{self, Mat3};
use sdfgraph::{manifest, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn v3(p: [f64; 3]) -> Vec3 {
    Vec3::new(p[0], p[1], p[2])
}

fn a3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn m3(rows: [[f64; 3]; 3]) -> Mat3 {
    Mat3::from_fn(|r, c| rows[r][c])
}

fn rows(m: &Mat3) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|r| [0, 1, 2].map(|c| m[(r, c)]))
}

fn blend_config(beta: f64, mode: &str) -> PyResult<BlendConfig> {
    let mode = match mode {
        "softmax" => BlendMode::Softmax,
        "min" | "min_union" => BlendMode::MinUnion,
        other => return Err(PyValueError::new_err(format!("unknown blend mode {other:?}"))),
    };
    let cfg = BlendConfig { beta, mode };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// `x -> s R x + T`.
#[pyclass(name = "SimilarityTransform", module = "sdfgraph", frozen, from_py_object)]
#[derive(Clone)]
struct PySimilarity(transform::SimilarityTransform);

#[pymethods]
impl PySimilarity {
    #[new]
    #[pyo3(signature = (rotation, translation, scale=1.0))]
    fn new(rotation: [[f64; 3]; 3], translation: [f64; 3], scale: f64) -> PyResult<Self> {
        transform::SimilarityTransform::new(m3(rotation), v3(translation), scale)
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(transform::SimilarityTransform::identity())
    }

    /// Rotation from yaw, pitch, roll in degrees.
    #[staticmethod]
    #[pyo3(signature = (yaw=0.0, pitch=0.0, roll=0.0, translation=[0.0; 3], scale=1.0))]
    fn from_euler(yaw: f64, pitch: f64, roll: f64, translation: [f64; 3], scale: f64) -> PyResult<Self> {
        let r = transform::EulerZyx {
            yaw: yaw.to_radians(),
            pitch: pitch.to_radians(),
            roll: roll.to_radians(),
        }
        .to_matrix();
        Self::new(rows(&r), translation, scale)
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        rows(&self.0.rotation)
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        a3(&self.0.translation)
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.0.scale
    }

    fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        a3(&self.0.apply(&v3(p)))
    }

    fn inverse(&self) -> PyResult<Self> {
        self.0.inverse().map(Self).map_err(py_err)
    }

    /// `self ∘ other`.
    fn compose(&self, other: &Self) -> Self {
        Self(self.0.compose(&other.0))
    }

    fn matrix(&self) -> [[f64; 4]; 4] {
        let h = self.0.to_homogeneous();
        [0, 1, 2, 3].map(|r| [0, 1, 2, 3].map(|c| h[(r, c)]))
    }

    fn max_entry_diff(&self, other: &Self) -> f64 {
        self.0.max_entry_diff(&other.0)
    }

    /// Angle in degrees between the two rotations.
    fn rotation_angle_to(&self, other: &Self) -> f64 {
        self.0.rotation_angle_to(&other.0).to_degrees()
    }

    fn __repr__(&self) -> String {
        format!(
            "SimilarityTransform(rotation={:?}, translation={:?}, scale={})",
            self.rotation(),
            self.translation(),
            self.0.scale
        )
    }
}

/// World-to-camera pose `x_cam = R x + T`.
#[pyclass(name = "CameraPose", module = "sdfgraph", frozen, from_py_object)]
#[derive(Clone)]
struct PyCameraPose(render::CameraPose);

#[pymethods]
impl PyCameraPose {
    #[new]
    fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> PyResult<Self> {
        render::CameraPose::new(m3(rotation), v3(translation)).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> PyResult<Self> {
        render::CameraPose::look_at(v3(eye), v3(target), v3(up)).map(Self).map_err(py_err)
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        rows(&self.0.rotation)
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        a3(&self.0.translation)
    }

    fn center(&self) -> [f64; 3] {
        a3(&self.0.center())
    }
}

/// Expresses `pose` in a frame related by `t`; returns the pose and the
/// depth scale.
#[pyfunction]
fn transform_pose(pose: &PyCameraPose, t: &PySimilarity) -> (PyCameraPose, f64) {
    let (p, s) = register::transform_pose(&pose.0, &t.0);
    (PyCameraPose(p), s)
}

/// Closed-form transform from `(pose_in_i, pose_in_j)` pairs of shared
/// images.
#[pyfunction]
fn init_registration(pairs: Vec<(PyCameraPose, PyCameraPose)>) -> PyResult<PySimilarity> {
    let pairs: Vec<_> = pairs.into_iter().map(|(a, b)| (a.0, b.0)).collect();
    register::init_registration(&pairs).map(PySimilarity).map_err(py_err)
}

/// One node's SDF and color grids.
#[pyclass(name = "NodeField", module = "sdfgraph", frozen)]
struct PyNodeField(sdfgraph::fields::NodeField);

#[pymethods]
impl PyNodeField {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        read_grid(path).map(Self).map_err(py_err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.0.dims()
    }

    /// `(lo, hi)` corners.
    #[getter]
    fn domain(&self) -> ([f64; 3], [f64; 3]) {
        let d = self.0.domain();
        (a3(&d.lo), a3(&d.hi))
    }

    #[getter]
    fn voxel_size(&self) -> f64 {
        self.0.voxel_size()
    }

    fn sdf(&self, p: [f64; 3]) -> f64 {
        self.0.distance(&v3(p))
    }
}

/// A loaded manifest: nodes, their frames and stored edge transforms.
#[pyclass(name = "Manifest", module = "sdfgraph", frozen)]
struct PyManifest(manifest::LoadedManifest);

#[pymethods]
impl PyManifest {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        manifest::load(path).map(Self).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.0.graph.len()
    }

    /// True when node frames are stored.
    #[getter]
    fn registered(&self) -> bool {
        self.0.registered
    }

    /// Node pairs with at least one shared image, and their weights.
    fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.0.graph.edges().iter().map(|e| (e.a.0, e.b.0, e.weight)).collect()
    }

    fn to_global(&self) -> Vec<PySimilarity> {
        self.0.graph.nodes().iter().map(|n| PySimilarity(n.to_global)).collect()
    }

    fn edge_transforms(&self) -> Vec<((usize, usize), PySimilarity)> {
        self.0
            .edge_transforms
            .iter()
            .map(|((a, b), t)| ((a.0, b.0), PySimilarity(*t)))
            .collect()
    }

    #[pyo3(signature = (beta=10.0, mode="softmax"))]
    fn blend(&self, beta: f64, mode: &str) -> PyResult<PyBlendedField> {
        GlobalField::from_graph(&self.0.graph, blend_config(beta, mode)?)
            .map(PyBlendedField)
            .map_err(py_err)
    }
}

/// The nodes blended into one global field.
#[pyclass(name = "BlendedField", module = "sdfgraph", frozen)]
struct PyBlendedField(GlobalField);

#[pymethods]
impl PyBlendedField {
    fn sdf(&self, p: [f64; 3]) -> f64 {
        self.0.eval(&v3(p))
    }

    fn sdf_many(&self, points: Vec<[f64; 3]>) -> Vec<f64> {
        points.into_iter().map(|p| self.0.eval(&v3(p))).collect()
    }

    fn color(&self, p: [f64; 3]) -> Option<[f64; 3]> {
        self.0.color(&v3(p)).map(|c| a3(&c))
    }

    /// `(node, weight)` for every node covering `p`.
    fn weights(&self, p: [f64; 3]) -> Vec<(usize, f64)> {
        self.0.weights(&v3(p)).into_iter().map(|(n, w)| (n.0, w)).collect()
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let b = self.0.bounds();
        (a3(&b.lo), a3(&b.hi))
    }

    /// Marching cubes over `bounds` with `resolution` vertices per axis;
    /// returns `(vertices, triangles)`.
    #[pyo3(signature = (resolution=[64; 3], lo=None, hi=None))]
    fn mesh(
        &self,
        resolution: [usize; 3],
        lo: Option<[f64; 3]>,
        hi: Option<[f64; 3]>,
    ) -> PyResult<(Vec<[f64; 3]>, Vec<[u32; 3]>)> {
        let b = self.0.bounds();
        let region = sdfgraph::fields::Aabb::new(
            lo.map(v3).unwrap_or(b.lo),
            hi.map(v3).unwrap_or(b.hi),
        )
        .map_err(py_err)?;
        let m = pipeline::extract_mesh(&self.0, &region, resolution).map_err(py_err)?;
        Ok((m.vertices.iter().map(a3).collect(), m.triangles))
    }

    /// Largest jump between consecutive samples on the segment `a`..`b`.
    #[pyo3(signature = (a, b, n=2001))]
    fn seam_jump(&self, a: [f64; 3], b: [f64; 3], n: usize) -> PyResult<f64> {
        blend::seam_profile(|y| self.0.eval(y), &v3(a), &v3(b), n)
            .map(|p| p.max_jump)
            .map_err(py_err)
    }
}

/// Writes a synthetic scene and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out, preset="sphere-pair", grid=None, seed=0, disturbance=true, campus_n=5))]
fn generate_scene(
    out: PathBuf,
    preset: &str,
    grid: Option<usize>,
    seed: u64,
    disturbance: bool,
    campus_n: usize,
) -> PyResult<PathBuf> {
    let mut spec = match preset {
        "sphere-pair" => SceneSpec::sphere_pair(),
        "islands" => SceneSpec::islands(),
        "campus" => SceneSpec::campus(campus_n),
        other => return Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
    };
    if let Some(g) = grid {
        spec.grid_dims = [g; 3];
    }
    spec.seed = seed;
    if !disturbance {
        spec.disturbance = DisturbanceSpec::none();
    }
    let generated = scene::generate(&spec).map_err(py_err)?;
    scene::write_scene(&generated, &out).map_err(py_err)?;
    Ok(out.join("manifest.json"))
}

/// Runs registration, propagation, blending and meshing; returns a summary
/// dict.
#[pyfunction]
#[pyo3(signature = (
    manifest_path, out, seed=0, root=0, iterations=1000, lr0=4e-3, decay_every=50.0, rays=2048,
    samples=64, mesh_resolution=[128; 3], beta=10.0, perturb=false, patience=Some(100)
))]
#[allow(clippy::too_many_arguments)]
fn run_pipeline<'py>(
    py: Python<'py>,
    manifest_path: PathBuf,
    out: PathBuf,
    seed: u64,
    root: usize,
    iterations: usize,
    lr0: f64,
    decay_every: f64,
    rays: usize,
    samples: usize,
    mesh_resolution: [usize; 3],
    beta: f64,
    perturb: bool,
    patience: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let loaded = manifest::load(&manifest_path).map_err(py_err)?;
    let mut cfg = PipelineConfig::new(out);
    cfg.seed = seed;
    cfg.root = sdfgraph::graph::NodeId(root);
    cfg.refine = RefineConfig {
        lr0,
        decay_every,
        iterations,
        rays_per_iter: rays,
        early_stop: patience.map(|patience| EarlyStop {
            patience,
            min_rel_improvement: 1e-3,
        }),
        ..RefineConfig::default()
    };
    cfg.render = RenderConfig {
        n_samples: samples,
        ..RenderConfig::default()
    };
    cfg.blend = blend_config(beta, "softmax")?;
    cfg.mesh_resolution = mesh_resolution;
    cfg.perturbation = perturb.then(Perturbation::standard);
    let report = py.detach(|| pipeline::run_pipeline(&loaded, &cfg)).map_err(py_err)?;

    let d = PyDict::new(py);
    d.set_item("to_global", report.to_global.iter().map(|t| PySimilarity(*t)).collect::<Vec<_>>())?;
    let edges: Vec<_> = report
        .edges
        .iter()
        .map(|e| (e.i.0, e.j.0, e.psnr_target, e.psnr_initial, e.psnr_final))
        .collect();
    d.set_item("edges", edges)?;
    d.set_item("vertices", report.mesh.vertices.len())?;
    d.set_item("triangles", report.mesh.triangles.len())?;
    if let Some(m) = &report.metrics {
        d.set_item("chamfer", m.chamfer)?;
        d.set_item("f_score", m.f_score)?;
        d.set_item("mean_abs_sdf", m.mean_abs_sdf)?;
    }
    if let Some(errs) = &report.frame_errors {
        let errs: Vec<_> = errs.iter().map(|e| (e.rotation_deg, e.translation, e.scale_rel)).collect();
        d.set_item("frame_errors", errs)?;
    }
    Ok(d)
}

/// Mean squared nearest distance from `source` to `target`.
#[pyfunction]
fn chamfer(source: Vec<[f64; 3]>, target: Vec<[f64; 3]>) -> PyResult<f64> {
    let s: Vec<_> = source.into_iter().map(v3).collect();
    let t: Vec<_> = target.into_iter().map(v3).collect();
    core_mesh::chamfer(&s, &t).map_err(py_err)
}

#[pyfunction]
fn f_score(a: Vec<[f64; 3]>, b: Vec<[f64; 3]>, threshold: f64) -> PyResult<f64> {
    let a: Vec<_> = a.into_iter().map(v3).collect();
    let b: Vec<_> = b.into_iter().map(v3).collect();
    core_mesh::f_score(&a, &b, threshold).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "sdfgraph")]
pub fn sdfgraph_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySimilarity>()?;
    m.add_class::<PyCameraPose>()?;
    m.add_class::<PyNodeField>()?;
    m.add_class::<PyManifest>()?;
    m.add_class::<PyBlendedField>()?;
    m.add_function(wrap_pyfunction!(transform_pose, m)?)?;
    m.add_function(wrap_pyfunction!(init_registration, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    m.add_function(wrap_pyfunction!(f_score, m)?)?;
    Ok(())
}
