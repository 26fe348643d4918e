//! End-to-end orchestration: register the tree edges of a manifest's graph,
//! place every node in the root frame, blend, mesh, and score.
//!
//! Every artifact is written under the output directory:
//!
//! | file | content |
//! |---|---|
//! | `run_log.txt` | `key=value` records, one per event, no timings |
//! | `registration.csv` | one row per registered edge |
//! | `traces/edge_<i>_<j>.csv` | refinement trace |
//! | `renders/edge_<i>_<j>_{reference,initial,final}.ppm` | first shared view |
//! | `mesh.obj`, `mesh.ply` | blended surface, root frame |
//! | `report.txt`, `report.csv` | [`MetricReport`], when the scene is known |
//! | `registered/manifest.json` | nodes with frames and edge transforms |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::Rng;

use crate::blend::{seam_profile, BlendConfig, BlendMode, GlobalField, SeamProfile};
use crate::error::{Error, Result};
use crate::fields::{Aabb, Vec3};
use crate::graph::{edge_residuals, EdgeResidual, EdgeTransforms, GraphEdge, NodeId, SdfGraph};
use crate::manifest::{self, read_ground_truth, LoadedManifest, ManifestExtras};
use crate::mesh::{
    chamfer, export_obj, export_ply, f_score, marching_cubes, mean_abs_sdf, read_obj, read_ply, sample_surface,
    MetricReport, TriangleMesh,
};
use crate::register::{
    alignment_quality, compute_masks, init_registration, refine_registration, render_transformed, write_trace_csv,
    RefineConfig, RefineOutcome, SharedView,
};
use crate::render::image::write_ppm;
use crate::render::{render_image, RenderConfig};
use crate::scene::{analytic_surface_samples, substream, SceneSpec};
use crate::transform::{axis_angle, SimilarityTransform};

/// Deliberate error added to the closed-form start of every registration,
/// to exercise refinement on noiseless data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation {
    pub rotation_deg: f64,
    /// Offset length as a fraction of the longest side of node `j`'s box.
    pub translation_frac: f64,
    /// Relative scale change.
    pub scale_frac: f64,
}

impl Perturbation {
    /// 2° of rotation, 2% translation, 1% scale.
    pub fn standard() -> Self {
        Self {
            rotation_deg: 2.0,
            translation_frac: 0.02,
            scale_frac: 0.01,
        }
    }

    /// A delta on node-`j` coordinates with the configured magnitudes and
    /// random directions.
    pub fn draw(&self, rng: &mut impl Rng, extent: f64) -> SimilarityTransform {
        let mut dir = || loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                break v / n;
            }
        };
        let axis = dir();
        let offset = dir() * (self.translation_frac * extent);
        SimilarityTransform {
            rotation: axis_angle(&axis, self.rotation_deg.to_radians()),
            translation: offset,
            scale: 1.0 + self.scale_frac,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub out: PathBuf,
    pub root: NodeId,
    pub seed: u64,
    pub refine: RefineConfig,
    pub render: RenderConfig,
    /// Opacity both nodes must exceed for a pixel to enter the loss.
    pub mask_tau: f64,
    pub blend: BlendConfig,
    /// Marching-cubes lattice vertices per axis.
    pub mesh_resolution: [usize; 3],
    /// Meshing box in the root frame; defaults to the scene box when the
    /// manifest names a scene, otherwise to the blended field's bounds.
    pub mesh_region: Option<Aabb>,
    pub perturbation: Option<Perturbation>,
    /// Surface samples per side for chamfer and F-score.
    pub eval_samples: usize,
    pub save_renders: bool,
}

impl PipelineConfig {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            root: NodeId(0),
            seed: 0,
            refine: RefineConfig::default(),
            render: RenderConfig::default(),
            mask_tau: 0.5,
            blend: BlendConfig::default(),
            mesh_resolution: [128; 3],
            mesh_region: None,
            perturbation: None,
            eval_samples: 20_000,
            save_renders: true,
        }
    }
}

/// Errors of a transform against a reference, in degrees, frame units and
/// relative scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformError {
    pub rotation_deg: f64,
    pub translation: f64,
    pub scale_rel: f64,
}

impl TransformError {
    pub fn between(t: &SimilarityTransform, reference: &SimilarityTransform) -> Self {
        Self {
            rotation_deg: t.rotation_angle_to(reference).to_degrees(),
            translation: (t.translation - reference.translation).norm(),
            scale_rel: (t.scale / reference.scale - 1.0).abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeRegistration {
    pub i: NodeId,
    pub j: NodeId,
    pub shared: usize,
    pub mask_pixels: usize,
    /// Closed-form estimate.
    pub init: SimilarityTransform,
    /// Refinement start: `init`, perturbed when configured.
    pub start: SimilarityTransform,
    pub refined: RefineOutcome,
    /// Masked PSNR of node `j` at its own poses against node `i`.
    pub psnr_target: f64,
    pub psnr_initial: f64,
    pub psnr_final: f64,
    /// Errors against the true edge transform, when ground truth is known.
    pub truth: Option<EdgeTruth>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeTruth {
    pub transform: SimilarityTransform,
    pub init: TransformError,
    pub start: TransformError,
    pub refined: TransformError,
}

impl EdgeRegistration {
    pub fn transform(&self) -> &SimilarityTransform {
        &self.refined.transform
    }
}

/// Shared views of an edge, with node `i`'s and node `j`'s poses.
pub fn shared_views(graph: &SdfGraph, edge: &GraphEdge) -> Result<Vec<SharedView>> {
    let ni = graph.node(edge.a)?;
    let nj = graph.node(edge.b)?;
    edge.shared
        .iter()
        .map(|id| {
            let missing = |n: NodeId| Error::InvalidArgument(format!("node {n} lists image {id:?} without a pose"));
            let pi = ni.pose(id).ok_or_else(|| missing(edge.a))?;
            let pj = nj.pose(id).ok_or_else(|| missing(edge.b))?;
            if pi.intrinsics != pj.intrinsics {
                return Err(Error::InvalidArgument(format!("image {id:?} has different intrinsics in nodes {} and {}", edge.a, edge.b)));
            }
            Ok(SharedView {
                image_id: id.clone(),
                pose_i: pi.pose,
                pose_j: pj.pose,
                intrinsics: pi.intrinsics,
            })
        })
        .collect()
}

/// Closed-form transform of an edge (node `b` into node `a`).
pub fn init_edge(graph: &SdfGraph, edge: &GraphEdge) -> Result<SimilarityTransform> {
    let views = shared_views(graph, edge)?;
    let pairs: Vec<_> = views.iter().map(|v| (v.pose_i, v.pose_j)).collect();
    init_registration(&pairs)
}

fn stage(edge: &GraphEdge) -> String {
    format!("register edge ({}, {})", edge.a, edge.b)
}

/// Refines `start` for one edge and scores the result.
pub fn refine_edge(
    graph: &SdfGraph,
    edge: &GraphEdge,
    init: SimilarityTransform,
    start: SimilarityTransform,
    cfg: &PipelineConfig,
) -> Result<EdgeRegistration> {
    let views = shared_views(graph, edge)?;
    let fi = &graph.node(edge.a)?.field;
    let fj = &graph.node(edge.b)?.field;
    let masks = compute_masks(fi, fj, &views, &start, &cfg.render, cfg.mask_tau)?;
    let refine = RefineConfig {
        seed: substream(cfg.seed, &format!("rays/{}-{}", edge.a, edge.b)).random(),
        ..cfg.refine
    };
    let refined = refine_registration(fj, &views, &masks, &start, &refine, &cfg.render)?;
    let q0 = alignment_quality(fi, fj, &views, &masks, &start, &cfg.render)?;
    let q1 = alignment_quality(fi, fj, &views, &masks, &refined.transform, &cfg.render)?;
    Ok(EdgeRegistration {
        i: edge.a,
        j: edge.b,
        shared: views.len(),
        mask_pixels: masks.iter().map(|m| m.count()).sum(),
        init,
        start,
        refined,
        psnr_target: q0.target,
        psnr_initial: q0.aligned,
        psnr_final: q1.aligned,
        truth: None,
    })
}

/// Closed-form start, optional perturbation, refinement.
pub fn register_edge(graph: &SdfGraph, edge: &GraphEdge, cfg: &PipelineConfig) -> Result<EdgeRegistration> {
    let init = init_edge(graph, edge)?;
    let start = match cfg.perturbation {
        Some(p) => {
            let mut rng = substream(cfg.seed, &format!("perturb/{}-{}", edge.a, edge.b));
            let extent = graph.node(edge.b)?.domain().extent().max();
            init.compose(&p.draw(&mut rng, extent))
        }
        None => init,
    };
    refine_edge(graph, edge, init, start, cfg)
}

/// True `T_ij` from per-node ground truth.
pub fn true_edge(truth: &[SimilarityTransform], i: NodeId, j: NodeId) -> Result<SimilarityTransform> {
    let gi = truth.get(i.0).ok_or(Error::UnknownNode(i.0))?;
    let gj = truth.get(j.0).ok_or(Error::UnknownNode(j.0))?;
    Ok(gi.inverse()?.compose(gj))
}

/// Ground truth next to a manifest, when present.
pub fn ground_truth_for(manifest_path: &Path) -> Result<Option<Vec<SimilarityTransform>>> {
    let p = manifest_path.parent().unwrap_or(Path::new(".")).join("ground_truth.txt");
    if p.exists() {
        read_ground_truth(&p).map(Some)
    } else {
        Ok(None)
    }
}

#[derive(Clone, Debug)]
pub struct PipelineReport {
    pub tree: Vec<GraphEdge>,
    pub edges: Vec<EdgeRegistration>,
    pub to_global: Vec<SimilarityTransform>,
    /// Closed-form residuals of the edges left out of the tree.
    pub residuals: Vec<EdgeResidual>,
    /// Per-node error of `to_global` against ground truth re-anchored at the
    /// root.
    pub frame_errors: Option<Vec<TransformError>>,
    pub region: Aabb,
    pub mesh: TriangleMesh,
    pub metrics: Option<MetricReport>,
}

/// Line-oriented `key=value` log.
#[derive(Default)]
struct RunLog(String);

impl RunLog {
    fn record(&mut self, pairs: &[(&str, String)]) {
        let line: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
        info!("{}", line.join(" "));
        self.0.push_str(&line.join(" "));
        self.0.push('\n');
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(Error::io(p))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(Error::io(p))
}

/// Meshing box: `explicit`, else the scene box, else the field bounds; then
/// pulled in by a quarter lattice cell so boundary samples stay inside the
/// node boxes.
pub fn mesh_region(explicit: Option<Aabb>, scene: Option<&SceneSpec>, field: &GlobalField, res: [usize; 3]) -> Result<Aabb> {
    if let Some(r) = explicit {
        return Ok(r);
    }
    let b = match scene {
        Some(s) => s.bbox()?,
        None => field.bounds(),
    };
    let e = b.extent();
    let pad = Vec3::new(
        e.x / (res[0].max(2) - 1) as f64,
        e.y / (res[1].max(2) - 1) as f64,
        e.z / (res[2].max(2) - 1) as f64,
    ) * 0.25;
    Aabb::new(b.lo + pad, b.hi - pad)
}

/// Marching cubes over the blended field, colored by blended node colors.
pub fn extract_mesh(field: &GlobalField, region: &Aabb, res: [usize; 3]) -> Result<TriangleMesh> {
    let mut mesh = marching_cubes(field, region, res, 0.0)?;
    mesh.colorize(|y| field.color(y).unwrap_or_else(Vec3::zeros));
    Ok(mesh)
}

/// Scores `mesh` (root frame) against the analytic scene. `root_truth` maps
/// the root frame into the scene frame.
pub fn evaluate_against_scene(
    mesh: &TriangleMesh,
    field: &GlobalField,
    scene: &SceneSpec,
    root_truth: &SimilarityTransform,
    region: &Aabb,
    res: [usize; 3],
    samples: usize,
    seed: u64,
) -> Result<MetricReport> {
    let sdf = scene.sdf()?;
    let scene_region = Aabb::bounding(region.corners().map(|c| root_truth.apply(&c))).expect("eight corners");
    let fine = res.map(|n| n.max(2) * 2);
    let reference = analytic_surface_samples(&sdf, &scene_region, fine, samples, substream(seed, "eval/reference").random())?;
    let in_scene = TriangleMesh {
        vertices: mesh.vertices.iter().map(|v| root_truth.apply(v)).collect(),
        ..mesh.clone()
    };
    let recon = sample_surface(&in_scene, samples, substream(seed, "eval/mesh").random())?;
    let cell = (0..3)
        .map(|a| region.extent()[a] / (res[a] - 1) as f64)
        .fold(0.0, f64::max)
        * root_truth.distance_scale();
    let threshold = 2.0 * cell;
    let k = root_truth.distance_scale();
    let to_root = |p: &Vec3| root_truth.apply_inverse(p);
    let local: Vec<Vec3> = reference.iter().map(to_root).collect();
    Ok(MetricReport {
        chamfer: chamfer(&reference, &recon)?,
        f_score: f_score(&reference, &recon, threshold)?,
        mean_abs_sdf: k * mean_abs_sdf(&local, field)?,
        threshold,
        samples,
        resolution: res,
        region: *region,
    })
}

fn fmt_t(t: &SimilarityTransform) -> String {
    let r = manifest::TransformRecord::from(t);
    let v: Vec<String> = r
        .rotation
        .iter()
        .chain(r.translation.iter())
        .chain(std::iter::once(&r.scale))
        .map(|x| x.to_string())
        .collect();
    v.join(",")
}

/// Runs everything on a loaded manifest.
pub fn run_pipeline(loaded: &LoadedManifest, cfg: &PipelineConfig) -> Result<PipelineReport> {
    let out = &cfg.out;
    create_dir(out)?;
    let mut log = RunLog::default();
    let mut graph = loaded.graph.clone();
    let truth = ground_truth_for(&loaded.path)?;
    log.record(&[
        ("stage", "load".into()),
        ("nodes", graph.len().to_string()),
        ("edges", graph.edges().len().to_string()),
        ("seed", cfg.seed.to_string()),
        ("root", cfg.root.to_string()),
    ]);
    graph.node(cfg.root).map_err(|e| e.in_stage("select root"))?;

    let tree = graph.minimum_spanning_tree().map_err(|e| e.in_stage("minimum spanning tree"))?;
    for e in &tree {
        log.record(&[
            ("stage", "tree".into()),
            ("edge", format!("{}-{}", e.a, e.b)),
            ("shared", e.shared.len().to_string()),
            ("weight", e.weight.to_string()),
        ]);
    }

    let traces = out.join("traces");
    let renders = out.join("renders");
    if !tree.is_empty() {
        create_dir(&traces)?;
    }
    if cfg.save_renders && !tree.is_empty() {
        create_dir(&renders)?;
    }
    let mut edges = Vec::with_capacity(tree.len());
    let mut table = EdgeTransforms::new();
    for e in &tree {
        let mut reg = register_edge(&graph, e, cfg).map_err(|x| x.in_stage(stage(e)))?;
        if let Some(t) = &truth {
            let tt = true_edge(t, e.a, e.b)?;
            reg.truth = Some(EdgeTruth {
                transform: tt,
                init: TransformError::between(&reg.init, &tt),
                start: TransformError::between(&reg.start, &tt),
                refined: TransformError::between(reg.transform(), &tt),
            });
        }
        let name = format!("edge_{}_{}", e.a, e.b);
        write_trace_csv(traces.join(format!("{name}.csv")), &reg.refined.trace)?;
        if cfg.save_renders {
            save_edge_renders(&graph, e, &reg, &cfg.render, &renders, &name).map_err(|x| x.in_stage(stage(e)))?;
        }
        let mut rec = vec![
            ("stage", "register".to_string()),
            ("edge", format!("{}-{}", e.a, e.b)),
            ("mask_pixels", reg.mask_pixels.to_string()),
            ("iterations", reg.refined.iterations.to_string()),
            ("initial_loss", reg.refined.initial_loss.to_string()),
            ("final_loss", reg.refined.final_loss.to_string()),
            ("kept_initial", reg.refined.kept_initial.to_string()),
            ("psnr_target", reg.psnr_target.to_string()),
            ("psnr_initial", reg.psnr_initial.to_string()),
            ("psnr_final", reg.psnr_final.to_string()),
            ("transform", fmt_t(reg.transform())),
        ];
        if let Some(t) = &reg.truth {
            rec.push(("rot_err_start_deg", t.start.rotation_deg.to_string()));
            rec.push(("rot_err_final_deg", t.refined.rotation_deg.to_string()));
        }
        log.record(&rec);
        if reg.refined.kept_initial {
            warn!("edge ({}, {}): refinement did not improve on its start", e.a, e.b);
        }
        table.insert((e.a, e.b), *reg.transform());
        edges.push(reg);
    }

    graph.propagate(&tree, cfg.root, &table).map_err(|e| e.in_stage("propagate"))?;
    let to_global: Vec<SimilarityTransform> = graph.nodes().iter().map(|n| n.to_global).collect();
    for (k, t) in to_global.iter().enumerate() {
        log.record(&[("stage", "propagate".into()), ("node", k.to_string()), ("to_global", fmt_t(t))]);
    }

    // closed-form estimates on the edges the tree left out, as a diagnostic
    let mut off_tree = EdgeTransforms::new();
    for e in graph.edges().iter().filter(|e| !tree.contains(e)) {
        match init_edge(&graph, e) {
            Ok(t) => {
                off_tree.insert((e.a, e.b), t);
            }
            Err(err) => warn!("edge ({}, {}) has no closed-form estimate: {err}", e.a, e.b),
        }
    }
    let residuals = edge_residuals(&to_global, &off_tree)?;
    for r in &residuals {
        log.record(&[
            ("stage", "residual".into()),
            ("edge", format!("{}-{}", r.a, r.b)),
            ("rotation_deg", r.rotation_deg.to_string()),
            ("translation", r.translation.to_string()),
            ("scale_rel", r.scale_rel.to_string()),
        ]);
    }

    let frame_errors = match &truth {
        Some(t) => {
            let anchored = manifest::anchored(t, cfg.root)?;
            Some(
                to_global
                    .iter()
                    .zip(&anchored)
                    .map(|(g, a)| TransformError::between(g, a))
                    .collect::<Vec<_>>(),
            )
        }
        None => None,
    };

    let field = GlobalField::from_graph(&graph, cfg.blend).map_err(|e| e.in_stage("blend"))?;
    let region = mesh_region(cfg.mesh_region, loaded.scene.as_ref(), &field, cfg.mesh_resolution)?;
    let mesh = extract_mesh(&field, &region, cfg.mesh_resolution).map_err(|e| e.in_stage("mesh"))?;
    export_obj(&mesh, out.join("mesh.obj"))?;
    export_ply(&mesh, out.join("mesh.ply"))?;
    log.record(&[
        ("stage", "mesh".into()),
        ("vertices", mesh.vertices.len().to_string()),
        ("triangles", mesh.triangles.len().to_string()),
        ("components", mesh.components().len().to_string()),
    ]);

    let metrics = match &loaded.scene {
        Some(scene) if !mesh.is_empty() => {
            let root_truth = match &truth {
                Some(t) => *t.get(cfg.root.0).ok_or(Error::UnknownNode(cfg.root.0))?,
                None => SimilarityTransform::identity(),
            };
            let m = evaluate_against_scene(
                &mesh,
                &field,
                scene,
                &root_truth,
                &region,
                cfg.mesh_resolution,
                cfg.eval_samples,
                cfg.seed,
            )
            .map_err(|e| e.in_stage("eval"))?;
            write_text(&out.join("report.txt"), &m.to_text())?;
            write_text(&out.join("report.csv"), &format!("{}\n{}\n", MetricReport::CSV_HEADER, m.to_csv_row()))?;
            log.record(&[
                ("stage", "eval".into()),
                ("chamfer", m.chamfer.to_string()),
                ("f_score", m.f_score.to_string()),
                ("mean_abs_sdf", m.mean_abs_sdf.to_string()),
            ]);
            Some(m)
        }
        _ => None,
    };

    write_registration_csv(&out.join("registration.csv"), &edges)?;
    manifest::write_manifest(
        out.join("registered"),
        graph.nodes(),
        ManifestExtras {
            edge_transforms: Some(&table),
            scene: loaded.scene.as_ref(),
            with_frames: true,
        },
    )?;
    if let Some(t) = &truth {
        manifest::write_ground_truth(out.join("registered").join("ground_truth.txt"), t)?;
    }
    write_text(&out.join("run_log.txt"), &log.0)?;

    Ok(PipelineReport {
        tree,
        edges,
        to_global,
        residuals,
        frame_errors,
        region,
        mesh,
        metrics,
    })
}

fn save_edge_renders(
    graph: &SdfGraph,
    edge: &GraphEdge,
    reg: &EdgeRegistration,
    cfg: &RenderConfig,
    dir: &Path,
    name: &str,
) -> Result<()> {
    let views = shared_views(graph, edge)?;
    let Some(v) = views.first() else { return Ok(()) };
    let fi = &graph.node(edge.a)?.field;
    let fj = &graph.node(edge.b)?.field;
    let (w, h) = (v.intrinsics.width, v.intrinsics.height);
    let reference = render_image(fi, &v.pose_i, &v.intrinsics, cfg)?;
    write_ppm(dir.join(format!("{name}_reference.ppm")), w, h, &reference.color)?;
    let initial = render_transformed(fj, v, &reg.start, cfg)?;
    write_ppm(dir.join(format!("{name}_initial.ppm")), w, h, &initial.color)?;
    let fin = render_transformed(fj, v, reg.transform(), cfg)?;
    write_ppm(dir.join(format!("{name}_final.ppm")), w, h, &fin.color)
}

pub const REGISTRATION_CSV_HEADER: &str = "i,j,shared,mask_pixels,iterations,initial_loss,final_loss,kept_initial,\
psnr_target,psnr_initial,psnr_final,rot_err_init_deg,rot_err_start_deg,rot_err_final_deg,\
trans_err_final,scale_err_final";

fn write_registration_csv(path: &Path, edges: &[EdgeRegistration]) -> Result<()> {
    let mut s = String::from(REGISTRATION_CSV_HEADER);
    s.push('\n');
    for r in edges {
        let opt = |f: fn(&EdgeTruth) -> f64| r.truth.as_ref().map(f).map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.i,
            r.j,
            r.shared,
            r.mask_pixels,
            r.refined.iterations,
            r.refined.initial_loss,
            r.refined.final_loss,
            r.refined.kept_initial,
            r.psnr_target,
            r.psnr_initial,
            r.psnr_final,
            opt(|t| t.init.rotation_deg),
            opt(|t| t.start.rotation_deg),
            opt(|t| t.refined.rotation_deg),
            opt(|t| t.refined.translation),
            opt(|t| t.refined.scale_rel),
        );
    }
    write_text(path, &s)
}

// Single-stage entry points. Each loads a manifest, runs one operation and
// writes its result under `out`.

/// Closed-form transforms for every tree edge, stored in a new manifest.
pub fn stage_register_init(loaded: &LoadedManifest, out: &Path) -> Result<EdgeTransforms> {
    let tree = loaded.graph.minimum_spanning_tree().map_err(|e| e.in_stage("minimum spanning tree"))?;
    let mut table = EdgeTransforms::new();
    for e in &tree {
        let t = init_edge(&loaded.graph, e).map_err(|x| x.in_stage(format!("register-init edge ({}, {})", e.a, e.b)))?;
        table.insert((e.a, e.b), t);
    }
    manifest::write_manifest(
        out,
        loaded.graph.nodes(),
        ManifestExtras {
            edge_transforms: Some(&table),
            scene: loaded.scene.as_ref(),
            with_frames: false,
        },
    )?;
    Ok(table)
}

/// Refines every stored edge transform (closed-form start when an edge has
/// none), writing traces and an updated manifest.
pub fn stage_register_refine(loaded: &LoadedManifest, cfg: &PipelineConfig) -> Result<Vec<EdgeRegistration>> {
    let tree = loaded.graph.minimum_spanning_tree().map_err(|e| e.in_stage("minimum spanning tree"))?;
    let traces = cfg.out.join("traces");
    create_dir(&traces)?;
    let mut table = EdgeTransforms::new();
    let mut regs = Vec::new();
    for e in &tree {
        let tag = |x: Error| x.in_stage(format!("register-refine edge ({}, {})", e.a, e.b));
        let start = match loaded.edge_transforms.get(&(e.a, e.b)) {
            Some(t) => *t,
            None => match loaded.edge_transforms.get(&(e.b, e.a)) {
                Some(t) => t.inverse().map_err(tag)?,
                None => init_edge(&loaded.graph, e).map_err(tag)?,
            },
        };
        let reg = refine_edge(&loaded.graph, e, start, start, cfg).map_err(tag)?;
        write_trace_csv(traces.join(format!("edge_{}_{}.csv", e.a, e.b)), &reg.refined.trace)?;
        table.insert((e.a, e.b), *reg.transform());
        regs.push(reg);
    }
    write_registration_csv(&cfg.out.join("registration.csv"), &regs)?;
    manifest::write_manifest(
        &cfg.out,
        loaded.graph.nodes(),
        ManifestExtras {
            edge_transforms: Some(&table),
            scene: loaded.scene.as_ref(),
            with_frames: false,
        },
    )?;
    Ok(regs)
}

/// Chains the stored edge transforms along the tree from `root`.
pub fn stage_propagate(loaded: &LoadedManifest, root: NodeId, out: &Path) -> Result<Vec<SimilarityTransform>> {
    let mut graph = loaded.graph.clone();
    let tree = graph.minimum_spanning_tree().map_err(|e| e.in_stage("minimum spanning tree"))?;
    graph.propagate(&tree, root, &loaded.edge_transforms).map_err(|e| e.in_stage("propagate"))?;
    manifest::write_manifest(
        out,
        graph.nodes(),
        ManifestExtras {
            edge_transforms: Some(&loaded.edge_transforms),
            scene: loaded.scene.as_ref(),
            with_frames: true,
        },
    )?;
    Ok(graph.nodes().iter().map(|n| n.to_global).collect())
}

/// Blends the nodes at their stored frames and meshes the result into
/// `out/mesh.obj` and `out/mesh.ply`.
pub fn stage_blend_mesh(
    loaded: &LoadedManifest,
    blend: BlendConfig,
    region: Option<Aabb>,
    res: [usize; 3],
    out: &Path,
) -> Result<TriangleMesh> {
    if !loaded.registered && loaded.graph.len() > 1 {
        warn!("manifest carries no node frames; blending in the nodes' local frames");
    }
    let field = GlobalField::from_graph(&loaded.graph, blend).map_err(|e| e.in_stage("blend"))?;
    let region = mesh_region(region, loaded.scene.as_ref(), &field, res)?;
    let mesh = extract_mesh(&field, &region, res).map_err(|e| e.in_stage("mesh"))?;
    create_dir(out)?;
    export_obj(&mesh, out.join("mesh.obj"))?;
    export_ply(&mesh, out.join("mesh.ply"))?;
    Ok(mesh)
}

/// Renders every pose of `node` (or one image) to PPM files.
pub fn stage_render(
    loaded: &LoadedManifest,
    node: NodeId,
    image: Option<&str>,
    cfg: &RenderConfig,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let n = loaded.graph.node(node).map_err(|e| e.in_stage("render"))?;
    create_dir(out)?;
    let mut written = Vec::new();
    for p in n.poses.iter().filter(|p| image.is_none_or(|id| p.image_id == id)) {
        let img = render_image(&n.field, &p.pose, &p.intrinsics, cfg).map_err(|e| e.in_stage(format!("render {}", p.image_id)))?;
        let path = out.join(format!("node_{}_{}.ppm", node, p.image_id));
        write_ppm(&path, img.width, img.height, &img.color)?;
        written.push(path);
    }
    if written.is_empty() {
        return Err(Error::InvalidArgument(format!("node {node} has no pose {:?}", image.unwrap_or("(any)"))).in_stage("render"));
    }
    Ok(written)
}

/// Moves one node by `delta` (applied in the global frame), re-meshes, and
/// writes the edited manifest and mesh.
pub fn stage_edit(
    loaded: &LoadedManifest,
    node: NodeId,
    delta: &SimilarityTransform,
    blend: BlendConfig,
    region: Option<Aabb>,
    res: [usize; 3],
    out: &Path,
) -> Result<TriangleMesh> {
    let base = GlobalField::from_graph(&loaded.graph, blend).map_err(|e| e.in_stage("blend"))?;
    // the region is fixed before the edit so an identity edit meshes the
    // same lattice
    let region = mesh_region(region, loaded.scene.as_ref(), &base, res)?;
    let edited = base.edit_node(node, delta).map_err(|e| e.in_stage("edit"))?;
    let mesh = extract_mesh(&edited, &region, res).map_err(|e| e.in_stage("mesh"))?;
    create_dir(out)?;
    export_obj(&mesh, out.join("mesh.obj"))?;
    export_ply(&mesh, out.join("mesh.ply"))?;
    let mut graph = loaded.graph.clone();
    let nodes: Vec<_> = graph
        .nodes()
        .iter()
        .map(|n| {
            let mut n = n.clone();
            if n.id == node {
                n.to_global = delta.compose(&n.to_global);
            }
            n
        })
        .collect();
    graph = SdfGraph::new(nodes)?;
    manifest::write_manifest(
        out,
        graph.nodes(),
        ManifestExtras {
            edge_transforms: Some(&loaded.edge_transforms),
            scene: loaded.scene.as_ref(),
            with_frames: true,
        },
    )?;
    Ok(mesh)
}

/// What `eval` compares a mesh against.
#[derive(Clone, Debug)]
pub enum Reference {
    /// Another mesh, in the same frame.
    Mesh(PathBuf),
    /// The analytic scene of a manifest; the mesh is taken to be in the
    /// frame of `root`.
    Scene { manifest: PathBuf, root: NodeId },
}

pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => read_ply(path),
        Some("obj") => read_obj(path),
        _ => Err(Error::InvalidArgument(format!("{}: expected .obj or .ply", path.display()))),
    }
}

/// Chamfer and F-score of a mesh against a reference; the SDF term needs a
/// field and is only filled for scene references.
pub fn stage_eval(
    mesh_path: &Path,
    reference: &Reference,
    threshold: f64,
    samples: usize,
    seed: u64,
    blend: BlendConfig,
) -> Result<MetricReport> {
    let mesh = read_mesh(mesh_path).map_err(|e| e.in_stage("eval"))?;
    let region = mesh.bounds().ok_or(Error::Empty("mesh")).map_err(|e| e.in_stage("eval"))?;
    match reference {
        Reference::Mesh(p) => {
            let other = read_mesh(p).map_err(|e| e.in_stage("eval"))?;
            // one stream for both, so identical meshes give identical samples
            let s = substream(seed, "eval/surface").random();
            let a = sample_surface(&other, samples, s)?;
            let b = sample_surface(&mesh, samples, s)?;
            Ok(MetricReport {
                chamfer: chamfer(&a, &b)?,
                f_score: f_score(&a, &b, threshold)?,
                mean_abs_sdf: f64::NAN,
                threshold,
                samples,
                resolution: [0; 3],
                region,
            })
        }
        Reference::Scene { manifest: m, root } => {
            let loaded = manifest::load(m)?;
            let scene = loaded
                .scene
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("manifest names no scene".into()).in_stage("eval"))?;
            let root_truth = match ground_truth_for(m)? {
                Some(t) => *t.get(root.0).ok_or(Error::UnknownNode(root.0))?,
                None => SimilarityTransform::identity(),
            };
            let field = GlobalField::from_graph(&loaded.graph, blend)?;
            let sdf = scene.sdf()?;
            let scene_region = scene.bbox()?;
            let reference = analytic_surface_samples(&sdf, &scene_region, [96; 3], samples, substream(seed, "eval/reference").random())?;
            let in_scene = TriangleMesh {
                vertices: mesh.vertices.iter().map(|v| root_truth.apply(v)).collect(),
                ..mesh.clone()
            };
            let recon = sample_surface(&in_scene, samples, substream(seed, "eval/mesh").random())?;
            let local: Vec<Vec3> = reference.iter().map(|p| root_truth.apply_inverse(p)).collect();
            Ok(MetricReport {
                chamfer: chamfer(&reference, &recon)?,
                f_score: f_score(&reference, &recon, threshold)?,
                mean_abs_sdf: root_truth.distance_scale() * mean_abs_sdf(&local, &field)?,
                threshold,
                samples,
                resolution: [0; 3],
                region,
            })
        }
    }
}

/// Value profiles of the same graph under softmax and min-union blending.
pub fn stage_seam_scan(loaded: &LoadedManifest, beta: f64, a: &Vec3, b: &Vec3, n: usize, out: &Path) -> Result<(SeamProfile, SeamProfile)> {
    let soft = GlobalField::from_graph(&loaded.graph, BlendConfig { beta, mode: BlendMode::Softmax })?;
    let min = soft.clone().with_config(BlendConfig { beta, mode: BlendMode::MinUnion })?;
    let ps = seam_profile(|y| soft.eval(y), a, b, n)?;
    let pm = seam_profile(|y| min.eval(y), a, b, n)?;
    create_dir(out)?;
    let mut s = String::from("t,softmax,min_union\n");
    for ((t, vs), (_, vm)) in ps.samples.iter().zip(&pm.samples) {
        let _ = writeln!(s, "{t},{vs},{vm}");
    }
    write_text(&out.join("seam_profile.csv"), &s)?;
    write_text(
        &out.join("seam_report.txt"),
        &format!("softmax_max_jump={}\nmin_union_max_jump={}\n", ps.max_jump, pm.max_jump),
    )?;
    Ok((ps, pm))
}
