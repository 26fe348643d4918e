use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use sdfgraph::blend::{BlendConfig, BlendMode};
use sdfgraph::fields::Vec3;
use sdfgraph::graph::NodeId;
use sdfgraph::manifest::{self, read_json};
use sdfgraph::pipeline::{self, Perturbation, PipelineConfig, Reference};
use sdfgraph::register::{EarlyStop, LossNorm, RefineConfig};
use sdfgraph::render::RenderConfig;
use sdfgraph::scene::{self, DisturbanceSpec, SceneSpec};
use sdfgraph::transform::{EulerZyx, SimilarityTransform};
use sdfgraph::{Error, Result};

#[derive(Parser)]
#[command(name = "sdfgraph", version, about = "Register, blend and mesh overlapping local SDF grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with known node frames.
    Gen(GenArgs),
    /// Full run: register tree edges, propagate, blend, mesh, evaluate.
    Pipeline(PipelineArgs),
    /// Closed-form transforms for the spanning-tree edges.
    RegisterInit(StageArgs),
    /// Refine the stored edge transforms photometrically.
    RegisterRefine(PipelineArgs),
    /// Chain stored edge transforms into node frames.
    Propagate(StageArgs),
    /// Blend the registered nodes and extract a mesh.
    BlendMesh(MeshArgs),
    /// Render a node's views to PPM.
    Render(RenderArgs),
    /// Move one node and re-mesh.
    Edit(EditArgs),
    /// Score a mesh against another mesh or the analytic scene.
    Eval(EvalArgs),
    /// Compare softmax and min-union values along a segment.
    SeamScan(SeamArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    SpherePair,
    Islands,
    Campus,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "sphere-pair")]
    preset: Preset,
    /// Scene description in JSON; overrides `--preset`.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Cells per side of the campus preset.
    #[arg(long, default_value_t = 5)]
    campus_n: usize,
    /// Grid vertices per axis of every node.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep every node in the scene frame.
    #[arg(long)]
    no_disturbance: bool,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    root: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum BlendArg {
    Softmax,
    Min,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    L1,
    L2,
}

#[derive(Args)]
struct BlendArgs {
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    #[arg(long, value_enum, default_value = "softmax")]
    blend: BlendArg,
    /// Marching-cubes vertices per axis: `N` or `NX,NY,NZ`.
    #[arg(long, default_value = "128", value_parser = parse_res)]
    mc_res: [usize; 3],
}

impl BlendArgs {
    fn config(&self) -> BlendConfig {
        BlendConfig {
            beta: self.beta,
            mode: match self.blend {
                BlendArg::Softmax => BlendMode::Softmax,
                BlendArg::Min => BlendMode::MinUnion,
            },
        }
    }
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    root: usize,
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    #[arg(long, default_value_t = 5e-5)]
    lr0: f64,
    /// Iterations per learning-rate decay step of 0.8.
    #[arg(long, default_value_t = 100.0)]
    decay_every: f64,
    #[arg(long, default_value_t = 2048)]
    rays: usize,
    #[arg(long, value_enum, default_value = "l1")]
    loss: LossArg,
    /// Stop when the smoothed loss stalls for this many iterations.
    #[arg(long)]
    patience: Option<usize>,
    /// Samples per rendered ray.
    #[arg(long, default_value_t = 128)]
    samples: usize,
    /// Offset every closed-form start by 2° / 2% / 1% before refining.
    #[arg(long)]
    perturb: bool,
    #[arg(long, default_value_t = 20000)]
    eval_samples: usize,
    #[command(flatten)]
    blend: BlendArgs,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig::new(&self.out);
        cfg.root = NodeId(self.root);
        cfg.seed = self.seed;
        cfg.refine = RefineConfig {
            lr0: self.lr0,
            decay_every: self.decay_every,
            iterations: self.iters,
            rays_per_iter: self.rays,
            loss: match self.loss {
                LossArg::L1 => LossNorm::L1,
                LossArg::L2 => LossNorm::L2,
            },
            early_stop: self.patience.map(|patience| EarlyStop {
                patience,
                min_rel_improvement: 1e-3,
            }),
            ..RefineConfig::default()
        };
        cfg.render = RenderConfig {
            n_samples: self.samples,
            ..RenderConfig::default()
        };
        cfg.blend = self.blend.config();
        cfg.mesh_resolution = self.blend.mc_res;
        cfg.perturbation = self.perturb.then(Perturbation::standard);
        cfg.eval_samples = self.eval_samples;
        cfg
    }
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    blend: BlendArgs,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    node: usize,
    /// Only this image id.
    #[arg(long)]
    image: Option<String>,
    #[arg(long, default_value_t = 128)]
    samples: usize,
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    node: usize,
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], allow_negative_numbers = true, default_values_t = [0.0, 0.0, 0.0])]
    translate: Vec<f64>,
    /// Yaw, pitch, roll in degrees.
    #[arg(long, num_args = 3, value_names = ["YAW", "PITCH", "ROLL"], allow_negative_numbers = true, default_values_t = [0.0, 0.0, 0.0])]
    rotate: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[command(flatten)]
    blend: BlendArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Reference mesh (.obj or .ply).
    #[arg(long, conflicts_with = "manifest")]
    reference: Option<PathBuf>,
    /// Manifest whose analytic scene is the reference.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    root: usize,
    #[arg(long, default_value_t = 0.02)]
    threshold: f64,
    #[arg(long, default_value_t = 20000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    /// Where to write report.txt; printed only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SeamArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    #[arg(long, num_args = 3, required = true, allow_negative_numbers = true)]
    from: Vec<f64>,
    #[arg(long, num_args = 3, required = true, allow_negative_numbers = true)]
    to: Vec<f64>,
    #[arg(long, default_value_t = 2001)]
    n: usize,
}

fn parse_res(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [n] => Ok([n; 3]),
        [x, y, z] => Ok([x, y, z]),
        _ => Err("expected N or NX,NY,NZ".into()),
    }
}

fn vec3(v: &[f64]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

fn gen(a: &GenArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => read_json::<SceneSpec>(p)?,
        None => match a.preset {
            Preset::SpherePair => SceneSpec::sphere_pair(),
            Preset::Islands => SceneSpec::islands(),
            Preset::Campus => SceneSpec::campus(a.campus_n),
        },
    };
    spec.seed = a.seed;
    if let Some(g) = a.grid {
        spec.grid_dims = [g; 3];
    }
    if a.no_disturbance {
        spec.disturbance = DisturbanceSpec::none();
    }
    if let Some(n) = a.noise {
        spec.noise = n;
    }
    let generated = scene::generate(&spec).map_err(|e| e.in_stage("gen"))?;
    scene::write_scene(&generated, &a.out)?;
    println!("{}", a.out.join("manifest.json").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(&a),
        Command::Pipeline(a) => {
            let loaded = manifest::load(&a.manifest)?;
            let report = pipeline::run_pipeline(&loaded, &a.config())?;
            info!("mesh with {} triangles", report.mesh.triangles.len());
            if let Some(m) = &report.metrics {
                print!("{}", m.to_text());
            }
            Ok(())
        }
        Command::RegisterInit(a) => {
            let loaded = manifest::load(&a.manifest)?;
            let table = pipeline::stage_register_init(&loaded, &a.out)?;
            println!("{} edge transforms", table.len());
            Ok(())
        }
        Command::RegisterRefine(a) => {
            let loaded = manifest::load(&a.manifest)?;
            let regs = pipeline::stage_register_refine(&loaded, &a.config())?;
            for r in regs {
                println!(
                    "edge {}-{}: loss {:.4e} -> {:.4e}, psnr {:.2} -> {:.2} dB",
                    r.i, r.j, r.refined.initial_loss, r.refined.final_loss, r.psnr_initial, r.psnr_final
                );
            }
            Ok(())
        }
        Command::Propagate(a) => {
            let loaded = manifest::load(&a.manifest)?;
            pipeline::stage_propagate(&loaded, NodeId(a.root), &a.out)?;
            Ok(())
        }
        Command::BlendMesh(a) => {
            let loaded = manifest::load(&a.manifest)?;
            let mesh = pipeline::stage_blend_mesh(&loaded, a.blend.config(), None, a.blend.mc_res, &a.out)?;
            println!("{} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
            Ok(())
        }
        Command::Render(a) => {
            let loaded = manifest::load(&a.manifest)?;
            let cfg = RenderConfig {
                n_samples: a.samples,
                ..RenderConfig::default()
            };
            for p in pipeline::stage_render(&loaded, NodeId(a.node), a.image.as_deref(), &cfg, &a.out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Edit(a) => {
            let loaded = manifest::load(&a.manifest)?;
            let angles = EulerZyx {
                yaw: a.rotate[0].to_radians(),
                pitch: a.rotate[1].to_radians(),
                roll: a.rotate[2].to_radians(),
            };
            let delta = SimilarityTransform::new(angles.to_matrix(), vec3(&a.translate), a.scale)
                .map_err(|e| e.in_stage("edit"))?;
            pipeline::stage_edit(&loaded, NodeId(a.node), &delta, a.blend.config(), None, a.blend.mc_res, &a.out)?;
            Ok(())
        }
        Command::Eval(a) => {
            let reference = match (&a.reference, &a.manifest) {
                (Some(p), None) => Reference::Mesh(p.clone()),
                (None, Some(m)) => Reference::Scene {
                    manifest: m.clone(),
                    root: NodeId(a.root),
                },
                _ => {
                    return Err(Error::InvalidArgument("give exactly one of --reference, --manifest".into())
                        .in_stage("eval"))
                }
            };
            let blend = BlendConfig {
                beta: a.beta,
                mode: BlendMode::Softmax,
            };
            let report = pipeline::stage_eval(&a.mesh, &reference, a.threshold, a.samples, a.seed, blend)?;
            match &a.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                        path: dir.clone(),
                        source: e,
                    })?;
                    let p = dir.join("report.txt");
                    std::fs::write(&p, report.to_text()).map_err(|e| Error::Io { path: p, source: e })?;
                }
                None => print!("{}", report.to_text()),
            }
            Ok(())
        }
        Command::SeamScan(a) => {
            let loaded = manifest::load(&a.manifest)?;
            let (soft, min) =
                pipeline::stage_seam_scan(&loaded, a.beta, &vec3(&a.from), &vec3(&a.to), a.n, &a.out)?;
            println!("softmax_max_jump={}\nmin_union_max_jump={}", soft.max_jump, min.max_jump);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
