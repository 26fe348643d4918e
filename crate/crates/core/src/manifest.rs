//! On-disk graph description.
//!
//! `manifest.json`:
//!
//! ```json
//! {
//!   "scene": "scene.json",
//!   "nodes": [
//!     { "id": 0, "grid": "nodes/node_0.sdfg", "poses": "nodes/node_0_poses.json",
//!       "domain": [lo_x, lo_y, lo_z, hi_x, hi_y, hi_z],
//!       "image_ids": ["n0_c0", "e0_1_c0"],
//!       "to_global": { "rotation": [9 values, row-major], "translation": [3], "scale": 1.0 } }
//!   ],
//!   "edge_transforms": [ { "i": 0, "j": 1, "transform": { ... } } ]
//! }
//! ```
//!
//! `scene`, `domain`, `to_global` and `edge_transforms` are optional. Paths
//! are relative to the manifest's directory. An edge transform maps node `j`
//! coordinates into node `i`.
//!
//! A pose file is a JSON list of
//! `{ "image_id", "R": [9, row-major], "T": [3], "fx", "fy", "cx", "cy", "width", "height" }`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{read_grid, write_grid, Aabb};
use crate::graph::{EdgeTransforms, GraphNode, NodeId, PoseEntry, SdfGraph};
use crate::render::{CameraIntrinsics, CameraPose};
use crate::scene::SceneSpec;
use crate::transform::{Mat3, SimilarityTransform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub scale: f64,
}

impl From<&SimilarityTransform> for TransformRecord {
    fn from(t: &SimilarityTransform) -> Self {
        Self {
            rotation: row_major(&t.rotation),
            translation: t.translation.into(),
            scale: t.scale,
        }
    }
}

impl TransformRecord {
    pub fn to_transform(&self) -> Result<SimilarityTransform> {
        SimilarityTransform::new(
            Mat3::from_row_slice(&self.rotation),
            self.translation.into(),
            self.scale,
        )
    }
}

fn row_major(m: &Mat3) -> [f64; 9] {
    std::array::from_fn(|k| m[(k / 3, k % 3)])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub image_id: String,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    #[serde(rename = "T")]
    pub t: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl From<&PoseEntry> for PoseRecord {
    fn from(p: &PoseEntry) -> Self {
        let k = &p.intrinsics;
        Self {
            image_id: p.image_id.clone(),
            r: row_major(&p.pose.rotation),
            t: p.pose.translation.into(),
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl PoseRecord {
    pub fn to_entry(&self) -> Result<PoseEntry> {
        Ok(PoseEntry {
            image_id: self.image_id.clone(),
            pose: CameraPose::new(Mat3::from_row_slice(&self.r), self.t.into())?,
            intrinsics: CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub grid: String,
    pub poses: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<[f64; 6]>,
    pub image_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_global: Option<TransformRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub i: usize,
    pub j: usize,
    pub transform: TransformRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    pub nodes: Vec<NodeRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edge_transforms: Vec<EdgeRecord>,
}

/// A manifest resolved into memory.
#[derive(Clone, Debug)]
pub struct LoadedManifest {
    pub path: PathBuf,
    pub graph: SdfGraph,
    pub edge_transforms: EdgeTransforms,
    pub scene: Option<SceneSpec>,
    /// True when every node record carried a `to_global`.
    pub registered: bool,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::json(path))?;
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

fn domain_values(d: &Aabb) -> [f64; 6] {
    [d.lo.x, d.lo.y, d.lo.z, d.hi.x, d.hi.y, d.hi.z]
}

pub fn load(path: impl AsRef<Path>) -> Result<LoadedManifest> {
    let path = path.as_ref();
    let manifest: Manifest = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut nodes = Vec::with_capacity(manifest.nodes.len());
    let mut registered = !manifest.nodes.is_empty();
    for rec in &manifest.nodes {
        let tag = |e: Error| e.in_stage(format!("load node {}", rec.id));
        let field = read_grid(base.join(&rec.grid)).map_err(tag)?;
        if let Some(d) = rec.domain {
            if domain_values(field.domain()) != d {
                return Err(tag(Error::InvalidArgument(format!(
                    "manifest domain {d:?} differs from the grid's {:?}",
                    domain_values(field.domain())
                ))));
            }
        }
        let pose_path = base.join(&rec.poses);
        let poses = read_json::<Vec<PoseRecord>>(&pose_path)
            .map_err(tag)?
            .iter()
            .map(PoseRecord::to_entry)
            .collect::<Result<Vec<_>>>()
            .map_err(tag)?;
        let ids: BTreeSet<String> = rec.image_ids.iter().cloned().collect();
        let mut node = GraphNode::new(NodeId(rec.id), Arc::new(field), ids, poses).map_err(tag)?;
        match &rec.to_global {
            Some(t) => node.to_global = t.to_transform().map_err(tag)?,
            None => registered = false,
        }
        nodes.push(node);
    }
    let graph = SdfGraph::new(nodes)?;
    let mut edge_transforms = EdgeTransforms::new();
    for e in &manifest.edge_transforms {
        if e.i >= graph.len() || e.j >= graph.len() {
            return Err(Error::UnknownNode(e.i.max(e.j)));
        }
        edge_transforms.insert((NodeId(e.i), NodeId(e.j)), e.transform.to_transform()?);
    }
    let scene = match &manifest.scene {
        Some(s) => Some(read_json(&base.join(s))?),
        None => None,
    };
    Ok(LoadedManifest {
        path: path.to_path_buf(),
        graph,
        edge_transforms,
        scene,
        registered,
    })
}

/// What [`write_manifest`] records besides the nodes.
#[derive(Clone, Copy, Debug, Default)]
pub struct ManifestExtras<'a> {
    pub edge_transforms: Option<&'a EdgeTransforms>,
    pub scene: Option<&'a SceneSpec>,
    /// Store each node's `to_global`.
    pub with_frames: bool,
}

/// Writes grids, pose files, the optional scene, and `manifest.json` under
/// `dir`; returns the manifest path.
pub fn write_manifest(dir: impl AsRef<Path>, nodes: &[GraphNode], extras: ManifestExtras) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let node_dir = dir.join("nodes");
    fs::create_dir_all(&node_dir).map_err(Error::io(&node_dir))?;
    let mut records = Vec::with_capacity(nodes.len());
    for n in nodes {
        let grid = format!("nodes/node_{}.sdfg", n.id);
        let poses = format!("nodes/node_{}_poses.json", n.id);
        write_grid(dir.join(&grid), &n.field)?;
        let pose_records: Vec<PoseRecord> = n.poses.iter().map(PoseRecord::from).collect();
        write_json(&dir.join(&poses), &pose_records)?;
        records.push(NodeRecord {
            id: n.id.0,
            grid,
            poses,
            domain: Some(domain_values(n.domain())),
            image_ids: n.image_ids.iter().cloned().collect(),
            to_global: extras.with_frames.then(|| TransformRecord::from(&n.to_global)),
        });
    }
    let scene = match extras.scene {
        Some(spec) => {
            write_json(&dir.join("scene.json"), spec)?;
            Some("scene.json".to_string())
        }
        None => None,
    };
    let edge_transforms = extras
        .edge_transforms
        .map(|t| {
            t.iter()
                .map(|(&(i, j), t)| EdgeRecord {
                    i: i.0,
                    j: j.0,
                    transform: TransformRecord::from(t),
                })
                .collect()
        })
        .unwrap_or_default();
    let path = dir.join("manifest.json");
    write_json(
        &path,
        &Manifest {
            scene,
            nodes: records,
            edge_transforms,
        },
    )?;
    Ok(path)
}

/// One line per node: `node r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz s`,
/// the node-local to scene-frame transform.
pub fn write_ground_truth(path: impl AsRef<Path>, transforms: &[SimilarityTransform]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("# node r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz s\n");
    for (k, t) in transforms.iter().enumerate() {
        let rec = TransformRecord::from(t);
        let vals: Vec<String> = rec
            .rotation
            .iter()
            .chain(rec.translation.iter())
            .chain(std::iter::once(&rec.scale))
            .map(|v| v.to_string())
            .collect();
        out.push_str(&format!("{k} {}\n", vals.join(" ")));
    }
    fs::write(path, out).map_err(Error::io(path))
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<SimilarityTransform>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| Error::Parse(format!("ground truth value {v:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 14 || vals[0] as usize != out.len() {
            return Err(Error::Parse(format!("ground truth line {line:?}")));
        }
        out.push(
            TransformRecord {
                rotation: std::array::from_fn(|k| vals[1 + k]),
                translation: [vals[10], vals[11], vals[12]],
                scale: vals[13],
            }
            .to_transform()?,
        );
    }
    Ok(out)
}

/// The global frame of a ground-truth file re-anchored at `root`, so it can be
/// compared with frames propagated from that root.
pub fn anchored(truth: &[SimilarityTransform], root: NodeId) -> Result<Vec<SimilarityTransform>> {
    let inv = truth.get(root.0).ok_or(Error::UnknownNode(root.0))?.inverse()?;
    Ok(truth.iter().map(|t| inv.compose(t)).collect())
}

/// Bounding box of several boxes.
pub fn union_bounds(boxes: impl IntoIterator<Item = Aabb>) -> Option<Aabb> {
    Aabb::bounding(boxes.into_iter().flat_map(|b| [b.lo, b.hi]))
}
