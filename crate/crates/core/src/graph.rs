//! The SDF graph: nodes are local fields reconstructed from image subsets,
//! edges join nodes whose image subsets intersect. Registration runs only on
//! a minimum spanning tree, and the pairwise transforms are then chained from
//! a root node to put every node in one frame.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{Aabb, NodeField};
use crate::render::{CameraIntrinsics, CameraPose};
use crate::transform::{SimilarityTransform, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A camera of one image, expressed in a node's local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseEntry {
    pub image_id: String,
    pub pose: CameraPose,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Clone, Debug)]
pub struct GraphNode {
    pub id: NodeId,
    pub field: Arc<NodeField>,
    pub image_ids: BTreeSet<String>,
    pub poses: Vec<PoseEntry>,
    /// Maps node-local coordinates to the global frame; identity until
    /// propagation.
    pub to_global: SimilarityTransform,
}

impl GraphNode {
    pub fn new(
        id: NodeId,
        field: Arc<NodeField>,
        image_ids: BTreeSet<String>,
        poses: Vec<PoseEntry>,
    ) -> Result<Self> {
        if let Some(p) = poses.iter().find(|p| !image_ids.contains(&p.image_id)) {
            return Err(Error::InvalidArgument(format!(
                "node {id}: pose for image {:?} not in its image set",
                p.image_id
            )));
        }
        Ok(Self {
            id,
            field,
            image_ids,
            poses,
            to_global: SimilarityTransform::identity(),
        })
    }

    pub fn domain(&self) -> &Aabb {
        self.field.domain()
    }

    pub fn pose(&self, image_id: &str) -> Option<&PoseEntry> {
        self.poses.iter().find(|p| p.image_id == image_id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphEdge {
    /// Smaller endpoint.
    pub a: NodeId,
    pub b: NodeId,
    pub shared: BTreeSet<String>,
    pub weight: f64,
}

impl GraphEdge {
    pub fn endpoints(&self) -> (NodeId, NodeId) {
        (self.a, self.b)
    }
}

/// Pairwise transforms keyed by `(i, j)`: the transform maps node-`j`
/// coordinates into node-`i` coordinates.
pub type EdgeTransforms = BTreeMap<(NodeId, NodeId), SimilarityTransform>;

/// One edge per pair of nodes with intersecting image sets, weighted by
/// `1 / |shared|`, sorted by endpoints. Fails if the result is not a single
/// connected component.
pub fn build_edges<'a, I>(nodes: I) -> Result<Vec<GraphEdge>>
where
    I: IntoIterator<Item = (NodeId, &'a BTreeSet<String>)>,
{
    let mut nodes: Vec<(NodeId, &BTreeSet<String>)> = nodes.into_iter().collect();
    nodes.sort_by_key(|(id, _)| *id);
    check_dense(nodes.iter().map(|(id, _)| *id))?;
    let mut edges = Vec::new();
    for (x, (a, sa)) in nodes.iter().enumerate() {
        for (b, sb) in &nodes[x + 1..] {
            let shared: BTreeSet<String> = sa.intersection(sb).cloned().collect();
            if !shared.is_empty() {
                let weight = 1.0 / shared.len() as f64;
                edges.push(GraphEdge {
                    a: *a,
                    b: *b,
                    shared,
                    weight,
                });
            }
        }
    }
    check_connected(nodes.len(), &edges)?;
    Ok(edges)
}

fn check_dense(ids: impl Iterator<Item = NodeId>) -> Result<()> {
    for (expect, id) in ids.enumerate() {
        if id.0 != expect {
            return Err(Error::InvalidArgument(format!(
                "node ids must be dense in [0, n); expected {expect}, found {id}"
            )));
        }
    }
    Ok(())
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        // smaller root wins, keeps component labels deterministic
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }
}

fn check_connected(n: usize, edges: &[GraphEdge]) -> Result<()> {
    let mut ds = DisjointSet::new(n);
    for e in edges {
        ds.union(e.a.0, e.b.0);
    }
    let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        comps.entry(ds.find(v)).or_default().push(v);
    }
    if comps.len() > 1 {
        let listed: Vec<String> = comps
            .values()
            .map(|c| {
                let ids: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                format!("{{{}}}", ids.join(","))
            })
            .collect();
        return Err(Error::Disconnected(listed.join(",")));
    }
    Ok(())
}

/// Kruskal. Ties on weight are broken by `(a, b)` so the tree does not
/// depend on the order of `edges`.
pub fn minimum_spanning_tree(n_nodes: usize, edges: &[GraphEdge]) -> Result<Vec<GraphEdge>> {
    let mut order: Vec<&GraphEdge> = edges.iter().collect();
    order.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    let mut ds = DisjointSet::new(n_nodes);
    let mut tree = Vec::with_capacity(n_nodes.saturating_sub(1));
    for e in order {
        if e.a == e.b {
            continue;
        }
        if ds.union(e.a.0, e.b.0) {
            tree.push(e.clone());
        }
    }
    if tree.len() + 1 != n_nodes.max(1) {
        check_connected(n_nodes, edges)?;
    }
    Ok(tree)
}

pub fn total_weight(edges: &[GraphEdge]) -> f64 {
    edges.iter().map(|e| e.weight).sum()
}

/// Walks the tree breadth-first from `root` (neighbors in id order) and
/// chains edge transforms: `to_global(child) = to_global(parent) ∘ T_parent,child`,
/// inverting a stored `T_child,parent` when that is the direction on hand.
pub fn propagate_transforms(
    n_nodes: usize,
    tree: &[GraphEdge],
    root: NodeId,
    edge_transforms: &EdgeTransforms,
) -> Result<Vec<SimilarityTransform>> {
    if root.0 >= n_nodes {
        return Err(Error::UnknownNode(root.0));
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for e in tree {
        if e.a.0 >= n_nodes || e.b.0 >= n_nodes {
            return Err(Error::UnknownNode(e.a.0.max(e.b.0)));
        }
        adj[e.a.0].push(e.b.0);
        adj[e.b.0].push(e.a.0);
    }
    for a in &mut adj {
        a.sort_unstable();
    }
    let mut placed: Vec<Option<SimilarityTransform>> = vec![None; n_nodes];
    placed[root.0] = Some(SimilarityTransform::identity());
    let mut queue = VecDeque::from([root.0]);
    while let Some(p) = queue.pop_front() {
        let parent = placed[p].expect("queued nodes are placed");
        for &c in &adj[p] {
            if placed[c].is_some() {
                continue;
            }
            let step = edge_transform(edge_transforms, NodeId(p), NodeId(c))?;
            placed[c] = Some(parent.compose(&step));
            queue.push_back(c);
        }
    }
    placed
        .into_iter()
        .enumerate()
        .map(|(v, t)| {
            t.ok_or_else(|| Error::Disconnected(format!("node {v} is not reached from root {root}")))
        })
        .collect()
}

/// `T_ij` from the table, inverting `T_ji` when only that one is stored.
pub fn edge_transform(
    table: &EdgeTransforms,
    i: NodeId,
    j: NodeId,
) -> Result<SimilarityTransform> {
    if let Some(t) = table.get(&(i, j)) {
        if !t.is_invertible() {
            return Err(Error::NonInvertible(t.scale));
        }
        return Ok(*t);
    }
    if let Some(t) = table.get(&(j, i)) {
        return t.inverse();
    }
    Err(Error::MissingEdgeTransform(i.0.min(j.0), i.0.max(j.0)))
}

/// Disagreement between propagated frames and a pairwise transform, for
/// edges left out of the tree.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeResidual {
    pub a: NodeId,
    pub b: NodeId,
    pub rotation_deg: f64,
    pub translation: f64,
    pub scale_rel: f64,
}

pub fn edge_residuals(
    to_global: &[SimilarityTransform],
    edge_transforms: &EdgeTransforms,
) -> Result<Vec<EdgeResidual>> {
    edge_transforms
        .iter()
        .map(|(&(i, j), t)| {
            let gi = to_global.get(i.0).ok_or(Error::UnknownNode(i.0))?;
            let gj = to_global.get(j.0).ok_or(Error::UnknownNode(j.0))?;
            let implied = gi.inverse()?.compose(gj);
            Ok(EdgeResidual {
                a: i,
                b: j,
                rotation_deg: implied.rotation_angle_to(t).to_degrees(),
                translation: (implied.translation - t.translation).norm(),
                scale_rel: (implied.scale / t.scale - 1.0).abs(),
            })
        })
        .collect()
}

/// Nodes plus overlap edges; always one connected component.
#[derive(Clone, Debug)]
pub struct SdfGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
}

impl SdfGraph {
    pub fn new(mut nodes: Vec<GraphNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("graph needs at least one node"));
        }
        nodes.sort_by_key(|n| n.id);
        let edges = build_edges(nodes.iter().map(|n| (n.id, &n.image_ids)))?;
        Ok(Self { nodes, edges })
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&GraphNode> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id.0))
    }

    pub fn edge(&self, a: NodeId, b: NodeId) -> Option<&GraphEdge> {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        self.edges.iter().find(|e| e.a == a && e.b == b)
    }

    pub fn minimum_spanning_tree(&self) -> Result<Vec<GraphEdge>> {
        minimum_spanning_tree(self.nodes.len(), &self.edges)
    }

    /// Sets every node's `to_global` from the tree transforms.
    pub fn propagate(
        &mut self,
        tree: &[GraphEdge],
        root: NodeId,
        edge_transforms: &EdgeTransforms,
    ) -> Result<()> {
        let frames = propagate_transforms(self.nodes.len(), tree, root, edge_transforms)?;
        for (n, t) in self.nodes.iter_mut().zip(frames) {
            n.to_global = t;
        }
        Ok(())
    }

    /// Corners of every node domain mapped into the global frame.
    pub fn global_corners(&self) -> Vec<[Vec3; 8]> {
        self.nodes
            .iter()
            .map(|n| n.domain().corners().map(|c| n.to_global.apply(&c)))
            .collect()
    }
}
