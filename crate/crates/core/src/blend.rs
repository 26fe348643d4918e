//! Global signed distance assembled from registered node fields.
//!
//! Every node covers the open interior of its local box, carried into the
//! global frame by its `to_global` similarity. Where several nodes cover a
//! point their distances are mixed with softmax weights on the inset depth,
//! so a node's weight fades to zero at its own boundary and the blended
//! field stays continuous across overlaps. The pointwise minimum is kept as
//! a baseline.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{Aabb, NodeField, Rgb, Vec3};
use crate::graph::{NodeId, SdfGraph};
use crate::transform::SimilarityTransform;

pub const DEFAULT_BETA: f64 = 10.0;
pub const DEFAULT_OUTSIDE_VALUE: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BlendMode {
    #[default]
    Softmax,
    MinUnion,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlendConfig {
    pub beta: f64,
    pub mode: BlendMode,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            mode: BlendMode::Softmax,
        }
    }
}

impl BlendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Depth of `x` inside `domain`: the distance to the nearest face, zero on
/// and outside the boundary.
pub fn inset_distance(domain: &Aabb, x: &Vec3) -> f64 {
    let mut d = f64::INFINITY;
    for k in 0..3 {
        d = d.min(x[k] - domain.lo[k]).min(domain.hi[k] - x[k]);
    }
    d.max(0.0)
}

/// Normalized `e^{β d_k}` over the covering nodes.
pub fn blend_weights(insets: &[f64], beta: f64) -> Vec<f64> {
    let max = insets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = insets.iter().map(|d| (beta * (d - max)).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

#[derive(Clone, Debug)]
pub struct BlendEntry {
    pub node: NodeId,
    pub field: Arc<NodeField>,
    to_global: SimilarityTransform,
    /// Global box around the mapped local domain, for fast rejection.
    bounds: Aabb,
}

impl BlendEntry {
    pub fn new(node: NodeId, field: Arc<NodeField>, to_global: SimilarityTransform) -> Result<Self> {
        to_global.validate()?;
        let corners = field.domain().corners().map(|c| to_global.apply(&c));
        let bounds = Aabb::bounding(corners).ok_or(Error::Empty("node domain"))?;
        Ok(Self {
            node,
            field,
            to_global,
            bounds,
        })
    }

    pub fn domain(&self) -> &Aabb {
        self.field.domain()
    }

    pub fn to_global(&self) -> &SimilarityTransform {
        &self.to_global
    }

    /// Global box enclosing the node's mapped domain.
    pub fn global_bounds(&self) -> &Aabb {
        &self.bounds
    }

    /// Local coordinates of `y` when the node covers it.
    fn cover(&self, y: &Vec3) -> Option<Vec3> {
        if !self.bounds.contains(y) {
            return None;
        }
        let x = self.to_global.apply_inverse(y);
        self.domain().contains_strict(&x).then_some(x)
    }
}

/// Scale-corrected samples of every node covering one point.
struct Cover {
    values: Vec<f64>,
    insets: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GlobalField {
    entries: Vec<BlendEntry>,
    config: BlendConfig,
    outside_value: f64,
}

impl GlobalField {
    pub fn new(entries: Vec<BlendEntry>, config: BlendConfig) -> Result<Self> {
        config.validate()?;
        if entries.is_empty() {
            return Err(Error::Empty("global field entries"));
        }
        Ok(Self {
            entries,
            config,
            outside_value: DEFAULT_OUTSIDE_VALUE,
        })
    }

    /// One entry per graph node at its current `to_global`.
    pub fn from_graph(graph: &SdfGraph, config: BlendConfig) -> Result<Self> {
        let entries = graph
            .nodes()
            .iter()
            .map(|n| BlendEntry::new(n.id, n.field.clone(), n.to_global))
            .collect::<Result<_>>()?;
        Self::new(entries, config)
    }

    pub fn with_outside_value(mut self, v: f64) -> Self {
        self.outside_value = v;
        self
    }

    pub fn with_config(mut self, config: BlendConfig) -> Result<Self> {
        config.validate()?;
        self.config = config;
        Ok(self)
    }

    pub fn entries(&self) -> &[BlendEntry] {
        &self.entries
    }

    pub fn config(&self) -> &BlendConfig {
        &self.config
    }

    pub fn outside_value(&self) -> f64 {
        self.outside_value
    }

    /// Union of the entries' global boxes.
    pub fn bounds(&self) -> Aabb {
        let pts = self.entries.iter().flat_map(|e| [e.bounds.lo, e.bounds.hi]);
        Aabb::bounding(pts).expect("entries are non-empty")
    }

    fn cover(&self, y: &Vec3) -> Cover {
        let mut c = Cover {
            values: Vec::new(),
            insets: Vec::new(),
        };
        for e in &self.entries {
            if let Some(x) = e.cover(y) {
                let k = e.to_global.distance_scale();
                c.values.push(k * e.field.sdf.eval(&x));
                c.insets.push(k * inset_distance(e.domain(), &x));
            }
        }
        c
    }

    /// Number of nodes covering `y`.
    pub fn coverage(&self, y: &Vec3) -> usize {
        self.entries.iter().filter(|e| e.cover(y).is_some()).count()
    }

    /// Value under the configured mode.
    pub fn eval(&self, y: &Vec3) -> f64 {
        match self.config.mode {
            BlendMode::Softmax => self.eval_softmax(y),
            BlendMode::MinUnion => self.eval_min_union(y),
        }
    }

    pub fn eval_softmax(&self, y: &Vec3) -> f64 {
        let c = self.cover(y);
        match c.values.len() {
            0 => self.outside_value,
            1 => c.values[0],
            _ => blend_weights(&c.insets, self.config.beta)
                .iter()
                .zip(&c.values)
                .map(|(w, f)| w * f)
                .sum(),
        }
    }

    pub fn eval_min_union(&self, y: &Vec3) -> f64 {
        let c = self.cover(y);
        if c.values.is_empty() {
            return self.outside_value;
        }
        c.values.into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Softmax weights of the covering nodes at `y`, by node id.
    pub fn weights(&self, y: &Vec3) -> Vec<(NodeId, f64)> {
        let covering: Vec<(NodeId, f64)> = self
            .entries
            .iter()
            .filter_map(|e| {
                e.cover(y)
                    .map(|x| (e.node, e.to_global.distance_scale() * inset_distance(e.domain(), &x)))
            })
            .collect();
        let insets: Vec<f64> = covering.iter().map(|c| c.1).collect();
        let w = blend_weights(&insets, self.config.beta);
        covering.iter().zip(w).map(|(c, w)| (c.0, w)).collect()
    }

    /// Softmax-weighted node colors at `y`, in either mode; `None` outside
    /// every node.
    pub fn color(&self, y: &Vec3) -> Option<Rgb> {
        let mut colors = Vec::new();
        let mut insets = Vec::new();
        for e in &self.entries {
            if let Some(x) = e.cover(y) {
                colors.push(e.field.color.eval(&x));
                insets.push(e.to_global.distance_scale() * inset_distance(e.domain(), &x));
            }
        }
        if colors.is_empty() {
            return None;
        }
        let w = blend_weights(&insets, self.config.beta);
        Some(colors.iter().zip(w).map(|(c, w)| c * w).sum())
    }

    /// Copy with `node`'s transform replaced by `delta ∘ to_global`.
    pub fn edit_node(&self, node: NodeId, delta: &SimilarityTransform) -> Result<GlobalField> {
        delta.validate()?;
        let mut out = self.clone();
        let entry = out
            .entries
            .iter_mut()
            .find(|e| e.node == node)
            .ok_or(Error::UnknownNode(node.0))?;
        *entry = BlendEntry::new(node, entry.field.clone(), delta.compose(&entry.to_global))?;
        Ok(out)
    }
}

impl crate::fields::SignedDistance for GlobalField {
    fn distance(&self, p: &Vec3) -> f64 {
        self.eval(p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeamProfile {
    pub max_jump: f64,
    /// Midpoint between the two samples with the largest jump.
    pub at: Vec3,
    /// `(t, value)` with `t ∈ [0, 1]` along the segment.
    pub samples: Vec<(f64, f64)>,
}

/// Samples `f` at `n` evenly spaced points from `a` to `b` and reports the
/// largest difference between neighbors.
pub fn seam_profile(f: impl Fn(&Vec3) -> f64, a: &Vec3, b: &Vec3, n: usize) -> Result<SeamProfile> {
    if n < 2 {
        return Err(Error::InvalidArgument("seam profile needs at least 2 samples".into()));
    }
    let point = |t: f64| a + (b - a) * t;
    let samples: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let t = k as f64 / (n - 1) as f64;
            (t, f(&point(t)))
        })
        .collect();
    let mut max_jump = 0.0;
    let mut at = *a;
    for w in samples.windows(2) {
        let jump = (w[1].1 - w[0].1).abs();
        if jump > max_jump {
            max_jump = jump;
            at = point(0.5 * (w[0].0 + w[1].0));
        }
    }
    Ok(SeamProfile {
        max_jump,
        at,
        samples,
    })
}

/// Two nodes holding parallel planes `z = 0` and `z = delta`, overlapping on
/// `x ∈ [-margin, margin]` inside `[-1, 1]^3`. Exact for trilinear grids.
pub fn conflicting_planes(delta: f64, margin: f64, config: BlendConfig) -> Result<GlobalField> {
    use crate::fields::{ColorGrid, SdfGrid};
    let make = |lo_x: f64, hi_x: f64, offset: f64| -> Result<Arc<NodeField>> {
        let domain = Aabb::new(Vec3::new(lo_x, -1.0, -1.0), Vec3::new(hi_x, 1.0, 1.0))?;
        let dims = [9, 3, 5];
        let sdf = SdfGrid::from_fn(domain, dims, |p| p.z - offset)?;
        let color = ColorGrid::constant(domain, dims, Vec3::repeat(1.0))?;
        Ok(Arc::new(NodeField::new(sdf, color)?))
    };
    let id = SimilarityTransform::identity();
    GlobalField::new(
        vec![
            BlendEntry::new(NodeId(0), make(-1.0, margin, 0.0)?, id)?,
            BlendEntry::new(NodeId(1), make(-margin, 1.0, delta)?, id)?,
        ],
        config,
    )
}
