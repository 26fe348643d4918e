//! Surface extraction, mesh files, and geometric accuracy metrics.

mod io;
mod kdtree;
mod mc;
mod metrics;
mod tables;

pub use io::{decode_ply, encode_obj, encode_ply, export_obj, export_ply, parse_obj, read_obj, read_ply};
pub use kdtree::KdTree;
pub use mc::marching_cubes;
pub use metrics::{
    chamfer, chamfer_with, f_score, mean_abs_sdf, sample_surface, ChamferOptions, MetricReport,
};

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{Aabb, Rgb, Vec3};

/// Indexed triangle mesh; counter-clockwise triangles face outward.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Option<Vec<Rgb>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>, colors: Option<Vec<Rgb>>) -> Result<Self> {
        let m = Self {
            vertices,
            triangles,
            colors,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (k, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|i| *i as usize >= n) {
                return Err(Error::InvalidArgument(format!("triangle {k} indexes past {n} vertices")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::InvalidArgument(format!("triangle {k} repeats a vertex")));
            }
        }
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(Error::DimensionMismatch(format!("{} colors for {n} vertices", c.len())));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    pub fn triangle_areas(&self) -> Vec<f64> {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .collect()
    }

    pub fn area(&self) -> f64 {
        self.triangle_areas().iter().sum()
    }

    /// Volume enclosed by a closed, outward-oriented mesh.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        let used = self.triangles.iter().flatten().map(|i| self.vertices[*i as usize]);
        let b = Aabb::bounding(used)?;
        Some(b)
    }

    /// How many triangles use each undirected edge.
    pub fn edge_uses(&self) -> BTreeMap<(u32, u32), usize> {
        let mut uses = BTreeMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *uses.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        uses
    }

    /// Every edge shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.is_empty() && self.edge_uses().values().all(|c| *c == 2)
    }

    /// Triangle sets connected through shared vertices, ordered by their
    /// smallest triangle index.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for t in &self.triangles {
            let r0 = find(&mut parent, t[0] as usize);
            for v in &t[1..] {
                let r = find(&mut parent, *v as usize);
                if r != r0 {
                    parent[r] = r0;
                }
            }
        }
        let mut by_root: BTreeMap<usize, usize> = BTreeMap::new();
        let mut out: Vec<Vec<usize>> = Vec::new();
        for (k, t) in self.triangles.iter().enumerate() {
            let root = find(&mut parent, t[0] as usize);
            let slot = *by_root.entry(root).or_insert_with(|| {
                out.push(Vec::new());
                out.len() - 1
            });
            out[slot].push(k);
        }
        out
    }

    /// Area-weighted centroid of a set of triangles.
    pub fn centroid_of(&self, triangles: &[usize]) -> Option<Vec3> {
        let mut area = 0.0;
        let mut sum = Vec3::zeros();
        for &t in triangles {
            let [a, b, c] = self.corners(t);
            let w = 0.5 * (b - a).cross(&(c - a)).norm();
            sum += (a + b + c) * (w / 3.0);
            area += w;
        }
        (area > 0.0).then(|| sum / area)
    }

    pub fn centroid(&self) -> Option<Vec3> {
        self.centroid_of(&(0..self.triangles.len()).collect::<Vec<_>>())
    }

    pub fn translated(&self, v: &Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|p| p + v).collect(),
            ..self.clone()
        }
    }

    pub fn flip_winding(&mut self) {
        for t in &mut self.triangles {
            t.swap(1, 2);
        }
    }

    /// Per-vertex colors from a color function.
    pub fn colorize(&mut self, f: impl Fn(&Vec3) -> Rgb + Sync) {
        self.colors = Some(self.vertices.par_iter().map(&f).collect());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> TriangleMesh {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        TriangleMesh::new(v, vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]], None).unwrap()
    }

    #[test]
    fn validation() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 3]], None).is_err());
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 1]], None).is_err());
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 2]], Some(vec![Rgb::zeros()])).is_err());
        assert!(TriangleMesh::new(v, vec![[0, 1, 2]], None).is_ok());
    }

    #[test]
    fn tetra_geometry() {
        let t = tetra();
        assert!((t.signed_volume() - 1.0 / 6.0).abs() < 1e-15);
        assert!(t.is_watertight());
        assert_eq!(t.components(), vec![vec![0, 1, 2, 3]]);
        let moved = t.translated(&Vec3::new(1.0, 2.0, 3.0));
        let d = moved.centroid().unwrap() - t.centroid().unwrap();
        assert!((d - Vec3::new(1.0, 2.0, 3.0)).norm() < 1e-14);
    }

    #[test]
    fn separate_components() {
        let mut a = tetra();
        let b = tetra().translated(&Vec3::repeat(5.0));
        let off = a.vertices.len() as u32;
        a.vertices.extend(b.vertices);
        a.triangles.extend(b.triangles.iter().map(|t| t.map(|i| i + off)));
        let c = a.components();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1], vec![4, 5, 6, 7]);
        let mut open = tetra();
        open.triangles.pop();
        assert!(!open.is_watertight());
    }
}
