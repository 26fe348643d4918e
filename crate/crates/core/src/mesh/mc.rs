use std::collections::HashMap;

use rayon::prelude::*;

use super::tables::{EDGE_TABLE, TRIANGLE_TABLE};
use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::fields::{Aabb, SignedDistance, Vec3};

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extracts the `iso` level set of `field` over `region`, sampled on a
/// lattice with `resolution[a]` vertices along axis `a`.
///
/// Vertices on a lattice edge are shared by every cell touching that edge
/// and numbered in first-use order over cells scanned x-fastest, so the
/// output depends only on the sampled values. Triangles face the side where
/// the field exceeds `iso`.
pub fn marching_cubes<F>(field: &F, region: &Aabb, resolution: [usize; 3], iso: f64) -> Result<TriangleMesh>
where
    F: SignedDistance + ?Sized,
{
    if resolution.iter().any(|n| *n < 2) {
        return Err(Error::InvalidDims(resolution));
    }
    let [nx, ny, nz] = resolution;
    let coord = |axis: usize, i: usize| -> f64 {
        let n = resolution[axis] - 1;
        if i == n {
            region.hi[axis]
        } else {
            region.lo[axis] + (region.hi[axis] - region.lo[axis]) * (i as f64 / n as f64)
        }
    };
    let position = |idx: usize| -> Vec3 {
        Vec3::new(coord(0, idx % nx), coord(1, (idx / nx) % ny), coord(2, idx / (nx * ny)))
    };
    let values: Vec<f64> = (0..nx * ny * nz)
        .into_par_iter()
        .map(|idx| field.distance(&position(idx)))
        .collect();

    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let ids: [usize; 8] = CORNERS.map(|c| (i + c[0]) + nx * ((j + c[1]) + ny * (k + c[2])));
                let mut case = 0usize;
                for (c, id) in ids.iter().enumerate() {
                    if values[*id] < iso {
                        case |= 1 << c;
                    }
                }
                let crossed = EDGE_TABLE[case];
                if crossed == 0 {
                    continue;
                }
                let mut local = [0u32; 12];
                for (e, [a, b]) in EDGES.iter().enumerate() {
                    if crossed & (1 << e) == 0 {
                        continue;
                    }
                    let (lo, hi) = (ids[*a].min(ids[*b]), ids[*a].max(ids[*b]));
                    local[e] = *edge_vertex.entry((lo, hi)).or_insert_with(|| {
                        let (va, vb) = (values[lo], values[hi]);
                        let t = (iso - va) / (vb - va);
                        let (pa, pb) = (position(lo), position(hi));
                        vertices.push(pa + (pb - pa) * t);
                        (vertices.len() - 1) as u32
                    });
                }
                for tri in TRIANGLE_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                    // the table winds toward the low side; reverse for outward faces
                    triangles.push([local[tri[0] as usize], local[tri[2] as usize], local[tri[1] as usize]]);
                }
            }
        }
    }
    TriangleMesh::new(vertices, triangles, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AnalyticSdf, Primitive};

    fn cube() -> Aabb {
        Aabb::cube(1.0).unwrap()
    }

    #[test]
    fn empty_and_bad_resolution() {
        let m = marching_cubes(&|_: &Vec3| 1.0, &cube(), [8; 3], 0.0).unwrap();
        assert!(m.is_empty() && m.vertices.is_empty());
        assert!(marching_cubes(&|_: &Vec3| 1.0, &cube(), [1, 4, 4], 0.0).is_err());
    }

    #[test]
    fn plane_is_exact() {
        let m = marching_cubes(&|p: &Vec3| p.z - 0.25, &cube(), [17, 13, 20], 0.0).unwrap();
        assert!(!m.is_empty());
        for v in &m.vertices {
            assert!((v.z - 0.25).abs() < 1e-9);
        }
        // normals point to +z, where the field is positive
        for t in 0..m.triangles.len() {
            let [a, b, c] = m.corners(t);
            assert!((b - a).cross(&(c - a)).z > 0.0);
        }
    }

    #[test]
    fn sphere_vertices_watertight_and_outward() {
        let s = AnalyticSdf::single(Primitive::sphere(Vec3::zeros(), 0.5).unwrap());
        let m = marching_cubes(&s, &cube(), [64; 3], 0.0).unwrap();
        let diag = 3f64.sqrt() * 2.0 / 63.0;
        for v in &m.vertices {
            assert!((v.norm() - 0.5).abs() <= diag);
        }
        assert!(m.is_watertight());
        assert_eq!(m.components().len(), 1);
        let vol = m.signed_volume();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        assert!((vol - exact).abs() < 0.02 * exact, "{vol} vs {exact}");
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let s = AnalyticSdf::single(Primitive::cuboid(Vec3::new(0.1, 0.0, -0.1), Vec3::new(0.4, 0.3, 0.5)).unwrap());
        let a = marching_cubes(&s, &cube(), [23, 19, 31], 0.0).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| marching_cubes(&s, &cube(), [23, 19, 31], 0.0).unwrap());
        assert_eq!(a, b);
    }
}
