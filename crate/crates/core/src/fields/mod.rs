//! Bounded signed distance and color fields.
//!
//! Analytic primitives provide ground truth; dense vertex-centered grids with
//! trilinear interpolation stand in for a trained local field. Everything
//! downstream (rendering, registration, blending) only ever asks for point
//! queries, so the two are interchangeable behind [`SignedDistance`].

mod aabb;
mod analytic;
mod grid;
mod io;

pub use aabb::Aabb;
pub use analytic::{AnalyticSdf, Colorizer, Primitive};
pub use grid::{bake, ColorGrid, NodeField, Noise, SdfGrid};
pub use io::{decode_grid, encode_grid, read_grid, write_grid, GRID_MAGIC, GRID_VERSION};

use nalgebra::Vector3;

pub type Vec3 = Vector3<f64>;
/// Linear RGB, channels nominally in [0, 1].
pub type Rgb = Vector3<f64>;

/// Anything that can be queried for a signed distance at a point.
pub trait SignedDistance: Sync {
    fn distance(&self, p: &Vec3) -> f64;
}

impl<F> SignedDistance for F
where
    F: Fn(&Vec3) -> f64 + Sync,
{
    fn distance(&self, p: &Vec3) -> f64 {
        self(p)
    }
}
