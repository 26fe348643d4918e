pub mod blend;
pub mod error;
pub mod fields;
pub mod graph;
pub mod manifest;
pub mod mesh;
pub mod pipeline;
pub mod register;
pub mod render;
pub mod scene;
pub mod transform;

pub use error::{Error, Result};
