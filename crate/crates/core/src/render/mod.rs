//! Volume rendering of node fields from pinhole cameras.

mod camera;
pub mod image;
mod volume;

pub use camera::{ray_for_pixel, CameraIntrinsics, CameraPose, Ray};
pub use volume::{
    logistic_cdf, neus_alpha, ray_samples, render_image, render_ray, RaySamples, RenderConfig,
    RenderResult, RenderedImage,
};
