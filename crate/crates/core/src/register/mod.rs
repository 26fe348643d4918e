//! Pairwise registration of two node frames through their shared images.

mod init;
mod metrics;
mod refine;

pub use init::{init_registration, init_registration_with, InitOptions};
pub use metrics::{masked_psnr, psnr, ssim, PSNR_CAP};
pub use refine::{
    refine_registration, write_trace_csv, EarlyStop, LossNorm, RefineConfig, RefineOutcome,
    TraceRow,
};

use crate::error::{Error, Result};
use crate::fields::NodeField;
use crate::render::{ray_for_pixel, render_image, CameraIntrinsics, CameraPose, RenderConfig, RenderedImage};
use crate::transform::SimilarityTransform;

/// Re-expresses a node-`i` camera pose in node `j` through `t` (node `j` to
/// node `i`): `[R | T] · [[R_t, T_t], [0, s]] = [R R_t | R T_t + s T]`.
///
/// The second value is the homogeneous scale `s`: the returned extrinsics
/// map a node-`j` point to `s` times its node-`i` camera coordinates, which
/// leaves ray directions and therefore rendered pixels unchanged.
pub fn transform_pose(pose: &CameraPose, t: &SimilarityTransform) -> (CameraPose, f64) {
    (pose_times(pose, t), t.scale)
}

pub(crate) fn pose_times(pose: &CameraPose, t: &SimilarityTransform) -> CameraPose {
    CameraPose {
        rotation: pose.rotation * t.rotation,
        translation: pose.rotation * t.translation + pose.translation * t.scale,
    }
}

/// One image seen by both nodes of an edge.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedView {
    pub image_id: String,
    pub pose_i: CameraPose,
    pub pose_j: CameraPose,
    pub intrinsics: CameraIntrinsics,
}

/// Pixels of one shared view where both nodes see the surface.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapMask {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl OverlapMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(k, _)| (k % self.width, k / self.width))
    }
}

/// A pixel is kept when node `i` at `P_i` and node `j` at `P_i · t0` both
/// reach opacity above `tau` and each node's expected surface point lies
/// inside the other node's box (mapped through `t0`). The second test drops
/// pixels where one node's first hit lies beyond the other's box, so the two
/// renders show different surfaces there.
pub fn compute_masks(
    field_i: &NodeField,
    field_j: &NodeField,
    views: &[SharedView],
    t0: &SimilarityTransform,
    cfg: &RenderConfig,
    tau: f64,
) -> Result<Vec<OverlapMask>> {
    let mut masks = Vec::with_capacity(views.len());
    for v in views {
        let a = render_image(field_i, &v.pose_i, &v.intrinsics, cfg)?;
        let b = render_transformed(field_j, v, t0, cfg)?;
        let (pose_j, _) = transform_pose(&v.pose_i, t0);
        let w = v.intrinsics.width;
        let bits = (0..v.intrinsics.pixel_count())
            .map(|k| {
                if !(a.opacity[k] > tau && b.opacity[k] > tau) {
                    return false;
                }
                let (px, py) = ((k % w) as f64, (k / w) as f64);
                let xi = ray_for_pixel(&v.pose_i, &v.intrinsics, px, py).at(a.depth[k]);
                let xj = ray_for_pixel(&pose_j, &v.intrinsics, px, py).at(b.depth[k]);
                field_j.domain().contains_strict(&t0.apply_inverse(&xi))
                    && field_i.domain().contains_strict(&t0.apply(&xj))
            })
            .collect();
        masks.push(OverlapMask {
            image_id: v.image_id.clone(),
            width: v.intrinsics.width,
            height: v.intrinsics.height,
            bits,
        });
    }
    if masks.iter().all(|m| m.count() == 0) {
        return Err(Error::EmptyMasks);
    }
    Ok(masks)
}

/// Node `j` seen from the node-`i` camera carried over by `t`.
pub fn render_transformed(
    field_j: &NodeField,
    view: &SharedView,
    t: &SimilarityTransform,
    cfg: &RenderConfig,
) -> Result<RenderedImage> {
    let (pose, _) = transform_pose(&view.pose_i, t);
    render_image(field_j, &pose, &view.intrinsics, cfg)
}

/// Masked PSNR of an alignment, pooled over all shared views.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentQuality {
    /// Node `j` at its own pose `P_j` against node `i` at `P_i`.
    pub target: f64,
    /// Node `j` at `P_i · t` against node `i` at `P_i`.
    pub aligned: f64,
}

pub fn alignment_quality(
    field_i: &NodeField,
    field_j: &NodeField,
    views: &[SharedView],
    masks: &[OverlapMask],
    t: &SimilarityTransform,
    cfg: &RenderConfig,
) -> Result<AlignmentQuality> {
    let mut reference = Vec::new();
    let mut target = Vec::new();
    let mut aligned = Vec::new();
    for v in views {
        reference.push(render_image(field_i, &v.pose_i, &v.intrinsics, cfg)?);
        target.push(render_image(field_j, &v.pose_j, &v.intrinsics, cfg)?);
        aligned.push(render_transformed(field_j, v, t, cfg)?);
    }
    Ok(AlignmentQuality {
        target: masked_psnr(&target, &reference, masks)?,
        aligned: masked_psnr(&aligned, &reference, masks)?,
    })
}
