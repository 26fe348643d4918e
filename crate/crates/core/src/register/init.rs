use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::render::CameraPose;
use crate::transform::{project_to_rotation, Mat3, SimilarityTransform, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitOptions {
    /// Singular values below `rank_tol · σ_max` count as zero.
    pub rank_tol: f64,
    /// Largest accepted Frobenius distance between the least-squares 3×3
    /// block and its projection onto SO(3), relative to `‖R‖_F = √3`.
    pub max_rotation_residual: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            rank_tol: 1e-10,
            max_rotation_residual: 0.1,
        }
    }
}

/// Closed-form similarity between two node frames from the camera poses of
/// their shared images.
///
/// Each pair `(P_i, P_j)` holds the same image's w2c pose in node `i` and in
/// node `j`. Stacking `[R_i | T_i] · H = [R_j | T_j]` over all pairs gives an
/// overdetermined linear system in `H = [[R, T], [0, s]]`. The rotation
/// columns are solved with a zero bottom entry, the last column for `(T, s)`
/// jointly, and the 3×3 block is then projected onto SO(3).
///
/// The result maps node-`j` points into node `i`.
pub fn init_registration(pairs: &[(CameraPose, CameraPose)]) -> Result<SimilarityTransform> {
    init_registration_with(pairs, &InitOptions::default())
}

pub fn init_registration_with(
    pairs: &[(CameraPose, CameraPose)],
    opts: &InitOptions,
) -> Result<SimilarityTransform> {
    if pairs.len() < 2 {
        return Err(Error::Underdetermined(pairs.len()));
    }
    let rows = 3 * pairs.len();
    let mut a = DMatrix::<f64>::zeros(rows, 4);
    let mut rhs = DMatrix::<f64>::zeros(rows, 4);
    for (h, (pi, pj)) in pairs.iter().enumerate() {
        let r0 = 3 * h;
        a.view_mut((r0, 0), (3, 3)).copy_from(&pi.rotation);
        a.view_mut((r0, 3), (3, 1)).copy_from(&pi.translation);
        rhs.view_mut((r0, 0), (3, 3)).copy_from(&pj.rotation);
        rhs.view_mut((r0, 3), (3, 1)).copy_from(&pj.translation);
    }

    let full = a.clone().svd(true, true);
    let sigma_max = full.singular_values.max();
    let rank = full
        .singular_values
        .iter()
        .filter(|s| **s > opts.rank_tol * sigma_max)
        .count();
    if rank < 4 {
        return Err(Error::DegeneratePoses(rank));
    }

    // rotation columns: bottom entry pinned to zero, so only the R_i block
    let rot_block = a.columns(0, 3).into_owned();
    let rot_svd = rot_block.svd(true, true);
    let mut block = Mat3::zeros();
    for c in 0..3 {
        let col: DVector<f64> = rhs.column(c).into_owned();
        let x = rot_svd
            .solve(&col, opts.rank_tol * sigma_max)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        block.set_column(c, &Vec3::new(x[0], x[1], x[2]));
    }
    // last column: [T; s]
    let col: DVector<f64> = rhs.column(3).into_owned();
    let ts = full
        .solve(&col, opts.rank_tol * sigma_max)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let translation = Vec3::new(ts[0], ts[1], ts[2]);
    let scale = ts[3];
    if !(scale > 0.0) {
        return Err(Error::InvalidScale(scale));
    }

    let rotation = project_to_rotation(&block);
    let residual = (block - rotation).norm() / 3f64.sqrt();
    if residual > opts.max_rotation_residual {
        return Err(Error::InconsistentPoses(residual));
    }
    Ok(SimilarityTransform {
        rotation,
        translation,
        scale,
    })
}
