//! Similarity transforms in homogeneous form `H = [[R, T], [0, s]]`.
//!
//! A point maps by dehomogenizing `H · [x; 1]`, i.e. `apply(x) = (R x + T) / s`.
//! Matrix products compose point maps: `(a * b).apply(x) == a.apply(b.apply(x))`.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub scale: f64,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3, scale: f64) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
            scale,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn translation(v: Vec3) -> Self {
        Self {
            translation: v,
            ..Self::identity()
        }
    }

    /// Checks the rotation block is orthonormal with det +1 (to 1e-9) and the
    /// scale is positive.
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::NonInvertible(self.scale));
        }
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
        let det = r.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 || !self.translation.iter().all(|v| v.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "not a similarity transform (orthogonality defect {ortho:.2e}, det {det})"
            )));
        }
        Ok(())
    }

    pub fn is_invertible(&self) -> bool {
        self.scale > 0.0 && self.scale.is_finite()
    }

    pub fn to_homogeneous(&self) -> Mat4 {
        let mut h = Mat4::zeros();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        h[(3, 3)] = self.scale;
        h
    }

    /// Reads `[[R, T], [0, s]]` back; the bottom row's first three entries
    /// are ignored.
    pub fn from_homogeneous(h: &Mat4) -> Self {
        Self {
            rotation: h.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: h.fixed_view::<3, 1>(0, 3).into_owned(),
            scale: h[(3, 3)],
        }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        (self.rotation * x + self.translation) / self.scale
    }

    pub fn apply_inverse(&self, y: &Vec3) -> Vec3 {
        self.rotation.transpose() * (y * self.scale - self.translation)
    }

    /// Rotates (and scales) a direction without translating it.
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v / self.scale
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation * other.scale,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Result<SimilarityTransform> {
        if !self.is_invertible() {
            return Err(Error::NonInvertible(self.scale));
        }
        let rt = self.rotation.transpose();
        Ok(SimilarityTransform {
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
            scale: 1.0 / self.scale,
        })
    }

    /// Factor converting local distances into distances of the target frame.
    pub fn distance_scale(&self) -> f64 {
        1.0 / self.scale
    }

    pub fn max_entry_diff(&self, other: &SimilarityTransform) -> f64 {
        (self.to_homogeneous() - other.to_homogeneous()).abs().max()
    }

    /// Rotation angle of `R_a R_bᵀ` in radians.
    pub fn rotation_angle_to(&self, other: &SimilarityTransform) -> f64 {
        rotation_angle(&(self.rotation * other.rotation.transpose()))
    }
}

impl std::ops::Mul for SimilarityTransform {
    type Output = SimilarityTransform;

    fn mul(self, rhs: SimilarityTransform) -> SimilarityTransform {
        self.compose(&rhs)
    }
}

/// Angle of a rotation matrix, robust near 0 and π.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = 0.5
        * Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    s.atan2(c)
}

/// Nearest rotation in the Frobenius sense (orthogonal Procrustes, with the
/// determinant forced to +1).
pub fn project_to_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let d = (u * vt).determinant().signum();
    let fix = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    u * fix * vt
}

pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).into_inner()
}

/// Euler angles `(φ, θ, ψ)` with intrinsic Z–Y–X order:
/// `R = Rz(φ) · Ry(θ) · Rx(ψ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerZyx {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// Within this distance of |cos θ| = 0 the Z–Y–X decomposition is singular.
pub const GIMBAL_EPS: f64 = 1e-6;

impl EulerZyx {
    pub fn to_matrix(&self) -> Mat3 {
        let rz = Rotation3::from_axis_angle(&Vec3::z_axis(), self.yaw);
        let ry = Rotation3::from_axis_angle(&Vec3::y_axis(), self.pitch);
        let rx = Rotation3::from_axis_angle(&Vec3::x_axis(), self.roll);
        (rz * ry * rx).into_inner()
    }

    pub fn from_matrix(r: &Mat3) -> Self {
        let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        if pitch.cos().abs() < GIMBAL_EPS {
            log::warn!("euler decomposition near gimbal lock (pitch = {pitch:.6} rad)");
            // roll is folded into yaw
            let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
            return Self { yaw, pitch, roll: 0.0 };
        }
        Self {
            yaw: r[(1, 0)].atan2(r[(0, 0)]),
            pitch,
            roll: r[(2, 1)].atan2(r[(2, 2)]),
        }
    }

    pub fn near_gimbal_lock(&self) -> bool {
        self.pitch.cos().abs() < GIMBAL_EPS
    }
}

/// The seven-parameter form used by registration refinement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerPose7 {
    pub angles: EulerZyx,
    pub translation: Vec3,
    pub scale: f64,
}

impl EulerPose7 {
    pub fn from_transform(t: &SimilarityTransform) -> Self {
        Self {
            angles: EulerZyx::from_matrix(&t.rotation),
            translation: t.translation,
            scale: t.scale,
        }
    }

    pub fn to_transform(&self) -> Result<SimilarityTransform> {
        if !(self.scale > 0.0) {
            return Err(Error::InvalidScale(self.scale));
        }
        Ok(SimilarityTransform {
            rotation: self.angles.to_matrix(),
            translation: self.translation,
            scale: self.scale,
        })
    }

    pub fn to_array(&self) -> [f64; 7] {
        let t = self.translation;
        [
            self.angles.yaw,
            self.angles.pitch,
            self.angles.roll,
            t.x,
            t.y,
            t.z,
            self.scale,
        ]
    }

    pub fn from_array(a: &[f64; 7]) -> Self {
        Self {
            angles: EulerZyx {
                yaw: a[0],
                pitch: a[1],
                roll: a[2],
            },
            translation: Vec3::new(a[3], a[4], a[5]),
            scale: a[6],
        }
    }

    /// Additive update of all seven parameters.
    pub fn offset(&self, delta: &[f64; 7]) -> Self {
        let mut a = self.to_array();
        for (v, d) in a.iter_mut().zip(delta) {
            *v += d;
        }
        Self::from_array(&a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rot(axis: [f64; 3], angle: f64) -> Mat3 {
        axis_angle(&Vec3::from(axis), angle)
    }

    fn arb_transform() -> impl Strategy<Value = SimilarityTransform> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -3.0f64..3.0,
            prop::array::uniform3(-10.0f64..10.0),
            0.1f64..10.0,
        )
            .prop_filter("axis", |(a, ..)| Vec3::from(*a).norm() > 1e-3)
            .prop_map(|(a, ang, t, s)| SimilarityTransform {
                rotation: rot(a, ang),
                translation: Vec3::from(t),
                scale: s,
            })
    }

    #[test]
    fn scale_only_shrinks() {
        let t = SimilarityTransform {
            scale: 2.0,
            ..SimilarityTransform::identity()
        };
        assert_eq!(t.apply(&Vec3::new(1.0, 2.0, 4.0)), Vec3::new(0.5, 1.0, 2.0));
    }

    #[test]
    fn homogeneous_round_trip() {
        let t = SimilarityTransform::new(rot([0.0, 0.0, 1.0], 0.5), Vec3::new(1.0, 2.0, 3.0), 1.5)
            .unwrap();
        let h = t.to_homogeneous();
        assert_eq!(h[(3, 3)], 1.5);
        assert_eq!(h[(3, 0)], 0.0);
        assert_eq!(SimilarityTransform::from_homogeneous(&h), t);
    }

    #[test]
    fn validate_catches_bad_parts() {
        let mut t = SimilarityTransform::identity();
        t.scale = 0.0;
        assert!(matches!(t.validate(), Err(Error::NonInvertible(_))));
        assert!(t.inverse().is_err());
        let mut r = SimilarityTransform::identity();
        r.rotation[(0, 0)] = -1.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn euler_round_trip_and_order() {
        let e = EulerZyx {
            yaw: 0.3,
            pitch: -0.2,
            roll: 1.1,
        };
        let r = e.to_matrix();
        let expected = rot([0.0, 0.0, 1.0], 0.3) * rot([0.0, 1.0, 0.0], -0.2) * rot([1.0, 0.0, 0.0], 1.1);
        assert!((r - expected).abs().max() < 1e-15);
        let back = EulerZyx::from_matrix(&r);
        assert!((back.yaw - 0.3).abs() < 1e-12);
        assert!((back.pitch + 0.2).abs() < 1e-12);
        assert!((back.roll - 1.1).abs() < 1e-12);
    }

    #[test]
    fn gimbal_lock_still_reconstructs() {
        let e = EulerZyx {
            yaw: 0.4,
            pitch: std::f64::consts::FRAC_PI_2,
            roll: 0.1,
        };
        let back = EulerZyx::from_matrix(&e.to_matrix());
        assert!(back.near_gimbal_lock());
        assert!((back.to_matrix() - e.to_matrix()).abs().max() < 1e-7);
    }

    #[test]
    fn projection_fixes_reflections() {
        let m = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        let r = project_to_rotation(&m);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn product_is_composition(a in arb_transform(), b in arb_transform(), x in prop::array::uniform3(-5.0f64..5.0)) {
            let x = Vec3::from(x);
            let lhs = (a * b).apply(&x);
            let rhs = a.apply(&b.apply(&x));
            prop_assert!((lhs - rhs).norm() <= 1e-9 * (1.0 + rhs.norm()));
            let hm = a.to_homogeneous() * b.to_homogeneous();
            prop_assert!(((a * b).to_homogeneous() - hm).abs().max() <= 1e-9 * (1.0 + hm.abs().max()));
        }

        #[test]
        fn inverse_undoes(a in arb_transform(), x in prop::array::uniform3(-5.0f64..5.0)) {
            let x = Vec3::from(x);
            let inv = a.inverse().unwrap();
            prop_assert!((inv.apply(&a.apply(&x)) - x).norm() < 1e-9);
            prop_assert!((a.apply_inverse(&a.apply(&x)) - x).norm() < 1e-9);
            prop_assert!((a * inv).max_entry_diff(&SimilarityTransform::identity()) < 1e-9);
        }

        #[test]
        fn distances_scale_by_inverse_s(a in arb_transform(), x in prop::array::uniform3(-5.0f64..5.0), y in prop::array::uniform3(-5.0f64..5.0)) {
            let (x, y) = (Vec3::from(x), Vec3::from(y));
            let d = (a.apply(&x) - a.apply(&y)).norm();
            prop_assert!((d - (x - y).norm() * a.distance_scale()).abs() < 1e-9 * (1.0 + d));
        }
    }
}
