//! Pinhole camera model, rigid transforms and the per-pixel warping relations.
//!
//! Pixel convention: `u` is the column (x, left to right) and `v` is the row
//! (y, top to bottom). Pixel centers sit at integer coordinates. Stereo
//! disparity is horizontal, i.e. along `u`.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

/// Below this rotation angle the Rodrigues coefficients use their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Pinhole intrinsics in pixels: focal lengths and principal point, zero skew.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics<T = f64> {
    pub fx: T,
    pub fy: T,
    pub x0: T,
    pub y0: T,
}

impl Intrinsics<f64> {
    pub fn new(fx: f64, fy: f64, x0: f64, y0: f64) -> Result<Self> {
        let k = Intrinsics { fx, fy, x0, y0 };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0) || !(self.fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if ![self.fx, self.fy, self.x0, self.y0].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidIntrinsics("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Checks the principal point lies inside a `width`×`height` image.
    pub fn validate_for(&self, width: usize, height: usize) -> Result<()> {
        self.validate()?;
        if !(0.0..width as f64).contains(&self.x0) || !(0.0..height as f64).contains(&self.y0) {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.x0, self.y0, width, height
            )));
        }
        Ok(())
    }

    pub fn to_matrix(&self) -> Result<Matrix3<f64>> {
        self.validate()?;
        Ok(Matrix3::new(
            self.fx, 0.0, self.x0, //
            0.0, self.fy, self.y0, //
            0.0, 0.0, 1.0,
        ))
    }

    /// Closed-form inverse of [`Intrinsics::to_matrix`].
    pub fn inverse_matrix(&self) -> Result<Matrix3<f64>> {
        self.validate()?;
        Ok(Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.x0 / self.fx,
            0.0,
            1.0 / self.fy,
            -self.y0 / self.fy,
            0.0,
            0.0,
            1.0,
        ))
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.fx, self.fy, self.x0, self.y0]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Intrinsics {
            fx: a[0],
            fy: a[1],
            x0: a[2],
            y0: a[3],
        }
    }
}

impl<T: Scalar> Intrinsics<T> {
    pub fn lift(k: &Intrinsics<f64>) -> Self {
        Intrinsics {
            fx: T::constant(k.fx),
            fy: T::constant(k.fy),
            x0: T::constant(k.x0),
            y0: T::constant(k.y0),
        }
    }

    pub fn values(&self) -> Intrinsics<f64> {
        Intrinsics {
            fx: self.fx.value(),
            fy: self.fy.value(),
            x0: self.x0.value(),
            y0: self.y0.value(),
        }
    }
}

/// Continuous pixel position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Pixel { u, v }
    }
}

/// Rigid transform `x ↦ R(rot)·x + trans`, rotation stored as an axis-angle vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSE3<T = f64> {
    pub rot: [T; 3],
    pub trans: [T; 3],
}

impl Default for PoseSE3<f64> {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3<f64> {
    pub fn identity() -> Self {
        PoseSE3 {
            rot: [0.0; 3],
            trans: [0.0; 3],
        }
    }

    pub fn new(rot: [f64; 3], trans: [f64; 3]) -> Self {
        PoseSE3 { rot, trans }
    }

    pub fn from_translation(trans: [f64; 3]) -> Self {
        PoseSE3 { rot: [0.0; 3], trans }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = rodrigues(&self.rot);
        Matrix3::from_fn(|i, j| r[i][j])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.trans)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation());
        m
    }

    /// Builds a pose from a rotation matrix (assumed orthonormal) and translation.
    pub fn from_parts(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        let rot = rotation_log(rotation);
        PoseSE3 {
            rot: [rot.x, rot.y, rot.z],
            trans: [translation.x, translation.y, translation.z],
        }
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * x + self.translation()
    }

    pub fn rotation_angle(&self) -> f64 {
        Vector3::from(self.rot).norm()
    }
}

impl<T: Scalar> PoseSE3<T> {
    pub fn lift(p: &PoseSE3<f64>) -> Self {
        PoseSE3 {
            rot: p.rot.map(T::constant),
            trans: p.trans.map(T::constant),
        }
    }

    pub fn values(&self) -> PoseSE3<f64> {
        PoseSE3 {
            rot: self.rot.map(|x| x.value()),
            trans: self.trans.map(|x| x.value()),
        }
    }
}

/// Rotation matrix of an axis-angle vector (Rodrigues' formula).
///
/// `R = I + a·[r]× + b·[r]×²` with `a = sin θ / θ` and `b = (1 − cos θ) / θ²`.
/// Both coefficients are taken from their series in θ² for θ < [`SMALL_ANGLE`],
/// which keeps the map differentiable at the identity.
pub fn rodrigues<T: Scalar>(r: &[T; 3]) -> [[T; 3]; 3] {
    let [x, y, z] = *r;
    let theta2 = x * x + y * y + z * z;
    let (a, b) = if theta2.value() < SMALL_ANGLE * SMALL_ANGLE {
        (theta2 * (-1.0 / 6.0) + 1.0, theta2 * (-1.0 / 24.0) + 0.5)
    } else {
        let theta = theta2.sqrt();
        let half = (theta * 0.5).sin() / theta;
        (theta.sin() / theta, half * half * 2.0)
    };
    let one = T::constant(1.0);
    // [r]x^2 = r r^T - theta^2 I
    [
        [
            one + b * (x * x - theta2),
            -(a * z) + b * (x * y),
            a * y + b * (x * z),
        ],
        [
            a * z + b * (x * y),
            one + b * (y * y - theta2),
            -(a * x) + b * (y * z),
        ],
        [
            -(a * y) + b * (x * z),
            a * x + b * (y * z),
            one + b * (z * z - theta2),
        ],
    ]
}

pub fn to_matrix(k: &Intrinsics) -> Result<Matrix3<f64>> {
    k.to_matrix()
}

pub fn inverse_matrix(k: &Intrinsics) -> Result<Matrix3<f64>> {
    k.inverse_matrix()
}

/// Back-projects a pixel at depth `z` into camera coordinates.
pub fn unproject(p: Pixel, z: f64, k: &Intrinsics) -> Result<Vector3<f64>> {
    if !(z > 0.0) {
        return Err(Error::BehindCamera { depth: z });
    }
    k.validate()?;
    Ok(Vector3::new(
        (p.u - k.x0) / k.fx * z,
        (p.v - k.y0) / k.fy * z,
        z,
    ))
}

/// Projects a camera-frame point, returning the pixel and its depth.
pub fn project(x: &Vector3<f64>, k: &Intrinsics) -> Result<(Pixel, f64)> {
    if !(x.z > 0.0) {
        return Err(Error::BehindCamera { depth: x.z });
    }
    k.validate()?;
    Ok((
        Pixel::new(k.fx * x.x / x.z + k.x0, k.fy * x.y / x.z + k.y0),
        x.z,
    ))
}

/// Maps pixel `p` at depth `z` through `pose`, returning the pixel and depth in
/// the transformed view: `z'·p' = K·R·K⁻¹·z·p + K·t`.
pub fn warp_temporal(p: Pixel, z: f64, k: &Intrinsics, pose: &PoseSE3) -> Result<(Pixel, f64)> {
    k.validate()?;
    if !(z > 0.0) {
        return Err(Error::BehindCamera { depth: z });
    }
    let r = rodrigues(&pose.rot);
    let (u, v, zw) = warp_point(p.u, p.v, z, k, &r, &pose.trans);
    if !(zw > 0.0) {
        return Err(Error::BehindCamera { depth: zw });
    }
    Ok((Pixel::new(u, v), zw))
}

/// Generic core of [`warp_temporal`]; no validity checks.
#[inline]
pub fn warp_point<T: Scalar>(
    u: f64,
    v: f64,
    z: T,
    k: &Intrinsics<T>,
    r: &[[T; 3]; 3],
    t: &[T; 3],
) -> (T, T, T) {
    let x = k.x0.rsub(u) / k.fx * z;
    let y = k.y0.rsub(v) / k.fy * z;
    let xw = r[0][0] * x + r[0][1] * y + r[0][2] * z + t[0];
    let yw = r[1][0] * x + r[1][1] * y + r[1][2] * z + t[1];
    let zw = r[2][0] * x + r[2][1] * y + r[2][2] * z + t[2];
    (k.fx * xw / zw + k.x0, k.fy * yw / zw + k.y0, zw)
}

/// `z = B·fx / d`
pub fn disparity_to_depth(d: f64, baseline: f64, fx: f64) -> Result<f64> {
    check_stereo(baseline, fx)?;
    if d == 0.0 {
        return Err(Error::InfiniteDepth(d));
    }
    if !(d > 0.0) {
        return Err(Error::InvalidArgument(format!("disparity must be positive, got {d}")));
    }
    Ok(baseline * fx / d)
}

/// `d = B·fx / z`
pub fn depth_to_disparity(z: f64, baseline: f64, fx: f64) -> Result<f64> {
    check_stereo(baseline, fx)?;
    if !(z > 0.0) {
        return Err(Error::BehindCamera { depth: z });
    }
    Ok(baseline * fx / z)
}

fn check_stereo(baseline: f64, fx: f64) -> Result<()> {
    if !(baseline > 0.0) {
        return Err(Error::InvalidArgument(format!("baseline must be positive, got {baseline}")));
    }
    if !(fx > 0.0) {
        return Err(Error::InvalidIntrinsics(format!("fx must be positive, got {fx}")));
    }
    Ok(())
}

/// Axis-angle vector of a rotation matrix.
fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let w = 0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = w.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if c > 0.0 {
        // sin θ / θ → 1; w is already θ·axis to second order
        if s < 1e-300 {
            Vector3::zeros()
        } else {
            w * (theta / s)
        }
    } else if s > 1e-6 {
        w * (theta / s)
    } else {
        Rotation3::from_matrix(r).scaled_axis()
    }
}

/// `a ∘ b`: applies `b` first, then `a`.
pub fn pose_compose(a: &PoseSE3, b: &PoseSE3) -> PoseSE3 {
    let ra = a.rotation_matrix();
    let rot = ra * b.rotation_matrix();
    let trans = ra * b.translation() + a.translation();
    PoseSE3::from_parts(&rot, &trans)
}

pub fn pose_inverse(a: &PoseSE3) -> PoseSE3 {
    let rt = a.rotation_matrix().transpose();
    PoseSE3 {
        rot: a.rot.map(|x| -x),
        trans: {
            let t = -(rt * a.translation());
            [t.x, t.y, t.z]
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn k100() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap()
    }

    #[test]
    fn unit_intrinsics_give_identity() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(k.to_matrix().unwrap(), Matrix3::identity());
    }

    #[test]
    fn inverse_maps_principal_point_to_optical_axis() {
        let x = k100().inverse_matrix().unwrap() * Vector3::new(50.0, 50.0, 1.0);
        assert_eq!(x, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn matrix_layout_uses_table_values() {
        let k = Intrinsics::new(295.8, 489.2, 252.7, 124.9).unwrap();
        let m = k.to_matrix().unwrap();
        assert_eq!(m[(0, 0)], 295.8);
        assert_eq!(m[(1, 1)], 489.2);
        assert_eq!(m[(0, 2)], 252.7);
        assert_eq!(m[(1, 2)], 124.9);
        assert_eq!(m[(2, 2)], 1.0);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(1, 0)], 0.0);
        assert_eq!(m[(2, 0)], 0.0);
        assert_eq!(m[(2, 1)], 0.0);
        let prod = k.inverse_matrix().unwrap() * m;
        assert!((prod - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn nonpositive_focal_is_rejected() {
        assert!(matches!(
            Intrinsics::new(0.0, 1.0, 0.0, 0.0),
            Err(Error::InvalidIntrinsics(_))
        ));
        assert!(Intrinsics::new(1.0, -2.0, 0.0, 0.0).is_err());
        let k = Intrinsics::new(10.0, 10.0, 5.0, 5.0).unwrap();
        assert!(k.validate_for(10, 10).is_ok());
        assert!(k.validate_for(5, 10).is_err());
    }

    #[test]
    fn project_and_unproject_hand_values() {
        let x = unproject(Pixel::new(50.0, 50.0), 2.0, &k100()).unwrap();
        assert_eq!(x, Vector3::new(0.0, 0.0, 2.0));
        let (p, z) = project(&Vector3::new(1.0, 0.0, 2.0), &k100()).unwrap();
        assert_eq!((p.u, p.v, z), (100.0, 50.0, 2.0));
        assert!(matches!(
            project(&Vector3::new(1.0, 0.0, -2.0), &k100()),
            Err(Error::BehindCamera { .. })
        ));
        assert!(unproject(Pixel::new(1.0, 1.0), 0.0, &k100()).is_err());
    }

    #[test]
    fn warp_identity_and_z_translation() {
        let p = Pixel::new(37.25, 12.5);
        let (q, z) = warp_temporal(p, 3.5, &k100(), &PoseSE3::identity()).unwrap();
        assert_eq!((q, z), (p, 3.5));

        let pose = PoseSE3::from_translation([0.0, 0.0, -0.5]);
        let (q, z) = warp_temporal(Pixel::new(50.0, 50.0), 2.0, &k100(), &pose).unwrap();
        assert_eq!((q.u, q.v, z), (50.0, 50.0, 1.5));
    }

    #[test]
    fn warp_matches_matrix_oracle_for_small_rotation() {
        // z'·p' = K R K⁻¹ z p + K t evaluated with nalgebra's own rotation.
        let k = k100();
        let km = Matrix3::new(100.0, 0.0, 50.0, 0.0, 100.0, 50.0, 0.0, 0.0, 1.0);
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), 0.01);
        let rhs = km * rot.matrix() * km.try_inverse().unwrap() * Vector3::new(60.0, 50.0, 1.0) * 2.0;
        let pose = PoseSE3::new([0.0, 0.01, 0.0], [0.0; 3]);
        let (q, z) = warp_temporal(Pixel::new(60.0, 50.0), 2.0, &k, &pose).unwrap();
        assert_relative_eq!(z, rhs.z, epsilon = 1e-12);
        assert_relative_eq!(q.u, rhs.x / rhs.z, epsilon = 1e-10);
        assert_relative_eq!(q.v, rhs.y / rhs.z, epsilon = 1e-10);
    }

    #[test]
    fn warp_behind_camera_is_signalled() {
        let pose = PoseSE3::from_translation([0.0, 0.0, -3.0]);
        assert!(matches!(
            warp_temporal(Pixel::new(50.0, 50.0), 2.0, &k100(), &pose),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn disparity_depth_hand_values() {
        assert_eq!(disparity_to_depth(10.0, 0.5, 100.0).unwrap(), 5.0);
        let z = disparity_to_depth(0.001, 0.5, 100.0).unwrap();
        assert!(z.is_finite());
        assert_relative_eq!(z, 50000.0, max_relative = 1e-12);
        assert!(matches!(
            disparity_to_depth(0.0, 0.5, 100.0),
            Err(Error::InfiniteDepth(_))
        ));
        assert!(depth_to_disparity(1.0, 0.0, 100.0).is_err());
    }

    #[test]
    fn compose_with_identity_and_rotation_inverse() {
        let b = PoseSE3::new([0.1, -0.2, 0.3], [1.0, 2.0, 3.0]);
        let c = pose_compose(&PoseSE3::identity(), &b);
        for i in 0..3 {
            assert_relative_eq!(c.rot[i], b.rot[i], epsilon = 1e-12);
            assert_relative_eq!(c.trans[i], b.trans[i], epsilon = 1e-12);
        }
        let inv = pose_inverse(&PoseSE3::new([0.0, 0.4, 0.0], [0.0; 3]));
        assert_eq!(inv.rot, [0.0, -0.4, 0.0]);
        assert_eq!(inv.trans, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn rodrigues_is_smooth_across_the_series_threshold() {
        for &s in &[0.5e-8, 2e-8, 1e-6, 1e-3] {
            let r = [s * 0.6, -s * 0.8, 0.0];
            let m = PoseSE3::new(r, [0.0; 3]).rotation_matrix();
            let oracle = Rotation3::new(Vector3::from(r));
            assert!((m - oracle.matrix()).amax() < 1e-15);
        }
    }

    fn pose_strategy() -> impl Strategy<Value = PoseSE3> {
        (
            prop::array::uniform3(-1.5..1.5f64),
            prop::array::uniform3(-5.0..5.0f64),
        )
            .prop_map(|(rot, trans)| PoseSE3::new(rot, trans))
    }

    proptest! {
        #[test]
        fn rotation_matrices_are_orthonormal(pose in pose_strategy()) {
            let m = pose.rotation_matrix();
            prop_assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-12);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn project_inverts_unproject(u in -50.0..150.0f64, v in -50.0..150.0f64, z in 0.1..100.0f64,
                                     fx in 20.0..500.0f64, fy in 20.0..500.0f64) {
            let k = Intrinsics::new(fx, fy, 50.0, 40.0).unwrap();
            let x = unproject(Pixel::new(u, v), z, &k).unwrap();
            let (p, d) = project(&x, &k).unwrap();
            prop_assert!((p.u - u).abs() < 1e-9 && (p.v - v).abs() < 1e-9);
            prop_assert!((d - z).abs() < 1e-9 * z);
        }

        #[test]
        fn warp_equals_transform_then_project(pose in pose_strategy(), u in 0.0..100.0f64, v in 0.0..100.0f64) {
            let k = k100();
            let z = 20.0;
            if let Ok((q, zq)) = warp_temporal(Pixel::new(u, v), z, &k, &pose) {
                let x = pose.transform_point(&unproject(Pixel::new(u, v), z, &k).unwrap());
                let (p, zp) = project(&x, &k).unwrap();
                prop_assert!((p.u - q.u).abs() < 1e-9 * (1.0 + p.u.abs()));
                prop_assert!((p.v - q.v).abs() < 1e-9 * (1.0 + p.v.abs()));
                prop_assert!((zp - zq).abs() < 1e-12 * zp.abs().max(1.0));
            }
        }

        #[test]
        fn disparity_depth_are_inverse(d in 1e-3..500.0f64, b in 0.05..2.0f64, fx in 10.0..1000.0f64) {
            let z = disparity_to_depth(d, b, fx).unwrap();
            prop_assert!(((z * d) - b * fx).abs() <= 1e-12 * b * fx);
            let d2 = depth_to_disparity(z, b, fx).unwrap();
            prop_assert!((d2 - d).abs() <= 1e-12 * d);
        }

        #[test]
        fn compose_matches_homogeneous_product(a in pose_strategy(), b in pose_strategy()) {
            let c = pose_compose(&a, &b);
            let oracle = a.to_homogeneous() * b.to_homogeneous();
            prop_assert!((c.to_homogeneous() - oracle).amax() < 1e-10);
            let e = pose_compose(&a, &pose_inverse(&a));
            prop_assert!((e.to_homogeneous() - Matrix4::identity()).amax() < 1e-10);
        }
    }

    #[test]
    fn rotation_only_conjugacy_depends_on_krk_inverse() {
        // With R = I and t = 0 every K yields the identity warp.
        let k1 = Intrinsics::new(80.0, 90.0, 30.0, 20.0).unwrap();
        let k2 = Intrinsics::new(140.0, 60.0, 45.0, 25.0).unwrap();
        let id = PoseSE3::identity();
        for &(u, v) in &[(3.0, 4.0), (33.5, 18.25), (60.0, 2.0)] {
            let (a, za) = warp_temporal(Pixel::new(u, v), 4.0, &k1, &id).unwrap();
            let (b, zb) = warp_temporal(Pixel::new(u, v), 4.0, &k2, &id).unwrap();
            assert_eq!((a, za), (b, zb));
        }
    }
}
