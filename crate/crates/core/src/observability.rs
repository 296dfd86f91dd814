//! When rotation alone pins down the intrinsics, and how tightly.
//!
//! Under a pure rotation pixels move by the conjugate `K R K⁻¹`. This module
//! measures how far an estimate `(K̂, R̂, t̂)` is from reproducing the true
//! pixel-space motion, checks numerically that the conjugate determines `K`,
//! and evaluates the focal-length tolerance implied by a given rotation.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape};
use crate::error::Result;
use crate::geometry::{rodrigues, Intrinsics};

/// Residual below which a minimisation counts as converged.
pub const CONVERGED_RESIDUAL: f64 = 1e-8;
/// Relative intrinsics gap (against `‖K‖_F`) below which a minimum counts as the truth.
pub const IDENTIFIED_GAP: f64 = 1e-4;
/// Rotations with a smaller angle are treated as the identity.
pub const IDENTITY_ANGLE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugacyReport {
    /// `‖K̂R̂K̂⁻¹ − KRK⁻¹‖_F`
    pub residual_rotation: f64,
    /// `‖K̂t̂ − Kt‖`
    pub residual_translation: f64,
    /// `‖A − I‖_F` with `A = K⁻¹K̂K̂ᵀK⁻ᵀ`
    pub a_residual: f64,
    /// `‖K̂K̂ᵀ − KKᵀ‖_F`
    pub kkt_residual: f64,
    /// `‖K̂ − K‖_F`
    pub intrinsics_gap: f64,
}

fn k_inv(k: &Intrinsics) -> Matrix3<f64> {
    Matrix3::new(
        1.0 / k.fx,
        0.0,
        -k.x0 / k.fx,
        0.0,
        1.0 / k.fy,
        -k.y0 / k.fy,
        0.0,
        0.0,
        1.0,
    )
}

fn k_mat(k: &Intrinsics) -> Matrix3<f64> {
    Matrix3::new(k.fx, 0.0, k.x0, 0.0, k.fy, k.y0, 0.0, 0.0, 1.0)
}

fn rot_mat(r: &[f64; 3]) -> Matrix3<f64> {
    let m = rodrigues(r);
    Matrix3::from_fn(|i, j| m[i][j])
}

/// Pixel-space action `K R K⁻¹` of a rotation.
pub fn conjugate(k: &Intrinsics, r: &[f64; 3]) -> Matrix3<f64> {
    k_mat(k) * rot_mat(r) * k_inv(k)
}

/// All residuals by direct matrix arithmetic. Intrinsics must be valid.
pub fn conjugacy_report(
    k_true: &Intrinsics,
    k_hat: &Intrinsics,
    r_true: &[f64; 3],
    r_hat: &[f64; 3],
    t_true: &[f64; 3],
    t_hat: &[f64; 3],
) -> Result<ConjugacyReport> {
    k_true.validate()?;
    k_hat.validate()?;
    let (k, kh) = (k_mat(k_true), k_mat(k_hat));
    let ki = k_inv(k_true);
    let a = ki * kh * kh.transpose() * ki.transpose();
    Ok(ConjugacyReport {
        residual_rotation: (conjugate(k_hat, r_hat) - conjugate(k_true, r_true)).norm(),
        residual_translation: (kh * Vector3::from(*t_hat) - k * Vector3::from(*t_true)).norm(),
        a_residual: (a - Matrix3::identity()).norm(),
        kkt_residual: (kh * kh.transpose() - k * k.transpose()).norm(),
        intrinsics_gap: (kh - k).norm(),
    })
}

/// Largest focal-length errors the rotation can still detect, pixels.
/// `None` means unbounded: the matching rotation component is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalTolerance {
    pub delta_fx: Option<f64>,
    pub delta_fy: Option<f64>,
}

/// `δfx = 2fx²/(w²·|ry|)`, `δfy = 2fy²/(h²·|rx|)`.
pub fn focal_tolerance(k: &Intrinsics, width: f64, height: f64, rx: f64, ry: f64) -> Result<FocalTolerance> {
    k.validate()?;
    if !(width > 0.0) || !(height > 0.0) {
        return Err(crate::Error::InvalidArgument(format!(
            "image size must be positive, got {width}x{height}"
        )));
    }
    let bound = |f: f64, size: f64, r: f64| (r != 0.0).then(|| 2.0 * f * f / (size * size * r.abs()));
    Ok(FocalTolerance {
        delta_fx: bound(k.fx, width, ry),
        delta_fy: bound(k.fy, height, rx),
    })
}

pub const PARAM_NAMES: [&str; 4] = ["fx", "fy", "x0", "y0"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Identifiability {
    /// Every converged minimum recovered `K`.
    Identifiable,
    /// Some converged minimum differs from `K` in the listed parameters.
    NotIdentifiable { params: Vec<String> },
    /// No trial converged, so nothing can be concluded.
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGap {
    pub name: String,
    /// Largest `|p̂ − p|` over converged trials, pixels; `None` when unbounded.
    pub max_gap: Option<f64>,
    pub identifiable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    #[serde(flatten)]
    pub status: Identifiability,
    pub trials: usize,
    pub converged: usize,
    pub diverged: usize,
    /// Largest `‖K̂ − K‖_F / ‖K‖_F` over converged trials.
    pub worst_gap: Option<f64>,
    pub params: Vec<ParamGap>,
}

impl UniquenessReport {
    pub fn passed(&self) -> bool {
        self.status == Identifiability::Identifiable
    }
}

/// Residual entries of `K̂R̂K̂⁻¹ − H` for `x = [fx, fy, x0, y0, r1, r2, r3]`.
fn conj_residual<T: Scalar>(x: &[T; 7], h: &Matrix3<f64>) -> [T; 9] {
    let [fx, fy, x0, y0, r1, r2, r3] = *x;
    let r = rodrigues(&[r1, r2, r3]);
    let zero = T::constant(0.0);
    let one = T::constant(1.0);
    let k = [[fx, zero, x0], [zero, fy, y0], [zero, zero, one]];
    let ki = [
        [fx.recip_scaled(1.0), zero, -(x0 / fx)],
        [zero, fy.recip_scaled(1.0), -(y0 / fy)],
        [zero, zero, one],
    ];
    let mul = |a: &[[T; 3]; 3], b: &[[T; 3]; 3]| {
        let mut c = [[zero; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        c
    };
    let m = mul(&mul(&k, &r), &ki);
    let mut out = [zero; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = m[i][j] - h[(i, j)];
        }
    }
    out
}

fn residual_and_jacobian(x: &[f64; 7], h: &Matrix3<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let tape = Tape::with_capacity(1024);
    let vars = x.map(|v| tape.var(v));
    let res = conj_residual(&vars, h);
    let mut jac = DMatrix::zeros(9, 7);
    for (i, r) in res.iter().enumerate() {
        let g = tape.gradient(*r);
        for (j, v) in vars.iter().enumerate() {
            jac[(i, j)] = g.wrt(*v);
        }
    }
    (DVector::from_iterator(9, res.iter().map(|r| r.value())), jac)
}

enum TrialOutcome {
    Converged([f64; 4]),
    Stalled,
    Diverged,
}

/// Levenberg-Marquardt on the conjugacy residual from one start.
fn minimise(mut x: [f64; 7], h: &Matrix3<f64>) -> TrialOutcome {
    let cost = |x: &[f64; 7]| conj_residual(x, h).iter().map(|r| r * r).sum::<f64>();
    let mut lambda = 1e-3;
    let mut c = cost(&x);
    for _ in 0..500 {
        if !c.is_finite() {
            return TrialOutcome::Diverged;
        }
        if c.sqrt() < 0.1 * CONVERGED_RESIDUAL {
            break;
        }
        let (r, j) = residual_and_jacobian(&x, h);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * r;
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for d in 0..7 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut y = x;
            for d in 0..7 {
                y[d] += step[d];
            }
            let cy = if y[0] > 0.0 && y[1] > 0.0 { cost(&y) } else { f64::INFINITY };
            if cy < c {
                x = y;
                c = cy;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !c.is_finite() || x.iter().any(|v| !v.is_finite()) {
        TrialOutcome::Diverged
    } else if c.sqrt() < CONVERGED_RESIDUAL {
        TrialOutcome::Converged([x[0], x[1], x[2], x[3]])
    } else {
        TrialOutcome::Stalled
    }
}

/// Multi-start minimisation of `‖K̂R̂K̂⁻¹ − KRK⁻¹‖_F` over `(K̂, R̂)`.
///
/// Starts draw focal lengths in `[0.5, 2]×` the truth, principal points
/// within half a focal length of it and rotations within ±50% plus 0.05 rad
/// of `r_true`. Trials run in parallel with per-trial seeds; the report is
/// independent of the thread count.
pub fn verify_uniqueness(k_true: &Intrinsics, r_true: &[f64; 3], trials: usize, seed: u64) -> Result<UniquenessReport> {
    k_true.validate()?;
    let angle = Vector3::from(*r_true).norm();
    if angle < IDENTITY_ANGLE {
        return Ok(UniquenessReport {
            status: Identifiability::NotIdentifiable {
                params: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
            },
            trials: 0,
            converged: 0,
            diverged: 0,
            worst_gap: None,
            params: PARAM_NAMES
                .iter()
                .map(|n| ParamGap {
                    name: n.to_string(),
                    max_gap: None,
                    identifiable: false,
                })
                .collect(),
        });
    }
    let h = conjugate(k_true, r_true);
    let truth = k_true.as_array();
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64));
            let mut x = [0.0; 7];
            x[0] = k_true.fx * rng.random_range(0.5..2.0);
            x[1] = k_true.fy * rng.random_range(0.5..2.0);
            x[2] = k_true.x0 + 0.5 * k_true.fx * rng.random_range(-1.0..1.0);
            x[3] = k_true.y0 + 0.5 * k_true.fy * rng.random_range(-1.0..1.0);
            for d in 0..3 {
                x[4 + d] = r_true[d] * rng.random_range(0.5..1.5) + rng.random_range(-0.05..0.05);
            }
            minimise(x, &h)
        })
        .collect();

    let k_norm = k_mat(k_true).norm();
    let mut max_gap = [0.0f64; 4];
    let (mut converged, mut diverged) = (0, 0);
    let mut worst: Option<f64> = None;
    for o in &outcomes {
        match o {
            TrialOutcome::Converged(k) => {
                converged += 1;
                let mut sq = 0.0;
                for d in 0..4 {
                    let gap = (k[d] - truth[d]).abs();
                    max_gap[d] = max_gap[d].max(gap);
                    sq += gap * gap;
                }
                let rel = sq.sqrt() / k_norm;
                worst = Some(worst.map_or(rel, |w: f64| w.max(rel)));
            }
            TrialOutcome::Diverged => diverged += 1,
            TrialOutcome::Stalled => {}
        }
    }
    let params: Vec<ParamGap> = PARAM_NAMES
        .iter()
        .zip(max_gap)
        .map(|(n, g)| ParamGap {
            name: n.to_string(),
            max_gap: (converged > 0).then_some(g),
            identifiable: converged > 0 && g < IDENTIFIED_GAP * k_norm,
        })
        .collect();
    let status = if converged == 0 {
        Identifiability::Inconclusive
    } else if worst.is_some_and(|w| w < IDENTIFIED_GAP) {
        Identifiability::Identifiable
    } else {
        let mut bad: Vec<String> = params.iter().filter(|p| !p.identifiable).map(|p| p.name.clone()).collect();
        if bad.is_empty() {
            // Jointly over threshold although each coordinate is under it.
            bad = PARAM_NAMES.iter().map(|s| s.to_string()).collect();
        }
        Identifiability::NotIdentifiable { params: bad }
    };
    Ok(UniquenessReport {
        status,
        trials,
        converged,
        diverged,
        worst_gap: worst,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k100() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap()
    }

    #[test]
    fn exact_estimate_has_zero_residuals() {
        let k = Intrinsics::new(300.0, 280.0, 255.5, 90.0).unwrap();
        let (r, t) = ([0.1, -0.2, 0.05], [0.3, 0.1, -0.2]);
        let rep = conjugacy_report(&k, &k, &r, &r, &t, &t).unwrap();
        assert_eq!(
            (rep.residual_rotation, rep.residual_translation, rep.kkt_residual, rep.intrinsics_gap),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert!(rep.a_residual < 1e-15);
    }

    #[test]
    fn wrong_focal_shows_in_rotation_residual() {
        let r = [0.0, 0.1, 0.0];
        let kh = Intrinsics::new(110.0, 100.0, 50.0, 50.0).unwrap();
        let rep = conjugacy_report(&k100(), &kh, &r, &r, &[0.0; 3], &[0.0; 3]).unwrap();
        // Oracle: KRK⁻¹ for R about y by θ, K = (f, f, c, c):
        // [[cos + c·sin/f, 0, f·sin − c·cos − c²·sin/f + c], ...]
        let oracle = |f: f64| {
            let (s, c) = (0.1f64.sin(), 0.1f64.cos());
            let k = Matrix3::new(f, 0.0, 50.0, 0.0, 100.0, 50.0, 0.0, 0.0, 1.0);
            let r = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
            k * r * k.try_inverse().unwrap()
        };
        let expected = (oracle(110.0) - oracle(100.0)).norm();
        assert!(rep.residual_rotation > 0.0);
        assert!((rep.residual_rotation - expected).abs() < 1e-12);
    }

    #[test]
    fn translation_alone_cannot_separate_focal_from_scale() {
        let kh = Intrinsics::new(200.0, 100.0, 50.0, 50.0).unwrap();
        let rep = conjugacy_report(&k100(), &kh, &[0.0; 3], &[0.0; 3], &[1.0, 0.0, 0.0], &[0.5, 0.0, 0.0]).unwrap();
        assert_eq!(rep.residual_translation, 0.0);
        assert!(rep.intrinsics_gap > 0.0 && rep.a_residual > 0.0);
    }

    #[test]
    fn focal_tolerance_values() {
        let k = Intrinsics::new(300.0, 300.0, 256.0, 64.0).unwrap();
        let t = focal_tolerance(&k, 512.0, 128.0, 0.0, 0.05).unwrap();
        assert!((t.delta_fx.unwrap() - 2.0 * 300.0 * 300.0 / (512.0 * 512.0 * 0.05)).abs() < 1e-12);
        assert!((t.delta_fx.unwrap() - 13.73).abs() < 0.01);
        assert_eq!(t.delta_fy, None);
        let k2 = Intrinsics::new(600.0, 300.0, 256.0, 64.0).unwrap();
        let t2 = focal_tolerance(&k2, 512.0, 128.0, 0.0, 0.05).unwrap();
        assert!((t2.delta_fx.unwrap() / t.delta_fx.unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(serde_json::to_value(t).unwrap()["delta_fy"], serde_json::Value::Null);
        assert!(focal_tolerance(&k, 0.0, 128.0, 0.1, 0.1).is_err());
    }

    #[test]
    fn identity_rotation_is_not_identifiable() {
        let r = verify_uniqueness(&k100(), &[0.0; 3], 20, 1).unwrap();
        assert!(matches!(r.status, Identifiability::NotIdentifiable { ref params } if params.len() == 4));
    }

    #[test]
    fn generic_rotation_determines_intrinsics() {
        let k = Intrinsics::new(120.0, 90.0, 60.0, 45.0).unwrap();
        let axis = Vector3::new(1.0, 2.0, 3.0).normalize() * 0.2;
        let r = verify_uniqueness(&k, &[axis.x, axis.y, axis.z], 20, 7).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.converged > 0);
    }

    #[test]
    fn rotation_about_x_leaves_fx_free() {
        let r = verify_uniqueness(&k100(), &[0.2, 0.0, 0.0], 20, 3).unwrap();
        let Identifiability::NotIdentifiable { params } = &r.status else {
            panic!("{r:?}")
        };
        assert!(params.contains(&"fx".to_string()));
        assert!(r.params[1].identifiable, "{r:?}");
    }

    #[test]
    fn uniqueness_report_is_deterministic() {
        let a = verify_uniqueness(&k100(), &[0.1, 0.2, 0.0], 6, 5).unwrap();
        let b = verify_uniqueness(&k100(), &[0.1, 0.2, 0.0], 6, 5).unwrap();
        assert_eq!(a, b);
    }

    fn intrinsics() -> impl Strategy<Value = Intrinsics> {
        (50.0..800.0f64, 50.0..800.0f64, 0.0..600.0f64, 0.0..400.0f64)
            .prop_map(|(fx, fy, x0, y0)| Intrinsics::new(fx, fy, x0, y0).unwrap())
    }

    proptest! {
        #[test]
        fn kkt_has_block_form(k in intrinsics()) {
            let m = k_mat(&k);
            let kkt = m * m.transpose();
            prop_assert_eq!(kkt[(0, 0)], k.fx * k.fx + k.x0 * k.x0);
            prop_assert_eq!(kkt[(1, 1)], k.fy * k.fy + k.y0 * k.y0);
            prop_assert_eq!(kkt[(0, 1)], k.x0 * k.y0);
            prop_assert_eq!(kkt[(1, 0)], k.x0 * k.y0);
            prop_assert_eq!(kkt[(0, 2)], k.x0);
            prop_assert_eq!(kkt[(1, 2)], k.y0);
            prop_assert_eq!(kkt[(2, 0)], k.x0);
            prop_assert_eq!(kkt[(2, 1)], k.y0);
            prop_assert_eq!(kkt[(2, 2)], 1.0);
        }

        #[test]
        fn a_identity_tracks_kkt_match(k in intrinsics(), d in prop::array::uniform4(-1.0..1.0f64), eps in 1e-9..1e-1f64) {
            let kh = Intrinsics::new(
                k.fx * (1.0 + eps * d[0]).abs().max(0.5),
                k.fy * (1.0 + eps * d[1]).abs().max(0.5),
                k.x0 + eps * d[2] * k.fx,
                k.y0 + eps * d[3] * k.fy,
            ).unwrap();
            let rep = conjugacy_report(&k, &kh, &[0.0; 3], &[0.0; 3], &[0.0; 3], &[0.0; 3]).unwrap();
            // A − I = K⁻¹ (K̂K̂ᵀ − KKᵀ) K⁻ᵀ, so each residual bounds the other.
            let (kn, kin) = (k_mat(&k).norm(), k_inv(&k).norm());
            let slack = 1e-12 * kn * kn;
            prop_assert!(rep.a_residual <= kin * kin * rep.kkt_residual * (1.0 + 1e-9) + 1e-12);
            prop_assert!(rep.kkt_residual <= kn * kn * rep.a_residual * (1.0 + 1e-9) + slack);
        }

        #[test]
        fn focal_tolerance_is_positive_and_shrinks_with_rotation(ry in 1e-4..1.0f64) {
            let k = Intrinsics::new(300.0, 300.0, 256.0, 64.0).unwrap();
            let a = focal_tolerance(&k, 512.0, 128.0, 0.0, ry).unwrap().delta_fx.unwrap();
            let b = focal_tolerance(&k, 512.0, 128.0, 0.0, 2.0 * ry).unwrap().delta_fx.unwrap();
            prop_assert!(a > 0.0 && b < a);
        }
    }
}
