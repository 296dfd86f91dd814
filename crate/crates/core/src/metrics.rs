//! Depth error/accuracy metrics and absolute trajectory error.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose_compose, pose_inverse, PoseSE3};
use crate::grid::Grid;

/// Smallest depth a prediction is clamped to, meters.
pub const MIN_PRED_DEPTH: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    /// Pixels that entered the averages.
    pub count: usize,
}

impl DepthMetrics {
    pub const CSV_HEADER: &'static str = "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,count";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3, self.count
        )
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Errors over pixels with `0 < gt ≤ cap`, predictions clamped to `[1e-3, cap]`.
///
/// With `median_scale` the prediction is first rescaled by `median(gt)/median(pred)`
/// over the valid pixels.
pub fn depth_metrics(pred: &Grid<f64>, gt: &Grid<f64>, cap: f64, median_scale: bool) -> Result<DepthMetrics> {
    pred.check_shape(gt)?;
    if !(cap > MIN_PRED_DEPTH) {
        return Err(Error::InvalidArgument(format!("cap must exceed {MIN_PRED_DEPTH}, got {cap}")));
    }
    let (mut p, g): (Vec<f64>, Vec<f64>) = pred
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(_, g)| **g > 0.0 && **g <= cap)
        .map(|(p, g)| (*p, *g))
        .unzip();
    if g.is_empty() {
        return Err(Error::DegenerateMask("no ground-truth pixels within the depth cap"));
    }
    if let Some(bad) = p.iter().find(|x| x.is_nan()) {
        return Err(Error::InvalidArgument(format!("prediction contains {bad}")));
    }
    if median_scale {
        let s = median(&g) / median(&p);
        p.iter_mut().for_each(|x| *x *= s);
    }
    p.iter_mut().for_each(|x| *x = x.clamp(MIN_PRED_DEPTH, cap));

    let n = g.len() as f64;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut within = [0usize; 3];
    for (p, g) in p.iter().zip(&g) {
        let e = p - g;
        abs_rel += e.abs() / g;
        sq_rel += e * e / g;
        sq += e * e;
        sq_log += (p.ln() - g.ln()).powi(2);
        let ratio = (p / g).max(g / p);
        for (k, t) in [1.25, 1.25f64.powi(2), 1.25f64.powi(3)].iter().enumerate() {
            if ratio < *t {
                within[k] += 1;
            }
        }
    }
    Ok(DepthMetrics {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        rmse_log: (sq_log / n).sqrt(),
        delta1: within[0] as f64 / n,
        delta2: within[1] as f64 / n,
        delta3: within[2] as f64 / n,
        count: g.len(),
    })
}

/// Timestamped camera-to-world poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub timestamps: Vec<f64>,
    pub poses: Vec<PoseSE3>,
}

impl Trajectory {
    pub fn new(timestamps: Vec<f64>, poses: Vec<PoseSE3>) -> Result<Self> {
        if timestamps.len() != poses.len() {
            return Err(Error::dims(poses.len(), timestamps.len()));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("timestamps must be strictly increasing".into()));
        }
        Ok(Trajectory { timestamps, poses })
    }

    /// Poses at timestamps 0, 1, 2, ...
    pub fn from_poses(poses: Vec<PoseSE3>) -> Self {
        Trajectory {
            timestamps: (0..poses.len()).map(|i| i as f64).collect(),
            poses,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteResult {
    /// RMS translation error after alignment, meters.
    pub t_ate: f64,
    /// RMS rotation angle error after alignment, radians.
    pub r_ate: f64,
    /// Scale of the alignment (1 for rigid).
    pub scale: f64,
}

/// Closed-form least-squares alignment `q ≈ s·R·p + t` of point sets.
fn umeyama(p: &[Vector3<f64>], q: &[Vector3<f64>], with_scale: bool) -> (Matrix3<f64>, Vector3<f64>, f64) {
    let n = p.len() as f64;
    let mp = p.iter().sum::<Vector3<f64>>() / n;
    let mq = q.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    for (a, b) in p.iter().zip(q) {
        let (da, db) = (a - mp, b - mq);
        cov += db * da.transpose();
        var_p += da.norm_squared();
    }
    cov /= n;
    var_p /= n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    let s = if with_scale && var_p > 0.0 {
        (svd.singular_values.component_mul(&d.diagonal())).sum() / var_p
    } else {
        1.0
    };
    let t = mq - s * r * mp;
    (r, t, s)
}

/// Absolute trajectory error after aligning `pred` onto `gt`.
///
/// The alignment is fitted to camera positions: rigid by default, a
/// similarity with `with_scale`.
pub fn ate(pred: &Trajectory, gt: &Trajectory, with_scale: bool) -> Result<AteResult> {
    if pred.len() != gt.len() {
        return Err(Error::dims(gt.len(), pred.len()));
    }
    if pred.len() < 3 {
        return Err(Error::AlignmentUnderdetermined(pred.len()));
    }
    for (a, b) in pred.timestamps.iter().zip(&gt.timestamps) {
        if (a - b).abs() > 1e-6 * a.abs().max(1.0) {
            return Err(Error::InvalidArgument(format!("timestamps {a} and {b} are not aligned")));
        }
    }
    let p: Vec<_> = pred.poses.iter().map(|x| x.translation()).collect();
    let q: Vec<_> = gt.poses.iter().map(|x| x.translation()).collect();
    let (r, t, s) = umeyama(&p, &q, with_scale);
    let align = PoseSE3::from_parts(&r, &t);

    let (mut sq_t, mut sq_r) = (0.0, 0.0);
    for (pi, qi) in pred.poses.iter().zip(&gt.poses) {
        let scaled = PoseSE3::new(pi.rot, (pi.translation() * s).into());
        let f = pose_compose(&pose_inverse(qi), &pose_compose(&align, &scaled));
        sq_t += f.translation().norm_squared();
        sq_r += f.rotation_angle().powi(2);
    }
    let n = pred.len() as f64;
    Ok(AteResult {
        t_ate: (sq_t / n).sqrt(),
        r_ate: (sq_r / n).sqrt(),
        scale: s,
    })
}
