//! Photometric and disparity losses and the combined stereo-temporal objective.
//!
//! Every loss is normalised by the number of pixels that actually participate
//! (valid after warping), not by H·W.

use serde::{Deserialize, Serialize};

use crate::autodiff::{pairwise_sum, Scalar};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PoseSE3};
use crate::grid::{Grid, ImageGrid};
use crate::sampler::{resample, warp_stereo_generic, warp_temporal_generic, StereoDirection, Warped};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_te: f64,
    pub lambda_lr: f64,
    pub lambda_r: f64,
    /// SSIM share of the photometric error; the rest is L1.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_p: 1.0,
            lambda_te: 1.0,
            lambda_lr: 1e-3,
            lambda_r: 1e-3,
            alpha: 0.85,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            lambda_p: 0.0,
            lambda_te: 0.0,
            lambda_lr: 0.0,
            lambda_r: 0.0,
            alpha: 0.85,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_p, self.lambda_te, self.lambda_lr, self.lambda_r];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument(format!("loss weights must be finite and >= 0: {lambdas:?}")));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Column order of [`LossBreakdown::components`].
pub const LOSS_COMPONENTS: [&str; 7] = [
    "total",
    "photo_left",
    "photo_right",
    "temporal",
    "lr_consistency",
    "smooth_left",
    "smooth_right",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T = f64> {
    pub total: T,
    pub photo_left: T,
    pub photo_right: T,
    pub temporal: T,
    pub lr_consistency: T,
    pub smooth_left: T,
    pub smooth_right: T,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn values(&self) -> LossBreakdown<f64> {
        LossBreakdown {
            total: self.total.value(),
            photo_left: self.photo_left.value(),
            photo_right: self.photo_right.value(),
            temporal: self.temporal.value(),
            lr_consistency: self.lr_consistency.value(),
            smooth_left: self.smooth_left.value(),
            smooth_right: self.smooth_right.value(),
        }
    }
}

impl LossBreakdown<f64> {
    pub fn components(&self) -> [(&'static str, f64); 7] {
        let v = [
            self.total,
            self.photo_left,
            self.photo_right,
            self.temporal,
            self.lr_consistency,
            self.smooth_left,
            self.smooth_right,
        ];
        std::array::from_fn(|i| (LOSS_COMPONENTS[i], v[i]))
    }

    /// Name of the first non-finite component, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.components()
            .into_iter()
            .skip(1)
            .chain(std::iter::once(("total", self.total)))
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

/// Left and right views at the target time t and at the source time t'.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageQuad {
    pub left: ImageGrid,
    pub right: ImageGrid,
    pub left_next: ImageGrid,
    pub right_next: ImageGrid,
}

impl ImageQuad {
    pub fn width(&self) -> usize {
        self.left.width()
    }

    pub fn height(&self) -> usize {
        self.left.height()
    }

    pub fn validate(&self) -> Result<()> {
        for img in [&self.right, &self.left_next, &self.right_next] {
            self.left.check_shape(img)?;
        }
        Ok(())
    }
}

/// Free variables of the objective: disparity fields in log space, the
/// egomotion (t → t') and the intrinsics in pixels.
#[derive(Clone, Debug)]
pub struct LossVariables<T> {
    pub log_disp_l: Grid<T>,
    pub log_disp_r: Grid<T>,
    pub pose: PoseSE3<T>,
    pub intr: Intrinsics<T>,
}

impl<T: Scalar> LossVariables<T> {
    pub fn values(&self) -> LossVariables<f64> {
        LossVariables {
            log_disp_l: self.log_disp_l.map(|x| x.value()),
            log_disp_r: self.log_disp_r.map(|x| x.value()),
            pose: self.pose.values(),
            intr: self.intr.values(),
        }
    }
}

/// 3×3 box sums over valid pixels only.
fn masked_box3<T: Scalar>(plane: &[T], valid: &[bool], w: usize, h: usize) -> Vec<Option<T>> {
    let mut rows: Vec<Option<T>> = vec![None; w * h];
    for v in 0..h {
        for u in 0..w {
            let mut acc: Option<T> = None;
            for x in u.saturating_sub(1)..(u + 2).min(w) {
                let i = v * w + x;
                if valid[i] {
                    acc = Some(match acc {
                        Some(a) => a + plane[i],
                        None => plane[i],
                    });
                }
            }
            rows[v * w + u] = acc;
        }
    }
    let mut out = vec![None; w * h];
    for v in 0..h {
        for u in 0..w {
            let mut acc: Option<T> = None;
            for y in v.saturating_sub(1)..(v + 2).min(h) {
                if let Some(r) = rows[y * w + u] {
                    acc = Some(match acc {
                        Some(a) => a + r,
                        None => r,
                    });
                }
            }
            out[v * w + u] = acc;
        }
    }
    out
}

fn masked_count3(valid: &[bool], w: usize, h: usize) -> Vec<usize> {
    let mut out = vec![0; w * h];
    for v in 0..h {
        for u in 0..w {
            let mut n = 0;
            for y in v.saturating_sub(1)..(v + 2).min(h) {
                for x in u.saturating_sub(1)..(u + 2).min(w) {
                    n += valid[y * w + x] as usize;
                }
            }
            out[v * w + u] = n;
        }
    }
    out
}

/// Per-pixel SSIM averaged over channels, using 3×3 windows restricted to
/// `valid` pixels (windows are also clipped at the image border).
/// Entries are `None` where the pixel itself is invalid.
pub(crate) fn ssim_masked<T: Scalar>(a: &Grid<T>, b: &Grid<T>, valid: &[bool]) -> Vec<Option<T>> {
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let counts = masked_count3(valid, w, h);
    let mut acc: Vec<Option<T>> = vec![None; w * h];
    for c in 0..ch {
        let plane_a: Vec<T> = (0..w * h).map(|i| a.data()[i * ch + c]).collect();
        let plane_b: Vec<T> = (0..w * h).map(|i| b.data()[i * ch + c]).collect();
        let sa = masked_box3(&plane_a, valid, w, h);
        let sb = masked_box3(&plane_b, valid, w, h);
        for v in 0..h {
            for u in 0..w {
                let i = v * w + u;
                if !valid[i] {
                    continue;
                }
                let (Some(sa), Some(sb)) = (sa[i], sb[i]) else {
                    continue;
                };
                let inv_n = 1.0 / counts[i] as f64;
                let mu_a = sa * inv_n;
                let mu_b = sb * inv_n;
                // Second moments about the window mean; E[x²] − μ² cancels badly on flat windows.
                let (mut saa, mut sbb, mut sab) = (T::constant(0.0), T::constant(0.0), T::constant(0.0));
                for y in v.saturating_sub(1)..(v + 2).min(h) {
                    for x in u.saturating_sub(1)..(u + 2).min(w) {
                        let j = y * w + x;
                        if valid[j] {
                            let (da, db) = (plane_a[j] - mu_a, plane_b[j] - mu_b);
                            saa = saa + da.square();
                            sbb = sbb + db.square();
                            sab = sab + da * db;
                        }
                    }
                }
                let mu_ab = mu_a * mu_b;
                let var_a = saa * inv_n;
                let var_b = sbb * inv_n;
                let cov = sab * inv_n;
                let num = (mu_ab * 2.0 + SSIM_C1) * (cov * 2.0 + SSIM_C2);
                let den = (mu_a.square() + mu_b.square() + SSIM_C1) * (var_a + var_b + SSIM_C2);
                let s = num / den;
                acc[i] = Some(match acc[i] {
                    Some(prev) => prev + s,
                    None => s,
                });
            }
        }
    }
    if ch > 1 {
        let inv = 1.0 / ch as f64;
        for s in acc.iter_mut().flatten() {
            *s = *s * inv;
        }
    }
    acc
}

/// SSIM map of two equally shaped images (3×3 window, channel-averaged).
pub fn ssim(a: &ImageGrid, b: &ImageGrid) -> Result<Grid<f64>> {
    a.check_shape(b)?;
    let valid = vec![true; a.len()];
    let map = ssim_masked(a, b, &valid);
    Grid::from_vec(a.width(), a.height(), 1, map.into_iter().map(|s| s.unwrap_or(0.0)).collect())
}

/// `(1/N) Σ α·(1 − SSIM)/2 + (1 − α)·|I − Î|` over valid pixels.
pub fn photoconsistency_loss(i: &ImageGrid, i_hat: &Warped<f64>, alpha: f64) -> Result<f64> {
    photoconsistency_generic(i, i_hat, alpha)
}

pub fn photoconsistency_generic<T: Scalar>(i: &ImageGrid, i_hat: &Warped<T>, alpha: f64) -> Result<T> {
    i.check_shape(&i_hat.image)?;
    if i_hat.mask.len() != i.len() {
        return Err(Error::dims(i.len(), i_hat.mask.len()));
    }
    let n = i_hat.mask.iter().filter(|m| **m).count();
    if n == 0 {
        return Err(Error::DegenerateMask("photometric reconstruction"));
    }
    let ch = i.channels();
    let target: Grid<T> = i.map(T::constant);
    let ssim_map = if alpha > 0.0 {
        ssim_masked(&target, &i_hat.image, &i_hat.mask)
    } else {
        Vec::new()
    };
    let mut terms = Vec::with_capacity(n);
    for (p, &valid) in i_hat.mask.iter().enumerate() {
        if !valid {
            continue;
        }
        let l1: Vec<T> = (0..ch)
            .map(|c| (i_hat.image.data()[p * ch + c] - i.data()[p * ch + c]).abs())
            .collect();
        let mut term = pairwise_sum(&l1) * ((1.0 - alpha) / ch as f64);
        if alpha > 0.0 {
            let s = ssim_map[p].expect("valid pixel has an SSIM window");
            term = term + s.rsub(1.0) * (alpha * 0.5);
        }
        terms.push(term);
    }
    Ok(pairwise_sum(&terms) / n as f64)
}

/// Temporal reconstruction loss: the photometric loss applied to the left
/// image at t and the source frame warped through depth, pose and intrinsics.
pub fn temporal_loss(i_t: &ImageGrid, warped: &Warped<f64>, alpha: f64) -> Result<f64> {
    photoconsistency_generic(i_t, warped, alpha)
}

/// Left-right disparity consistency.
///
/// Sums `|d^l(u,v) − d^r(u + d^l, v)|` and `|d^r(u,v) − d^l(u − d^r, v)|` over
/// their valid samples and divides by the total number of valid samples.
pub fn lr_consistency_loss(d_l: &Grid<f64>, d_r: &Grid<f64>) -> Result<f64> {
    lr_consistency_generic(d_l, d_r)
}

pub fn lr_consistency_generic<T: Scalar>(d_l: &Grid<T>, d_r: &Grid<T>) -> Result<T> {
    d_l.check_shape(d_r)?;
    if d_l.channels() != 1 {
        return Err(Error::dims("1 channel", d_l.channels()));
    }
    let (w, h) = (d_l.width(), d_l.height());
    let r_at_l = resample(d_r, w, h, |u, v| {
        Some((d_l.get(u, v, 0) + u as f64, T::constant(v as f64)))
    });
    let l_at_r = resample(d_l, w, h, |u, v| {
        Some((d_r.get(u, v, 0).rsub(u as f64), T::constant(v as f64)))
    });
    let mut terms = Vec::with_capacity(2 * w * h);
    for p in 0..w * h {
        if r_at_l.mask[p] {
            terms.push((d_l.data()[p] - r_at_l.image.data()[p]).abs());
        }
    }
    for p in 0..w * h {
        if l_at_r.mask[p] {
            terms.push((d_r.data()[p] - l_at_r.image.data()[p]).abs());
        }
    }
    if terms.is_empty() {
        return Ok(T::constant(0.0));
    }
    let n = terms.len() as f64;
    Ok(pairwise_sum(&terms) / n)
}

/// Edge-aware disparity smoothness with forward differences.
///
/// The x and y terms are each averaged over the pixels where their forward
/// difference exists; image gradients are averaged over channels.
pub fn smoothness_loss(d: &Grid<f64>, i: &ImageGrid) -> Result<f64> {
    smoothness_generic(d, i)
}

pub fn smoothness_generic<T: Scalar>(d: &Grid<T>, i: &ImageGrid) -> Result<T> {
    d.check_plane(i)?;
    if d.channels() != 1 {
        return Err(Error::dims("1 channel", d.channels()));
    }
    let (w, h, ch) = (i.width(), i.height(), i.channels());
    let grad = |u0: usize, v0: usize, u1: usize, v1: usize| -> f64 {
        (0..ch).map(|c| (i.get(u1, v1, c) - i.get(u0, v0, c)).abs()).sum::<f64>() / ch as f64
    };
    let mut x_terms = Vec::with_capacity(w * h);
    let mut y_terms = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            if u + 1 < w {
                let weight = (-grad(u, v, u + 1, v)).exp();
                x_terms.push((d.get(u + 1, v, 0) - d.get(u, v, 0)).abs() * weight);
            }
            if v + 1 < h {
                let weight = (-grad(u, v, u, v + 1)).exp();
                y_terms.push((d.get(u, v + 1, 0) - d.get(u, v, 0)).abs() * weight);
            }
        }
    }
    let mut total = T::constant(0.0);
    if !x_terms.is_empty() {
        total = pairwise_sum(&x_terms) / x_terms.len() as f64;
    }
    if !y_terms.is_empty() {
        total = total + pairwise_sum(&y_terms) / y_terms.len() as f64;
    }
    Ok(total)
}

/// Reconstructions used by the objective, exposed for diagnostics.
pub struct Reconstructions<T> {
    pub left: Warped<T>,
    pub right: Warped<T>,
    pub temporal: Warped<T>,
}

/// Dense depth implied by a left disparity field: `z = B·f̂x / d`.
pub fn depth_from_disparity<T: Scalar>(disp: &Grid<T>, baseline: f64, fx: T) -> Grid<T> {
    let scale = fx * baseline;
    disp.map(|d| scale / d)
}

pub fn reconstruct<T: Scalar>(
    images: &ImageQuad,
    baseline: f64,
    vars: &LossVariables<T>,
) -> Result<Reconstructions<T>> {
    let disp_l = vars.log_disp_l.map(|x| x.exp());
    let disp_r = vars.log_disp_r.map(|x| x.exp());
    let depth = depth_from_disparity(&disp_l, baseline, vars.intr.fx);
    Ok(Reconstructions {
        left: warp_stereo_generic(&images.right, &disp_l, StereoDirection::LeftFromRight)?,
        right: warp_stereo_generic(&images.left, &disp_r, StereoDirection::RightFromLeft)?,
        temporal: warp_temporal_generic(&images.left_next, &depth, &vars.intr, &vars.pose)?,
    })
}

/// Combined objective
/// `λp(lp(Iˡ, Îˡ) + lp(Iʳ, Îʳ)) + λte·lp(Iˡᵗ, Îˡᵗ) + λlr·llr(Dˡ, Dʳ) + λr(lr(Dˡ, Iˡ) + lr(Dʳ, Iʳ))`.
///
/// Components whose weight is zero are still reported, but are evaluated on
/// plain values so they add nothing to a gradient tape.
pub fn total_loss<T: Scalar>(
    images: &ImageQuad,
    baseline: f64,
    vars: &LossVariables<T>,
    w: &LossWeights,
) -> Result<LossBreakdown<T>> {
    images.validate()?;
    w.validate()?;
    if !(baseline > 0.0) {
        return Err(Error::InvalidArgument(format!("baseline must be positive, got {baseline}")));
    }
    for g in [&vars.log_disp_l, &vars.log_disp_r] {
        images.left.check_plane(g)?;
    }
    let plain = vars.values();
    let photo = |on_tape: bool| -> Result<(T, T)> {
        if on_tape {
            let disp_l = vars.log_disp_l.map(|x| x.exp());
            let disp_r = vars.log_disp_r.map(|x| x.exp());
            let left = warp_stereo_generic(&images.right, &disp_l, StereoDirection::LeftFromRight)?;
            let right = warp_stereo_generic(&images.left, &disp_r, StereoDirection::RightFromLeft)?;
            Ok((
                photoconsistency_generic(&images.left, &left, w.alpha)?,
                photoconsistency_generic(&images.right, &right, w.alpha)?,
            ))
        } else {
            let disp_l = plain.log_disp_l.map(f64::exp);
            let disp_r = plain.log_disp_r.map(f64::exp);
            let left = warp_stereo_generic(&images.right, &disp_l, StereoDirection::LeftFromRight)?;
            let right = warp_stereo_generic(&images.left, &disp_r, StereoDirection::RightFromLeft)?;
            Ok((
                T::constant(photoconsistency_generic(&images.left, &left, w.alpha)?),
                T::constant(photoconsistency_generic(&images.right, &right, w.alpha)?),
            ))
        }
    };
    let (photo_left, photo_right) = photo(w.lambda_p != 0.0)?;

    let temporal = if w.lambda_te != 0.0 {
        let disp_l = vars.log_disp_l.map(|x| x.exp());
        let depth = depth_from_disparity(&disp_l, baseline, vars.intr.fx);
        let warped = warp_temporal_generic(&images.left_next, &depth, &vars.intr, &vars.pose)?;
        photoconsistency_generic(&images.left, &warped, w.alpha)?
    } else {
        let disp_l = plain.log_disp_l.map(f64::exp);
        let depth = depth_from_disparity(&disp_l, baseline, plain.intr.fx);
        let warped = warp_temporal_generic(&images.left_next, &depth, &plain.intr, &plain.pose)?;
        T::constant(photoconsistency_generic(&images.left, &warped, w.alpha)?)
    };

    let lr_consistency = if w.lambda_lr != 0.0 {
        lr_consistency_generic(&vars.log_disp_l.map(|x| x.exp()), &vars.log_disp_r.map(|x| x.exp()))?
    } else {
        T::constant(lr_consistency_generic(
            &plain.log_disp_l.map(f64::exp),
            &plain.log_disp_r.map(f64::exp),
        )?)
    };

    let (smooth_left, smooth_right) = if w.lambda_r != 0.0 {
        (
            smoothness_generic(&vars.log_disp_l.map(|x| x.exp()), &images.left)?,
            smoothness_generic(&vars.log_disp_r.map(|x| x.exp()), &images.right)?,
        )
    } else {
        (
            T::constant(smoothness_generic(&plain.log_disp_l.map(f64::exp), &images.left)?),
            T::constant(smoothness_generic(&plain.log_disp_r.map(f64::exp), &images.right)?),
        )
    };

    let total = (photo_left + photo_right) * w.lambda_p
        + temporal * w.lambda_te
        + lr_consistency * w.lambda_lr
        + (smooth_left + smooth_right) * w.lambda_r;

    Ok(LossBreakdown {
        total,
        photo_left,
        photo_right,
        temporal,
        lr_consistency,
        smooth_left,
        smooth_right,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DisparityField;
    use crate::sampler::warp_stereo;

    fn noise(w: usize, h: usize, seed: u64) -> ImageGrid {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Grid::from_fn(w, h, 1, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    fn full(img: &ImageGrid) -> Warped<f64> {
        Warped {
            image: img.clone(),
            mask: vec![true; img.len()],
        }
    }

    fn constant_ssim(a: f64, b: f64) -> f64 {
        (2.0 * a * b + SSIM_C1) * SSIM_C2 / ((a * a + b * b + SSIM_C1) * SSIM_C2)
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = noise(9, 7, 3);
        let map = ssim(&a, &a).unwrap();
        assert!(map.data().iter().all(|s| (s - 1.0).abs() < 1e-12));
        let rgb = Grid::from_fn(5, 5, 3, |u, v, c| ((u + 2 * v + c) % 7) as f64 / 7.0);
        assert!(ssim(&rgb, &rgb).unwrap().data().iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ssim_of_constant_images_matches_closed_form() {
        let a = Grid::filled(6, 6, 1, 0.2);
        let b = Grid::filled(6, 6, 1, 0.8);
        let expected = constant_ssim(0.2, 0.8);
        for s in ssim(&a, &b).unwrap().data() {
            assert!((s - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_of_inverted_image_stays_in_range() {
        let a = noise(10, 10, 11);
        let b = a.map(|x| 1.0 - x);
        let map = ssim(&a, &b).unwrap();
        assert!(map.data().iter().all(|s| (-1.0..=1.0).contains(s)));
        assert!(map.data().iter().any(|s| *s < 0.0));
        assert!(ssim(&a, &noise(9, 10, 1)).is_err());
    }

    #[test]
    fn photoconsistency_hand_values() {
        let a = noise(6, 5, 5);
        assert_eq!(photoconsistency_loss(&a, &full(&a), 0.85).unwrap(), 0.0);

        let zeros = Grid::filled(6, 5, 1, 0.0);
        let ones = full(&Grid::filled(6, 5, 1, 1.0));
        assert!((photoconsistency_loss(&zeros, &ones, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let expected = (1.0 - constant_ssim(0.0, 1.0)) / 2.0;
        assert!((photoconsistency_loss(&zeros, &ones, 1.0).unwrap() - expected).abs() < 1e-12);

        let empty = Warped {
            image: zeros.clone(),
            mask: vec![false; zeros.len()],
        };
        assert!(matches!(
            photoconsistency_loss(&zeros, &empty, 0.85),
            Err(Error::DegenerateMask(_))
        ));
    }

    #[test]
    fn photoconsistency_ignores_masked_pixels() {
        let a = noise(8, 8, 2);
        let mut warped = full(&a);
        for p in 0..8 {
            warped.mask[p * 8 + 7] = false;
            warped.image.data_mut()[p * 8 + 7] = 0.0;
        }
        assert!(photoconsistency_loss(&a, &warped, 0.85).unwrap().abs() < 1e-12);
    }

    #[test]
    fn lr_consistency_hand_values() {
        let zero = Grid::filled(7, 4, 1, 0.0);
        assert_eq!(lr_consistency_loss(&zero, &zero).unwrap(), 0.0);
        let c = Grid::filled(7, 4, 1, 1.5);
        assert!(lr_consistency_loss(&c, &c).unwrap().abs() < 1e-15);
        let two = Grid::filled(7, 4, 1, 2.0);
        assert!((lr_consistency_loss(&two, &zero).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn smoothness_hand_values() {
        let img = Grid::filled(6, 5, 1, 0.4);
        assert_eq!(smoothness_loss(&Grid::filled(6, 5, 1, 3.0), &img).unwrap(), 0.0);
        let ramp = Grid::from_fn(6, 5, 1, |u, _, _| u as f64);
        assert!((smoothness_loss(&ramp, &img).unwrap() - 1.0).abs() < 1e-15);
        let g = 4.0;
        let edgy = Grid::from_fn(6, 5, 1, |u, _, _| g * u as f64);
        assert!((smoothness_loss(&ramp, &edgy).unwrap() - (-g).exp()).abs() < 1e-15);
    }

    #[test]
    fn stereo_shift_reconstruction_is_exact() {
        let right = noise(10, 6, 9);
        let left = Grid::from_fn(10, 6, 1, |u, v, _| if u + 2 < 10 { right.get(u + 2, v, 0) } else { 0.0 });
        let disp = DisparityField::constant(10, 6, 2.0).unwrap();
        let warped = warp_stereo(&right, &disp, StereoDirection::LeftFromRight).unwrap();
        assert_eq!(warped.valid_count(), 48);
        assert!(photoconsistency_loss(&left, &warped, 0.85).unwrap() < 1e-12);
    }

    fn toy_vars(w: usize, h: usize) -> LossVariables<f64> {
        LossVariables {
            log_disp_l: Grid::filled(w, h, 1, 1.0f64.ln()),
            log_disp_r: Grid::filled(w, h, 1, 1.0f64.ln()),
            pose: PoseSE3::new([0.0, 0.01, 0.0], [0.05, 0.0, 0.02]),
            intr: Intrinsics::new(8.0, 8.0, 4.0, 3.0).unwrap(),
        }
    }

    fn toy_quad() -> ImageQuad {
        ImageQuad {
            left: noise(9, 7, 1),
            right: noise(9, 7, 2),
            left_next: noise(9, 7, 3),
            right_next: noise(9, 7, 4),
        }
    }

    #[test]
    fn zero_weights_give_zero_total() {
        let b = total_loss(&toy_quad(), 0.5, &toy_vars(9, 7), &LossWeights::zero()).unwrap();
        assert_eq!(b.total, 0.0);
        assert!(b.photo_left > 0.0 && b.temporal > 0.0);
    }

    #[test]
    fn total_is_the_weighted_sum_of_components() {
        let mut s = 17u64;
        for _ in 0..10 {
            let mut next = || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                (s >> 11) as f64 / (1u64 << 53) as f64
            };
            let w = LossWeights {
                lambda_p: next() * 2.0,
                lambda_te: next() * 2.0,
                lambda_lr: next(),
                lambda_r: next(),
                alpha: next(),
            };
            let b = total_loss(&toy_quad(), 0.5, &toy_vars(9, 7), &w).unwrap();
            let manual = w.lambda_p * (b.photo_left + b.photo_right)
                + w.lambda_te * b.temporal
                + w.lambda_lr * b.lr_consistency
                + w.lambda_r * (b.smooth_left + b.smooth_right);
            assert!((b.total - manual).abs() < 1e-12);
            assert!(b.total >= 0.0);
        }
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let w = LossWeights {
            alpha: 1.5,
            ..LossWeights::default()
        };
        assert!(total_loss(&toy_quad(), 0.5, &toy_vars(9, 7), &w).is_err());
        assert!(total_loss(&toy_quad(), 0.0, &toy_vars(9, 7), &LossWeights::default()).is_err());
    }
}
