//! Differentiable bilinear sampling and dense image warping.
//!
//! Samples that need a neighbour outside the source raster are not clamped:
//! they are marked invalid in the output mask and carry value zero.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::geometry::{rodrigues, warp_point, Intrinsics, Pixel, PoseSE3};
use crate::grid::{DepthField, DisparityField, Grid, ImageGrid};

/// Reconstructed view plus per-pixel validity.
#[derive(Clone, Debug, PartialEq)]
pub struct Warped<T> {
    pub image: Grid<T>,
    pub mask: Vec<bool>,
}

pub type WarpedImage = Warped<f64>;

impl<T: Scalar> Warped<T> {
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn values(&self) -> WarpedImage {
        Warped {
            image: self.image.map(|x| x.value()),
            mask: self.mask.clone(),
        }
    }
}

/// Which view a stereo warp reconstructs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StereoDirection {
    /// `Î^l(u, v) = I^r(u + d^l(u, v), v)`
    LeftFromRight,
    /// `Î^r(u, v) = I^l(u − d^r(u, v), v)`
    RightFromLeft,
}

impl StereoDirection {
    fn sign(self) -> f64 {
        match self {
            StereoDirection::LeftFromRight => 1.0,
            StereoDirection::RightFromLeft => -1.0,
        }
    }
}

/// Left neighbour index and whether `x` lies on the sampling domain `[0, n − 1]`.
#[inline]
fn cell(x: f64, n: usize) -> Option<usize> {
    if !(x >= 0.0 && x <= (n - 1) as f64) {
        return None;
    }
    let i = x.floor() as usize;
    // On the last row/column the right neighbour has zero weight; reuse the
    // previous cell so no out-of-range index is touched.
    Some(if i + 1 >= n { n.saturating_sub(2) } else { i })
}

/// Bilinearly interpolates every channel of `src` at `(u, v)` into `out`.
///
/// Returns `false` (leaving `out` untouched) if the position is outside the raster.
#[inline]
pub fn sample_into<T, S>(src: &Grid<S>, u: T, v: T, out: &mut [T]) -> bool
where
    T: Scalar + Mul<S, Output = T> + Add<S, Output = T>,
    S: Copy + Sub<Output = S>,
{
    let (w, h) = (src.width(), src.height());
    let (Some(x0), Some(y0)) = (cell(u.value(), w), cell(v.value(), h)) else {
        return false;
    };
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fu = u - x0 as f64;
    let fv = v - y0 as f64;
    for (c, slot) in out.iter_mut().enumerate() {
        let s00 = src.get(x0, y0, c);
        let s10 = src.get(x1, y0, c);
        let s01 = src.get(x0, y1, c);
        let s11 = src.get(x1, y1, c);
        let top = fu * (s10 - s00) + s00;
        let bottom = fu * (s11 - s01) + s01;
        *slot = fv * (bottom - top) + top;
    }
    true
}

/// Builds a warped raster by sampling `src` at the coordinates produced by `coord`.
pub(crate) fn resample<T, S>(
    src: &Grid<S>,
    width: usize,
    height: usize,
    mut coord: impl FnMut(usize, usize) -> Option<(T, T)>,
) -> Warped<T>
where
    T: Scalar + Mul<S, Output = T> + Add<S, Output = T>,
    S: Copy + Sub<Output = S>,
{
    let channels = src.channels();
    let zero = T::constant(0.0);
    let mut image = Grid::filled(width, height, channels, zero);
    let mut mask = vec![false; width * height];
    let mut buf = vec![zero; channels];
    for v in 0..height {
        for u in 0..width {
            if let Some((su, sv)) = coord(u, v) {
                if sample_into(src, su, sv, &mut buf) {
                    mask[v * width + u] = true;
                    let base = image.index(u, v, 0);
                    image.data_mut()[base..base + channels].copy_from_slice(&buf);
                }
            }
        }
    }
    Warped { image, mask }
}

/// Samples `src` at an H×W grid of continuous pixel positions.
pub fn bilinear_sample(src: &ImageGrid, coords: &Grid<Pixel>) -> Result<WarpedImage> {
    if coords.channels() != 1 {
        return Err(Error::dims("1 coordinate per pixel", coords.channels()));
    }
    if coords.data().iter().any(|p| !p.u.is_finite() || !p.v.is_finite()) {
        return Err(Error::InvalidArgument("sampling coordinates must be finite".into()));
    }
    Ok(resample(src, coords.width(), coords.height(), |u, v| {
        let p = coords.get(u, v, 0);
        Some((p.u, p.v))
    }))
}

/// Reconstructs one stereo view from the other using a per-pixel disparity.
pub fn warp_stereo(
    src: &ImageGrid,
    disp: &DisparityField,
    direction: StereoDirection,
) -> Result<WarpedImage> {
    warp_stereo_generic(src, disp.grid(), direction)
}

pub fn warp_stereo_generic<T>(
    src: &ImageGrid,
    disp: &Grid<T>,
    direction: StereoDirection,
) -> Result<Warped<T>>
where
    T: Scalar + Mul<f64, Output = T> + Add<f64, Output = T>,
{
    src.check_plane(disp)?;
    let sign = direction.sign();
    Ok(resample(src, src.width(), src.height(), |u, v| {
        let d = disp.get(u, v, 0);
        Some((d * sign + u as f64, T::constant(v as f64)))
    }))
}

/// Inverse-warps `src` (the image at t') into the target frame t.
///
/// Each target pixel with depth z is mapped through `pose` (t → t') and
/// intrinsics `k`; pixels that land behind the camera are masked out.
pub fn warp_temporal_image(
    src: &ImageGrid,
    depth: &DepthField,
    k: &Intrinsics,
    pose: &PoseSE3,
) -> Result<WarpedImage> {
    k.validate()?;
    warp_temporal_generic(src, depth.grid(), k, pose)
}

pub fn warp_temporal_generic<T>(
    src: &ImageGrid,
    depth: &Grid<T>,
    k: &Intrinsics<T>,
    pose: &PoseSE3<T>,
) -> Result<Warped<T>>
where
    T: Scalar,
{
    src.check_plane(depth)?;
    let r = rodrigues(&pose.rot);
    Ok(resample(src, src.width(), src.height(), |u, v| {
        let z = depth.get(u, v, 0);
        let (su, sv, zw) = warp_point(u as f64, v as f64, z, k, &r, &pose.trans);
        (zw.value() > 0.0).then_some((su, sv))
    }))
}
