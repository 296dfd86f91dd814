//! Synthetic ground truth: textured planar scenes rendered as stereo pairs at
//! two instants, with exact depth, disparity, egomotion and intrinsics.
//!
//! Every preset is the interior of a convex polyhedral region that contains
//! all four camera centres, so the first plane hit along a ray is the visible
//! surface and no view has occlusions. The texture is a band-limited solid
//! field (a sum of 3D plane waves) evaluated at the surface point, which keeps
//! intensities continuous across the junction of two planes.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose_compose, pose_inverse, Intrinsics, PoseSE3};
use crate::grid::{DepthField, DisparityField, Grid, ImageGrid};
use crate::losses::ImageQuad;

pub const PRESETS: [&str; 4] = ["plane", "slanted", "two-planes", "corridor"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureKind {
    /// Random superposition of plane waves (a smoothed random field).
    SmoothNoise,
    /// Sum of three axis-aligned sinusoids.
    SinusoidGrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub kind: TextureKind,
    /// Shortest wavelength, in pixels, as seen at the scene's reference depth
    /// (the nearest plane anchor).
    pub wavelength_px: f64,
    /// Peak deviation from mid-grey; values stay in `[0.5 − c, 0.5 + c]`.
    pub contrast: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        TextureSpec {
            kind: TextureKind::SmoothNoise,
            wavelength_px: 24.0,
            contrast: 0.4,
        }
    }
}

/// Plane through the anchor point `(0, 0, offset)` with the given normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub normal: [f64; 3],
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub baseline: f64,
    /// Egomotion t → t': a point `X` in the left camera frame at t has
    /// coordinates `R·X + t` in the left camera frame at t'.
    pub motion: PoseSE3,
    pub planes: Vec<PlaneSpec>,
    pub texture: TextureSpec,
    pub seed: u64,
}

fn tilted_normal(about_y_deg: f64, about_x_deg: f64) -> [f64; 3] {
    let (ay, ax) = (about_y_deg.to_radians(), about_x_deg.to_radians());
    let n = Vector3::new(ay.sin() * ax.cos(), ax.sin(), ay.cos() * ax.cos());
    [n.x, n.y, n.z]
}

impl SceneSpec {
    /// Named scene at the default 64×64 resolution.
    ///
    /// | preset       | geometry                                                        |
    /// |--------------|-----------------------------------------------------------------|
    /// | `plane`      | fronto-parallel plane at 5 m                                    |
    /// | `slanted`    | plane through (0, 0, 6) tilted 30° about the y axis             |
    /// | `two-planes` | concave vertical crease at 6 m, faces tilted ±30° about y       |
    /// | `corridor`   | four walls converging on (0, 0, 12), like looking down a tunnel |
    ///
    /// All presets use fx = fy = 56 px, principal point (31.5, 31.5), a 0.5 m
    /// baseline and motion rot = (0, 0.02, 0) rad, trans = (0.25, 0, 0.1) m.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let planes = match name {
            "plane" => vec![PlaneSpec {
                normal: [0.0, 0.0, 1.0],
                offset: 5.0,
            }],
            "slanted" => vec![PlaneSpec {
                normal: tilted_normal(30.0, 0.0),
                offset: 6.0,
            }],
            "two-planes" => vec![
                PlaneSpec {
                    normal: tilted_normal(30.0, 0.0),
                    offset: 6.0,
                },
                PlaneSpec {
                    normal: tilted_normal(-30.0, 0.0),
                    offset: 6.0,
                },
            ],
            "corridor" => {
                // x = ±(3 − z/4), y = ±(2 − z/6): all four walls pass through (0, 0, 12).
                let wall = |n: [f64; 3]| {
                    let v = Vector3::from(n).normalize();
                    PlaneSpec {
                        normal: [v.x, v.y, v.z],
                        offset: 12.0,
                    }
                };
                vec![
                    wall([1.0, 0.0, 0.25]),
                    wall([-1.0, 0.0, 0.25]),
                    wall([0.0, 1.0, 1.0 / 6.0]),
                    wall([0.0, -1.0, 1.0 / 6.0]),
                ]
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown scene preset {other:?}; expected one of {PRESETS:?}"
                )))
            }
        };
        Ok(SceneSpec {
            name: name.to_string(),
            width: 64,
            height: 64,
            intrinsics: Intrinsics {
                fx: 56.0,
                fy: 56.0,
                x0: 31.5,
                y0: 31.5,
            },
            baseline: 0.5,
            motion: PoseSE3::new([0.0, 0.02, 0.0], [0.25, 0.0, 0.1]),
            planes,
            texture: TextureSpec::default(),
            seed,
        })
    }

    /// Changes the resolution, scaling the intrinsics with it.
    pub fn with_size(mut self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        let k = self.intrinsics;
        self.intrinsics = Intrinsics {
            fx: k.fx * sx,
            fy: k.fy * sy,
            x0: (k.x0 + 0.5) * sx - 0.5,
            y0: (k.y0 + 0.5) * sy - 0.5,
        };
        self.width = width;
        self.height = height;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidArgument("scene must be at least 2x2 pixels".into()));
        }
        self.intrinsics.validate_for(self.width, self.height)?;
        if !(self.baseline > 0.0) {
            return Err(Error::InvalidArgument("baseline must be positive".into()));
        }
        if self.planes.is_empty() {
            return Err(Error::InvalidArgument("scene has no planes".into()));
        }
        for p in &self.planes {
            let n = Vector3::from(p.normal).norm();
            if !(n > 0.0) || !(p.offset > 0.0) {
                return Err(Error::InvalidArgument("planes need a nonzero normal and a positive offset".into()));
            }
        }
        if !(self.texture.wavelength_px > 0.0) || !(0.0..=0.5).contains(&self.texture.contrast) {
            return Err(Error::InvalidArgument("texture needs wavelength > 0 and contrast in [0, 0.5]".into()));
        }
        Ok(())
    }
}

/// Solid texture ready for evaluation at world points (meters).
struct Texture {
    waves: Vec<([f64; 3], f64, f64)>,
}

impl Texture {
    fn build(spec: &SceneSpec) -> Self {
        let tex = &spec.texture;
        let reference = spec.planes.iter().map(|p| p.offset).fold(f64::INFINITY, f64::min);
        let wavelength_m = tex.wavelength_px * reference / spec.intrinsics.fx;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let waves = match tex.kind {
            TextureKind::SmoothNoise => {
                let n = 8;
                (0..n)
                    .map(|_| {
                        // Uniform direction on the sphere.
                        let z: f64 = rng.random_range(-1.0..1.0);
                        let phi = rng.random_range(0.0..2.0 * PI);
                        let r = (1.0 - z * z).sqrt();
                        let lambda = wavelength_m * rng.random_range(1.0..3.0);
                        let k = 2.0 * PI / lambda;
                        let phase = rng.random_range(0.0..2.0 * PI);
                        ([k * r * phi.cos(), k * r * phi.sin(), k * z], phase, tex.contrast / n as f64)
                    })
                    .collect()
            }
            TextureKind::SinusoidGrid => {
                let k = 2.0 * PI / (1.5 * wavelength_m);
                (0..3)
                    .map(|axis| {
                        let mut dir = [0.0; 3];
                        dir[axis] = k;
                        (dir, rng.random_range(0.0..2.0 * PI), tex.contrast / 3.0)
                    })
                    .collect()
            }
        };
        Texture { waves }
    }

    fn eval(&self, x: &Vector3<f64>) -> f64 {
        0.5 + self
            .waves
            .iter()
            .map(|(k, phase, amp)| amp * (k[0] * x.x + k[1] * x.y + k[2] * x.z + phase).sin())
            .sum::<f64>()
    }
}

struct Plane {
    normal: Vector3<f64>,
    anchor: Vector3<f64>,
}

/// Renders the scene from a camera whose camera-to-world pose is `pose`
/// (world = left camera frame at t). Returns intensity and depth.
pub fn render_view(spec: &SceneSpec, pose: &PoseSE3) -> Result<(ImageGrid, DepthField)> {
    spec.validate()?;
    let planes: Vec<Plane> = spec
        .planes
        .iter()
        .map(|p| Plane {
            normal: Vector3::from(p.normal).normalize(),
            anchor: Vector3::new(0.0, 0.0, p.offset),
        })
        .collect();
    let texture = Texture::build(spec);
    let (w, h) = (spec.width, spec.height);
    let k = spec.intrinsics;
    let rot = pose.rotation_matrix();
    let centre = pose.translation();

    let rows: Vec<Result<Vec<(f64, f64)>>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    let ray_cam = Vector3::new((u as f64 - k.x0) / k.fx, (v as f64 - k.y0) / k.fy, 1.0);
                    let ray = rot * ray_cam;
                    let mut best: Option<(f64, usize)> = None;
                    for (i, p) in planes.iter().enumerate() {
                        let denom = p.normal.dot(&ray);
                        if denom == 0.0 {
                            continue;
                        }
                        let lambda = p.normal.dot(&(p.anchor - centre)) / denom;
                        if lambda > 0.0 && best.is_none_or(|(b, _)| lambda < b) {
                            best = Some((lambda, i));
                        }
                    }
                    let (lambda, _) = best.ok_or(Error::NoIntersection { u, v })?;
                    // ray_cam has unit z, so the ray parameter is the depth.
                    Ok((texture.eval(&(centre + ray * lambda)), lambda))
                })
                .collect()
        })
        .collect();

    let mut image = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    for row in rows {
        for (i, z) in row? {
            image.push(i);
            depth.push(z);
        }
    }
    Ok((
        Grid::from_vec(w, h, 1, image)?,
        DepthField::new(Grid::from_vec(w, h, 1, depth)?)?,
    ))
}

/// Stereo-temporal image quadruplet with exact ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadruplet {
    pub images: ImageQuad,
    pub gt_depth_l: DepthField,
    pub gt_disp_l: DisparityField,
    pub gt_disp_r: DisparityField,
    pub gt_pose: PoseSE3,
    pub gt_intrinsics: Intrinsics,
    pub baseline: f64,
}

/// Camera-to-world pose of the right camera relative to the left one.
///
/// With `Îˡ(u) = Iʳ(u + d)` and `d = B·fx/z > 0`, the second camera's centre
/// sits at −B along the left camera's x axis.
pub fn stereo_offset(baseline: f64) -> PoseSE3 {
    PoseSE3::from_translation([-baseline, 0.0, 0.0])
}

pub fn make_quadruplet(spec: &SceneSpec) -> Result<Quadruplet> {
    spec.validate()?;
    let offset = stereo_offset(spec.baseline);
    let next = pose_inverse(&spec.motion);
    let (left, depth_l) = render_view(spec, &PoseSE3::identity())?;
    let (right, depth_r) = render_view(spec, &offset)?;
    let (left_next, _) = render_view(spec, &next)?;
    let (right_next, _) = render_view(spec, &pose_compose(&next, &offset))?;
    let bf = spec.baseline * spec.intrinsics.fx;
    let gt_disp_l = DisparityField::new(depth_l.grid().map(|z| bf / z))?;
    let gt_disp_r = DisparityField::new(depth_r.grid().map(|z| bf / z))?;
    Ok(Quadruplet {
        images: ImageQuad {
            left,
            right,
            left_next,
            right_next,
        },
        gt_depth_l: depth_l,
        gt_disp_l,
        gt_disp_r,
        gt_pose: spec.motion,
        gt_intrinsics: spec.intrinsics,
        baseline: spec.baseline,
    })
}
