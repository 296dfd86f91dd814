//! On-disk layout of a generated quadruplet.
//!
//! Images are stored as `.npy` (exact f64) with 8-bit PNG previews. Ground
//! truth depth and disparities are stored as `.npy` and `.pfm`. `manifest.json`
//! carries the scene description, ground-truth pose and intrinsics, and the
//! file list.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PoseSE3};
use crate::grid::{DepthField, DisparityField};
use crate::io::{read_json, read_npy, write_depth_png, write_json, write_npy, write_pfm, write_png_preview};
use crate::losses::ImageQuad;
use crate::synth::{Quadruplet, SceneSpec};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

const IMAGES: [&str; 4] = ["left", "right", "left_next", "right_next"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub generator: String,
    pub scene: SceneSpec,
    pub gt_pose: PoseSE3,
    pub gt_intrinsics: Intrinsics,
    pub baseline: f64,
    pub files: Vec<String>,
}

/// Writes every artifact of `quad` into `dir` (created if missing) and returns the manifest.
pub fn save_quadruplet(dir: &Path, spec: &SceneSpec, quad: &Quadruplet) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let images = [
        &quad.images.left,
        &quad.images.right,
        &quad.images.left_next,
        &quad.images.right_next,
    ];
    for (name, img) in IMAGES.iter().zip(images) {
        write_npy(&dir.join(format!("{name}.npy")), img)?;
        write_png_preview(&dir.join(format!("{name}.png")), img)?;
        files.push(format!("{name}.npy"));
        files.push(format!("{name}.png"));
    }
    let rasters = [
        ("gt_depth", quad.gt_depth_l.grid()),
        ("gt_disp_l", quad.gt_disp_l.grid()),
        ("gt_disp_r", quad.gt_disp_r.grid()),
    ];
    for (name, grid) in rasters {
        write_npy(&dir.join(format!("{name}.npy")), grid)?;
        write_pfm(&dir.join(format!("{name}.pfm")), grid)?;
        files.push(format!("{name}.npy"));
        files.push(format!("{name}.pfm"));
    }
    write_depth_png(&dir.join("gt_depth.png"), quad.gt_depth_l.grid())?;
    files.push("gt_depth.png".into());
    write_json(&dir.join("gt_pose.json"), &quad.gt_pose)?;
    write_json(&dir.join("gt_intrinsics.json"), &quad.gt_intrinsics)?;
    files.push("gt_pose.json".into());
    files.push("gt_intrinsics.json".into());

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        generator: format!("stdepth {}", env!("CARGO_PKG_VERSION")),
        scene: spec.clone(),
        gt_pose: quad.gt_pose,
        gt_intrinsics: quad.gt_intrinsics,
        baseline: quad.baseline,
        files,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Reads a directory written by [`save_quadruplet`].
pub fn load_quadruplet(dir: &Path) -> Result<(Manifest, Quadruplet)> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format {
            format: "manifest",
            reason: format!("unsupported format_version {}", manifest.format_version),
        });
    }
    let [left, right, left_next, right_next] = IMAGES.map(|n| read_npy(&dir.join(format!("{n}.npy"))));
    let images = ImageQuad {
        left: left?,
        right: right?,
        left_next: left_next?,
        right_next: right_next?,
    };
    images.validate()?;
    let (w, h) = (images.width(), images.height());
    if (w, h) != (manifest.scene.width, manifest.scene.height) {
        return Err(Error::dims(
            format!("{}x{}", manifest.scene.width, manifest.scene.height),
            format!("{w}x{h}"),
        ));
    }
    manifest.gt_intrinsics.validate_for(w, h)?;
    let quad = Quadruplet {
        gt_depth_l: DepthField::new(read_npy(&dir.join("gt_depth.npy"))?)?,
        gt_disp_l: DisparityField::new(read_npy(&dir.join("gt_disp_l.npy"))?)?,
        gt_disp_r: DisparityField::new(read_npy(&dir.join("gt_disp_r.npy"))?)?,
        images,
        gt_pose: manifest.gt_pose,
        gt_intrinsics: manifest.gt_intrinsics,
        baseline: manifest.baseline,
    };
    for g in [quad.gt_depth_l.grid(), quad.gt_disp_l.grid(), quad.gt_disp_r.grid()] {
        if (g.width(), g.height()) != (w, h) {
            return Err(Error::dims(format!("{w}x{h}"), g.shape_string()));
        }
    }
    Ok((manifest, quad))
}
