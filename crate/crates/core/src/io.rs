//! File formats: PFM and NPY rasters, PNG previews, trajectories, JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{ImageBuffer, Luma};
use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use npyz::WriterBuilder;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::PoseSE3;
use crate::grid::Grid;
use crate::metrics::Trajectory;

/// Depth previews store `round(depth · DEPTH_PNG_SCALE)` as 16-bit gray.
pub const DEPTH_PNG_SCALE: f64 = 256.0;

fn format_err(format: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        format,
        reason: reason.into(),
    }
}

/// Single-channel little-endian PFM, rows stored top to bottom.
pub fn write_pfm(path: &Path, grid: &Grid<f64>) -> Result<()> {
    if grid.channels() != 1 {
        return Err(Error::dims("1 channel", grid.channels()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "Pf\n{} {}\n-1.0\n", grid.width(), grid.height())?;
    for x in grid.data() {
        w.write_all(&(*x as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads what [`write_pfm`] writes; big-endian files (positive scale) are accepted too.
pub fn read_pfm(path: &Path) -> Result<Grid<f64>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_pfm(&bytes)
}

fn parse_pfm(bytes: &[u8]) -> Result<Grid<f64>> {
    // Three whitespace-terminated header tokens after the magic line.
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos || pos >= bytes.len() {
            return Err(format_err("pfm", "truncated header"));
        }
        let t = std::str::from_utf8(&bytes[start..pos]).map_err(|_| format_err("pfm", "non-ASCII header"))?;
        pos += 1;
        Ok(t.to_string())
    };
    let magic = token()?;
    if magic == "PF" {
        return Err(format_err("pfm", "3-channel PFM is not supported"));
    }
    if magic != "Pf" {
        return Err(format_err("pfm", format!("bad magic {magic:?}")));
    }
    let parse_dim = |s: String| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| format_err("pfm", format!("bad dimension {s:?}")))
    };
    let width = parse_dim(token()?)?;
    let height = parse_dim(token()?)?;
    let scale: f64 = token()?
        .parse()
        .map_err(|_| format_err("pfm", "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err("pfm", "scale must be nonzero"));
    }
    let little = scale < 0.0;
    let body = &bytes[pos..];
    let n = width * height;
    if body.len() != 4 * n {
        return Err(format_err("pfm", format!("expected {} data bytes, found {}", 4 * n, body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            f64::from(if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) })
        })
        .collect();
    Grid::from_vec(width, height, 1, data)
}

/// Exact f64 raster as `.npy`, shape `(height, width)` or `(height, width, channels)`.
pub fn write_npy(path: &Path, grid: &Grid<f64>) -> Result<()> {
    let mut shape = vec![grid.height() as u64, grid.width() as u64];
    if grid.channels() > 1 {
        shape.push(grid.channels() as u64);
    }
    let file = BufWriter::new(File::create(path)?);
    let mut w = npyz::WriteOptions::new()
        .default_dtype()
        .shape(&shape)
        .writer(file)
        .begin_nd()?;
    w.extend(grid.data().iter().copied())?;
    w.finish()?;
    Ok(())
}

pub fn read_npy(path: &Path) -> Result<Grid<f64>> {
    let npy = npyz::NpyFile::new(BufReader::new(File::open(path)?)).map_err(|e| format_err("npy", e.to_string()))?;
    if npy.order() != npyz::Order::C {
        return Err(format_err("npy", "only C-ordered arrays are supported"));
    }
    let shape: Vec<usize> = npy.shape().iter().map(|d| *d as usize).collect();
    let (h, w, c) = match shape.as_slice() {
        [h, w] => (*h, *w, 1),
        [h, w, c] => (*h, *w, *c),
        _ => return Err(format_err("npy", format!("expected a 2-D or 3-D array, got shape {shape:?}"))),
    };
    let data = npy.into_vec::<f64>().map_err(|e| format_err("npy", e.to_string()))?;
    Grid::from_vec(w, h, c, data)
}

/// 8-bit gray preview of an intensity image in [0, 1] (channels averaged).
pub fn write_png_preview(path: &Path, img: &Grid<f64>) -> Result<()> {
    let c = img.channels();
    let buf = ImageBuffer::<Luma<u8>, Vec<u8>>::from_fn(img.width() as u32, img.height() as u32, |u, v| {
        let mean = (0..c).map(|k| img.get(u as usize, v as usize, k)).sum::<f64>() / c as f64;
        Luma([(mean.clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    buf.save(path).map_err(|e| format_err("png", e.to_string()))
}

/// 16-bit depth preview, `round(z · 256)` saturated to the u16 range.
pub fn write_depth_png(path: &Path, depth: &Grid<f64>) -> Result<()> {
    let buf = ImageBuffer::<Luma<u16>, Vec<u16>>::from_fn(depth.width() as u32, depth.height() as u32, |u, v| {
        let z = depth.get(u as usize, v as usize, 0) * DEPTH_PNG_SCALE;
        Luma([if z.is_finite() { z.round().clamp(0.0, u16::MAX as f64) as u16 } else { 0 }])
    });
    buf.save(path).map_err(|e| format_err("png", e.to_string()))
}

pub fn read_depth_png(path: &Path) -> Result<Grid<f64>> {
    let img = image::open(path).map_err(|e| format_err("png", e.to_string()))?.into_luma16();
    let (w, h) = img.dimensions();
    Grid::from_vec(
        w as usize,
        h as usize,
        1,
        img.pixels().map(|p| f64::from(p.0[0]) / DEPTH_PNG_SCALE).collect(),
    )
}

/// Layout of a trajectory text file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryFormat {
    /// `timestamp tx ty tz qx qy qz qw`
    TimestampQuaternion,
    /// Twelve values per line: a row-major 3×4 `[R | t]`; timestamps are line indices.
    Matrix3x4,
}

/// Parses a trajectory, detecting the layout from the column count.
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_trajectory(text: &str) -> Result<(Trajectory, TrajectoryFormat)> {
    let mut format = None;
    let (mut stamps, mut poses) = (Vec::new(), Vec::new());
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err("trajectory", format!("line {}: {e}", lineno + 1)))?;
        let this = match vals.len() {
            8 => TrajectoryFormat::TimestampQuaternion,
            12 => TrajectoryFormat::Matrix3x4,
            n => {
                return Err(format_err(
                    "trajectory",
                    format!("line {}: {n} columns; expected 8 (timestamp + quaternion) or 12 (3x4 matrix)", lineno + 1),
                ))
            }
        };
        if *format.get_or_insert(this) != this {
            return Err(format_err("trajectory", format!("line {}: mixed layouts", lineno + 1)));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(format_err("trajectory", format!("line {}: non-finite value", lineno + 1)));
        }
        match this {
            TrajectoryFormat::TimestampQuaternion => {
                let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
                if q.norm() < 1e-12 {
                    return Err(format_err("trajectory", format!("line {}: zero quaternion", lineno + 1)));
                }
                let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
                stamps.push(vals[0]);
                poses.push(PoseSE3::from_parts(r.matrix(), &Vector3::new(vals[1], vals[2], vals[3])));
            }
            TrajectoryFormat::Matrix3x4 => {
                let m = Matrix3::new(vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10]);
                // Project onto SO(3) to absorb rounding in the file.
                let r = Rotation3::from_matrix(&m);
                stamps.push(poses.len() as f64);
                poses.push(PoseSE3::from_parts(r.matrix(), &Vector3::new(vals[3], vals[7], vals[11])));
            }
        }
    }
    let format = format.ok_or_else(|| format_err("trajectory", "no poses found"))?;
    Ok((Trajectory::new(stamps, poses)?, format))
}

pub fn read_trajectory(path: &Path) -> Result<(Trajectory, TrajectoryFormat)> {
    parse_trajectory(&std::fs::read_to_string(path)?)
}

pub fn format_trajectory(traj: &Trajectory, format: TrajectoryFormat) -> String {
    let mut out = String::new();
    for (t, p) in traj.timestamps.iter().zip(&traj.poses) {
        let r = p.rotation_matrix();
        match format {
            TrajectoryFormat::TimestampQuaternion => {
                let q = UnitQuaternion::from_matrix(&r);
                out.push_str(&format!(
                    "{t} {} {} {} {} {} {} {}\n",
                    p.trans[0], p.trans[1], p.trans[2], q.i, q.j, q.k, q.w
                ));
            }
            TrajectoryFormat::Matrix3x4 => {
                let row = |i: usize| format!("{} {} {} {}", r[(i, 0)], r[(i, 1)], r[(i, 2)], p.trans[i]);
                out.push_str(&format!("{} {} {}\n", row(0), row(1), row(2)));
            }
        }
    }
    out
}

pub fn write_trajectory(path: &Path, traj: &Trajectory, format: TrajectoryFormat) -> Result<()> {
    std::fs::write(path, format_trajectory(traj, format))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err("json", e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = BufReader::new(File::open(path)?);
    serde_json::from_reader(file).map_err(|e| format_err("json", format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose_compose;
    use proptest::prelude::*;

    #[test]
    fn pfm_header_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let g = Grid::from_fn(3, 2, 1, |u, v, _| (10 * v + u) as f64);
        write_pfm(&p, &g).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"Pf\n3 2\n-1.0\n"));
        let body = &bytes[b"Pf\n3 2\n-1.0\n".len()..];
        // first stored value is the top-left pixel
        assert_eq!(f32::from_le_bytes([body[0], body[1], body[2], body[3]]), 0.0);
        assert_eq!(f32::from_le_bytes([body[12], body[13], body[14], body[15]]), 10.0);
        assert_eq!(read_pfm(&p).unwrap(), g);
    }

    #[test]
    fn pfm_rejects_malformed_files() {
        for bad in [&b"P5\n1 1\n-1\n\0\0\0\0"[..], b"Pf\n2 2\n-1\n\0\0\0\0", b"Pf\n0 1\n-1\n", b"PF\n1 1\n-1\n"] {
            assert!(matches!(parse_pfm(bad), Err(Error::Format { .. })), "{bad:?}");
        }
        let mut be = b"Pf\n1 1\n1.0\n".to_vec();
        be.extend_from_slice(&2.5f32.to_be_bytes());
        assert_eq!(parse_pfm(&be).unwrap().data(), &[2.5]);
    }

    #[test]
    fn npy_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.npy");
        let g = Grid::from_fn(5, 3, 1, |u, v, _| (u as f64 + 0.1).ln() / (v as f64 + 3.0));
        write_npy(&p, &g).unwrap();
        assert_eq!(read_npy(&p).unwrap(), g);
        let c3 = Grid::from_fn(2, 2, 3, |u, v, c| (u + 2 * v + 4 * c) as f64 / 7.0);
        write_npy(&p, &c3).unwrap();
        assert_eq!(read_npy(&p).unwrap(), c3);
    }

    #[test]
    fn depth_png_uses_documented_scale() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let g = Grid::from_vec(3, 1, 1, vec![1.0, 5.5, 1000.0]).unwrap();
        write_depth_png(&p, &g).unwrap();
        assert_eq!(read_depth_png(&p).unwrap().data(), &[1.0, 5.5, u16::MAX as f64 / 256.0]);
    }

    fn poses() -> Vec<PoseSE3> {
        (0..5)
            .map(|i| PoseSE3::new([0.1 * i as f64, -0.05, 0.02 * i as f64], [i as f64, 0.5, -0.25 * i as f64]))
            .collect()
    }

    #[test]
    fn trajectory_formats_round_trip_and_are_detected() {
        let traj = Trajectory::new(vec![0.5, 1.0, 1.5, 2.0, 2.5], poses()).unwrap();
        for fmt in [TrajectoryFormat::TimestampQuaternion, TrajectoryFormat::Matrix3x4] {
            let (back, detected) = parse_trajectory(&format_trajectory(&traj, fmt)).unwrap();
            assert_eq!(detected, fmt);
            for (a, b) in back.poses.iter().zip(&traj.poses) {
                let d = pose_compose(&crate::geometry::pose_inverse(a), b);
                assert!(d.rotation_angle() < 1e-12 && d.translation().norm() < 1e-12);
            }
        }
        let (back, _) = parse_trajectory(&format_trajectory(&traj, TrajectoryFormat::TimestampQuaternion)).unwrap();
        assert_eq!(back.timestamps, traj.timestamps);
    }

    #[test]
    fn trajectory_format_errors() {
        assert!(parse_trajectory("1 2 3\n").is_err());
        assert!(parse_trajectory("# only a comment\n").is_err());
        let mixed = "0 0 0 0 0 0 0 1\n1 0 0 0 0 1 0 0 0 0 1 0\n";
        assert!(parse_trajectory(mixed).is_err());
        assert!(parse_trajectory("1 0 0 0 0 0 0 1\n0 0 0 0 0 0 0 1\n").is_err());
    }

    proptest! {
        #[test]
        fn pfm_round_trip_is_bit_exact(vals in prop::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), 1..64)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.pfm");
            let n = vals.len();
            let g = Grid::from_vec(n, 1, 1, vals.iter().map(|x| f64::from(*x)).collect()).unwrap();
            write_pfm(&p, &g).unwrap();
            let back = read_pfm(&p).unwrap();
            for (a, b) in back.data().iter().zip(&vals) {
                prop_assert_eq!((*a as f32).to_bits(), b.to_bits());
            }
        }
    }
}
