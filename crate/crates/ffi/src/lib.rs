//! C ABI over `stdepth`.
//!
//! Every function returns a [`StdepthStatus`]. On failure a message is kept
//! per thread and can be read with [`stdepth_last_error`]. Objects are opaque
//! handles created by `*_new`/`*_generate`/`*_load` functions and released by
//! the matching `*_free`. Raster buffers are row-major `height × width` f64.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use stdepth::config::RunConfig;
use stdepth::dataset::{load_quadruplet, save_quadruplet};
use stdepth::geometry::Intrinsics;
use stdepth::grid::Grid;
use stdepth::metrics::depth_metrics;
use stdepth::observability::{focal_tolerance, verify_uniqueness, Identifiability};
use stdepth::optim::{optimize, OptimReport, Problem};
use stdepth::synth::{make_quadruplet, Quadruplet, SceneSpec};
use stdepth::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StdepthStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numeric = 4,
    Io = 5,
    BufferTooSmall = 6,
    Diverged = 7,
    Panic = 8,
}

impl From<&Error> for StdepthStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => StdepthStatus::Config,
            Error::InvalidArgument(_) | Error::InvalidIntrinsics(_) | Error::Dimension { .. } => {
                StdepthStatus::InvalidArgument
            }
            Error::Io(_) | Error::Format { .. } => StdepthStatus::Io,
            Error::BehindCamera { .. }
            | Error::InfiniteDepth(_)
            | Error::DegenerateMask(_)
            | Error::NonFinite { .. }
            | Error::NoIntersection { .. }
            | Error::AlignmentUnderdetermined(_) => StdepthStatus::Numeric,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: StdepthStatus, msg: impl Into<String>) -> StdepthStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), StdepthStatus>) -> StdepthStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StdepthStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(StdepthStatus::Panic, format!("panic: {msg}"))
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, StdepthStatus>;
}

impl<T> OrStatus<T> for stdepth::Result<T> {
    fn or_status(self) -> Result<T, StdepthStatus> {
        self.map_err(|e| fail((&e).into(), e.to_string()))
    }
}

unsafe fn non_null<'a, T>(p: *const T, name: &str) -> Result<&'a T, StdepthStatus> {
    p.as_ref()
        .ok_or_else(|| fail(StdepthStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, StdepthStatus> {
    p.as_mut()
        .ok_or_else(|| fail(StdepthStatus::NullPointer, format!("{name} is null")))
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, StdepthStatus> {
    if p.is_null() {
        return Err(fail(StdepthStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(StdepthStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn read_buf<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], StdepthStatus> {
    if p.is_null() {
        return Err(fail(StdepthStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn copy_out(grid: &Grid<f64>, out: *mut f64, len: usize) -> Result<(), StdepthStatus> {
    if out.is_null() {
        return Err(fail(StdepthStatus::NullPointer, "output buffer is null"));
    }
    let data = grid.data();
    if len < data.len() {
        return Err(fail(
            StdepthStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {}", data.len()),
        ));
    }
    ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
    Ok(())
}

/// Last error message on this thread, or null. Valid until the next call into this library.
#[no_mangle]
pub extern "C" fn stdepth_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stdepth_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Synthetic stereo-temporal scene with ground truth.
pub struct StdepthScene {
    spec: SceneSpec,
    quad: Quadruplet,
}

/// Parsed run configuration.
pub struct StdepthConfig {
    config: RunConfig,
}

/// Outcome of one optimisation.
pub struct StdepthResult {
    report: OptimReport,
    depth: Grid<f64>,
}

/// Renders a preset scene. `width`/`height` of 0 keep the preset size.
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stdepth_scene_generate(
    preset: *const c_char,
    seed: u64,
    width: usize,
    height: usize,
    out: *mut *mut StdepthScene,
) -> StdepthStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let mut spec = SceneSpec::preset(c_str(preset, "preset")?, seed).or_status()?;
        if width != 0 || height != 0 {
            let (w, h) = (if width == 0 { spec.width } else { width }, if height == 0 { spec.height } else { height });
            spec = spec.with_size(w, h);
        }
        let quad = make_quadruplet(&spec).or_status()?;
        *out = Box::into_raw(Box::new(StdepthScene { spec, quad }));
        Ok(())
    })
}

/// Loads a directory written by `stdepth gen` or [`stdepth_scene_save`].
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stdepth_scene_load(dir: *const c_char, out: *mut *mut StdepthScene) -> StdepthStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let (manifest, quad) = load_quadruplet(&PathBuf::from(c_str(dir, "dir")?)).or_status()?;
        *out = Box::into_raw(Box::new(StdepthScene {
            spec: manifest.scene,
            quad,
        }));
        Ok(())
    })
}

/// # Safety
/// `scene` must come from this library; `dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn stdepth_scene_save(scene: *const StdepthScene, dir: *const c_char) -> StdepthStatus {
    guard(|| {
        let s = non_null(scene, "scene")?;
        save_quadruplet(&PathBuf::from(c_str(dir, "dir")?), &s.spec, &s.quad).or_status()?;
        Ok(())
    })
}

/// # Safety
/// `scene` must come from this library; the outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn stdepth_scene_size(
    scene: *const StdepthScene,
    width: *mut usize,
    height: *mut usize,
) -> StdepthStatus {
    guard(|| {
        let s = non_null(scene, "scene")?;
        *out_ptr(width, "width")? = s.quad.images.width();
        *out_ptr(height, "height")? = s.quad.images.height();
        Ok(())
    })
}

/// Ground-truth intrinsics `[fx, fy, x0, y0]` and pose `[rx, ry, rz, tx, ty, tz]`.
///
/// # Safety
/// `scene` must come from this library; `intrinsics` must hold 4 and `pose` 6 values.
#[no_mangle]
pub unsafe extern "C" fn stdepth_scene_ground_truth(
    scene: *const StdepthScene,
    intrinsics: *mut f64,
    pose: *mut f64,
) -> StdepthStatus {
    guard(|| {
        let s = non_null(scene, "scene")?;
        let k = s.quad.gt_intrinsics.as_array();
        let p = s.quad.gt_pose;
        if intrinsics.is_null() || pose.is_null() {
            return Err(fail(StdepthStatus::NullPointer, "output array is null"));
        }
        ptr::copy_nonoverlapping(k.as_ptr(), intrinsics, 4);
        ptr::copy_nonoverlapping(p.rot.as_ptr(), pose, 3);
        ptr::copy_nonoverlapping(p.trans.as_ptr(), pose.add(3), 3);
        Ok(())
    })
}

/// Copies the left ground-truth depth into `out` (`len ≥ width·height`).
///
/// # Safety
/// `scene` must come from this library; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn stdepth_scene_gt_depth(scene: *const StdepthScene, out: *mut f64, len: usize) -> StdepthStatus {
    guard(|| copy_out(non_null(scene, "scene")?.quad.gt_depth_l.grid(), out, len))
}

/// # Safety
/// `scene` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stdepth_scene_free(scene: *mut StdepthScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Parses `key = value` config text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stdepth_config_parse(text: *const c_char, out: *mut *mut StdepthConfig) -> StdepthStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let config = RunConfig::parse(c_str(text, "text")?).or_status()?;
        *out = Box::into_raw(Box::new(StdepthConfig { config }));
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stdepth_config_free(config: *mut StdepthConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Optimises depth, pose and intrinsics for `scene` under `config`.
///
/// A diverged run still produces a result (with the last finite variables)
/// and returns [`StdepthStatus::Diverged`].
///
/// # Safety
/// Handles must come from this library and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stdepth_optimize(
    scene: *const StdepthScene,
    config: *const StdepthConfig,
    out: *mut *mut StdepthResult,
) -> StdepthStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let s = non_null(scene, "scene")?;
        let c = &non_null(config, "config")?.config;
        let mut problem = Problem::from_quadruplet(&s.quad, &c.init, c.frozen, c.weights, c.seed).or_status()?;
        let report = optimize(&mut problem, &c.optim).or_status()?;
        let diverged = report.diverged();
        let reason = format!("{:?}", report.status);
        *out = Box::into_raw(Box::new(StdepthResult {
            depth: problem.depth(),
            report,
        }));
        if diverged {
            return Err(fail(StdepthStatus::Diverged, reason));
        }
        Ok(())
    })
}

/// Final loss and number of executed steps.
///
/// # Safety
/// `result` must come from this library; outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn stdepth_result_summary(
    result: *const StdepthResult,
    final_loss: *mut f64,
    steps: *mut usize,
) -> StdepthStatus {
    guard(|| {
        let r = non_null(result, "result")?;
        *out_ptr(final_loss, "final_loss")? = r.report.final_loss.map_or(f64::NAN, |l| l.total);
        *out_ptr(steps, "steps")? = r.report.steps;
        Ok(())
    })
}

/// Estimated intrinsics `[fx, fy, x0, y0]` and pose `[rx, ry, rz, tx, ty, tz]`.
///
/// # Safety
/// `result` must come from this library; `intrinsics` must hold 4 and `pose` 6 values.
#[no_mangle]
pub unsafe extern "C" fn stdepth_result_camera(
    result: *const StdepthResult,
    intrinsics: *mut f64,
    pose: *mut f64,
) -> StdepthStatus {
    guard(|| {
        let r = non_null(result, "result")?;
        if intrinsics.is_null() || pose.is_null() {
            return Err(fail(StdepthStatus::NullPointer, "output array is null"));
        }
        let k = r.report.final_intrinsics.as_array();
        let p = r.report.final_pose;
        ptr::copy_nonoverlapping(k.as_ptr(), intrinsics, 4);
        ptr::copy_nonoverlapping(p.rot.as_ptr(), pose, 3);
        ptr::copy_nonoverlapping(p.trans.as_ptr(), pose.add(3), 3);
        Ok(())
    })
}

/// Copies the estimated left depth into `out` (`len ≥ width·height`).
///
/// # Safety
/// `result` must come from this library; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn stdepth_result_depth(result: *const StdepthResult, out: *mut f64, len: usize) -> StdepthStatus {
    guard(|| copy_out(&non_null(result, "result")?.depth, out, len))
}

/// # Safety
/// `result` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stdepth_result_free(result: *mut StdepthResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StdepthDepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub count: usize,
}

/// Depth metrics over pixels with `0 < gt ≤ cap`.
///
/// # Safety
/// `pred` and `gt` must hold `width·height` values; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stdepth_depth_metrics(
    pred: *const f64,
    gt: *const f64,
    width: usize,
    height: usize,
    cap: f64,
    median_scale: bool,
    out: *mut StdepthDepthMetrics,
) -> StdepthStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let n = width
            .checked_mul(height)
            .ok_or_else(|| fail(StdepthStatus::InvalidArgument, "width·height overflows"))?;
        let p = Grid::from_vec(width, height, 1, read_buf(pred, n, "pred")?.to_vec()).or_status()?;
        let g = Grid::from_vec(width, height, 1, read_buf(gt, n, "gt")?.to_vec()).or_status()?;
        let m = depth_metrics(&p, &g, cap, median_scale).or_status()?;
        *out = StdepthDepthMetrics {
            abs_rel: m.abs_rel,
            sq_rel: m.sq_rel,
            rmse: m.rmse,
            rmse_log: m.rmse_log,
            delta1: m.delta1,
            delta2: m.delta2,
            delta3: m.delta3,
            count: m.count,
        };
        Ok(())
    })
}

fn intrinsics(k: &[f64]) -> Result<Intrinsics, StdepthStatus> {
    Intrinsics::new(k[0], k[1], k[2], k[3]).or_status()
}

/// Focal-length tolerance for a rotation. An unbounded tolerance is reported as `+inf`.
///
/// # Safety
/// `k` must hold `[fx, fy, x0, y0]`; outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn stdepth_focal_tolerance(
    k: *const f64,
    width: f64,
    height: f64,
    rx: f64,
    ry: f64,
    delta_fx: *mut f64,
    delta_fy: *mut f64,
) -> StdepthStatus {
    guard(|| {
        let k = intrinsics(read_buf(k, 4, "k")?)?;
        let t = focal_tolerance(&k, width, height, rx, ry).or_status()?;
        *out_ptr(delta_fx, "delta_fx")? = t.delta_fx.unwrap_or(f64::INFINITY);
        *out_ptr(delta_fy, "delta_fy")? = t.delta_fy.unwrap_or(f64::INFINITY);
        Ok(())
    })
}

/// Whether `K R K⁻¹` determines `K` (multi-start check). `identifiable` is set
/// to 1 if so, 0 if another `K` reproduces it, -1 if no trial converged.
///
/// # Safety
/// `k` must hold 4 values, `rotation` 3; `identifiable` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stdepth_verify_uniqueness(
    k: *const f64,
    rotation: *const f64,
    trials: usize,
    seed: u64,
    identifiable: *mut i32,
) -> StdepthStatus {
    guard(|| {
        let k = intrinsics(read_buf(k, 4, "k")?)?;
        let r = read_buf(rotation, 3, "rotation")?;
        let report = verify_uniqueness(&k, &[r[0], r[1], r[2]], trials, seed).or_status()?;
        *out_ptr(identifiable, "identifiable")? = match report.status {
            Identifiability::Identifiable => 1,
            Identifiability::NotIdentifiable { .. } => 0,
            Identifiability::Inconclusive => -1,
        };
        Ok(())
    })
}
