//! `stdepth` command line.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numerical
//! failure (divergence, empty masks), 4 I/O or malformed input.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{RunConfig, ENV_PREFIX};
use crate::dataset::{load_quadruplet, save_quadruplet};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PoseSE3};
use crate::grid::Grid;
use crate::io::{
    read_depth_png, read_npy, read_pfm, read_trajectory, write_depth_png, write_json, write_npy, write_pfm,
};
use crate::losses::LOSS_COMPONENTS;
use crate::metrics::{ate, depth_metrics, AteResult, DepthMetrics};
use crate::observability::{
    conjugacy_report, focal_tolerance, verify_uniqueness, ConjugacyReport, FocalTolerance, UniquenessReport,
};
use crate::optim::{optimize, OptimReport, Problem};
use crate::synth::{make_quadruplet, Quadruplet, SceneSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Depth cap applied to evaluations unless overridden, metres.
pub const DEFAULT_DEPTH_CAP: f64 = 80.0;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidIntrinsics(_) => EXIT_CONFIG,
        Error::Io(_) | Error::Format { .. } | Error::Dimension { .. } => EXIT_IO,
        Error::BehindCamera { .. }
        | Error::InfiniteDepth(_)
        | Error::DegenerateMask(_)
        | Error::NonFinite { .. }
        | Error::NoIntersection { .. }
        | Error::AlignmentUnderdetermined(_) => EXIT_NUMERIC,
    }
}

#[derive(Debug, Parser)]
#[command(name = "stdepth", version, about = "Self-supervised stereo-temporal depth, pose and intrinsics")]
pub struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true, env = "STDEPTH_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic stereo-temporal quadruplet with ground truth.
    Gen(GenArgs),
    /// Jointly optimise depth, pose and intrinsics for one quadruplet.
    Optimize(OptimizeArgs),
    /// Standard depth metrics of a prediction against ground truth.
    EvalDepth(EvalDepthArgs),
    /// Absolute trajectory error after alignment.
    EvalPose(EvalPoseArgs),
    /// Conjugacy residuals, intrinsics uniqueness and focal tolerance for a rotation.
    Observability(ObservabilityArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Scene preset: plane, slanted, two-planes or corridor.
    #[arg(long, default_value = "slanted")]
    pub scene: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Take the scene from a run config instead (its `seed` is overridden by `--seed`).
    #[arg(long, conflicts_with_all = ["scene", "width", "height"])]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Run config (`key = value` lines).
    pub config: PathBuf,
    /// Overrides `output`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Overrides `input`.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalDepthArgs {
    /// Predicted depth (.pfm, .npy or 16-bit .png).
    pub pred: PathBuf,
    /// Ground-truth depth, same formats.
    pub gt: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DEPTH_CAP)]
    pub cap: f64,
    /// Rescale the prediction by median(gt)/median(pred) first.
    #[arg(long)]
    pub median_scale: bool,
    /// Directory for metrics.json and metrics.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalPoseArgs {
    /// Predicted trajectory (TUM `t tx ty tz qx qy qz qw` or KITTI 3x4 rows).
    pub pred: PathBuf,
    pub gt: PathBuf,
    /// Similarity instead of rigid alignment.
    #[arg(long)]
    pub with_scale: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ObservabilityArgs {
    #[arg(long)]
    pub fx: f64,
    /// Defaults to `fx`.
    #[arg(long)]
    pub fy: Option<f64>,
    /// Defaults to `(width − 1)/2`.
    #[arg(long)]
    pub x0: Option<f64>,
    /// Defaults to `(height − 1)/2`.
    #[arg(long)]
    pub y0: Option<f64>,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    /// Axis-angle rotation `rx,ry,rz`, radians.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_vec3)]
    pub rotation: [f64; 3],
    /// Translation `tx,ty,tz`, metres.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_vec3, default_value = "0,0,0")]
    pub translation: [f64; 3],
    /// Estimated intrinsics `fx,fy,x0,y0`; defaults to the true ones.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_vec4)]
    pub k_hat: Option<[f64; 4]>,
    #[arg(long, allow_hyphen_values = true, value_parser = parse_vec3)]
    pub rotation_hat: Option<[f64; 3]>,
    #[arg(long, allow_hyphen_values = true, value_parser = parse_vec3)]
    pub translation_hat: Option<[f64; 3]>,
    #[arg(long, default_value_t = 16)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the report as JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_floats<const N: usize>(s: &str) -> std::result::Result<[f64; N], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated numbers, got {s:?}"));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        let v: f64 = p.parse().map_err(|e| format!("{p:?}: {e}"))?;
        *o = v;
        if !v.is_finite() {
            return Err(format!("{p:?} is not finite"));
        }
    }
    Ok(out)
}

fn parse_vec3(s: &str) -> std::result::Result<[f64; 3], String> {
    parse_floats::<3>(s)
}

fn parse_vec4(s: &str) -> std::result::Result<[f64; 4], String> {
    parse_floats::<4>(s)
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_CONFIG;
        }
        // A pool may already exist when called twice in one process; keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::EvalDepth(a) => cmd_eval_depth(a),
        Command::EvalPose(a) => cmd_eval_pose(a),
        Command::Observability(a) => cmd_observability(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        format: "json",
        reason: e.to_string(),
    })?;
    println!("{text}");
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let spec = match &a.config {
        Some(path) => {
            let cfg = RunConfig::parse(&std::fs::read_to_string(path)?)?;
            cfg.scene.build(a.seed)?
        }
        None => {
            let spec = SceneSpec::preset(&a.scene, a.seed)?;
            if a.width.is_some() || a.height.is_some() {
                let (w, h) = (a.width.unwrap_or(spec.width), a.height.unwrap_or(spec.height));
                spec.with_size(w, h)
            } else {
                spec
            }
        }
    };
    let quad = make_quadruplet(&spec)?;
    let manifest = save_quadruplet(&a.out, &spec, &quad)?;
    println!(
        "wrote {} files for scene {} ({}x{}, seed {}) to {}",
        manifest.files.len() + 1,
        spec.name,
        spec.width,
        spec.height,
        spec.seed,
        a.out.display()
    );
    Ok(EXIT_OK)
}

/// Loads a run config from `path`, then applies `STDEPTH_*` environment overrides.
pub fn load_config(path: &Path, env: impl IntoIterator<Item = (String, String)>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg = RunConfig::parse(&text)?;
    let threads_var = format!("{ENV_PREFIX}THREADS");
    cfg.with_env(env.into_iter().filter(|(k, _)| *k != threads_var))
}

#[derive(Clone, Debug, Serialize)]
pub struct PoseError {
    /// Angle of `R̂ Rᵀ`, radians.
    pub rotation_rad: f64,
    /// `‖t̂ − t‖`, metres.
    pub translation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub depth: Option<DepthMetrics>,
    pub depth_median_scaled: Option<DepthMetrics>,
    pub pose: PoseError,
    /// `|p̂ − p|` for `fx, fy, x0, y0`, pixels.
    pub intrinsics_abs_error: [f64; 4],
    pub focal_tolerance: FocalTolerance,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary<'a> {
    pub scene: &'a SceneSpec,
    pub gt_pose: PoseSE3,
    pub gt_intrinsics: Intrinsics,
    pub optimization: &'a OptimReport,
    pub evaluation: Evaluation,
}

pub fn evaluate_run(quad: &Quadruplet, depth: &Grid<f64>, report: &OptimReport) -> Result<Evaluation> {
    let gt = quad.gt_depth_l.grid();
    let dr = report.final_pose.rotation_matrix() * quad.gt_pose.rotation_matrix().transpose();
    let rotation_rad = PoseSE3::from_parts(&dr, &nalgebra::Vector3::zeros()).rotation_angle();
    let translation = (report.final_pose.translation() - quad.gt_pose.translation()).norm();
    let (k, kh) = (quad.gt_intrinsics.as_array(), report.final_intrinsics.as_array());
    let (w, h) = (quad.images.width() as f64, quad.images.height() as f64);
    Ok(Evaluation {
        depth: depth_metrics(depth, gt, DEFAULT_DEPTH_CAP, false).ok(),
        depth_median_scaled: depth_metrics(depth, gt, DEFAULT_DEPTH_CAP, true).ok(),
        pose: PoseError {
            rotation_rad,
            translation,
        },
        intrinsics_abs_error: std::array::from_fn(|i| (kh[i] - k[i]).abs()),
        focal_tolerance: focal_tolerance(&quad.gt_intrinsics, w, h, quad.gt_pose.rot[0], quad.gt_pose.rot[1])?,
    })
}

fn write_trace_csv(path: &Path, report: &OptimReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["step"];
    header.extend(LOSS_COMPONENTS);
    w.write_record(&header).map_err(csv_err)?;
    for (i, l) in report.trace.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(l.components().iter().map(|(_, v)| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format {
            format: "csv",
            reason: format!("{other:?}"),
        },
    }
}

fn cmd_optimize(a: &OptimizeArgs) -> Result<i32> {
    let mut cfg = load_config(&a.config, std::env::vars())?;
    if let Some(o) = &a.output {
        cfg.output = o.clone();
    }
    if let Some(i) = &a.input {
        cfg.input = Some(i.clone());
    }
    cfg.validate()?;
    let (spec, quad) = match &cfg.input {
        Some(dir) => {
            let (m, q) = load_quadruplet(dir)?;
            (m.scene, q)
        }
        None => {
            let spec = cfg.scene.build(cfg.seed)?;
            let q = make_quadruplet(&spec)?;
            (spec, q)
        }
    };
    let out = cfg.output.clone();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.txt"), cfg.to_text())?;

    let mut problem = Problem::from_quadruplet(&quad, &cfg.init, cfg.frozen, cfg.weights, cfg.seed)?;
    let report = optimize(&mut problem, &cfg.optim)?;
    let depth = problem.depth();
    let evaluation = evaluate_run(&quad, &depth, &report)?;

    write_trace_csv(&out.join("trace.csv"), &report)?;
    write_json(&out.join("pose.json"), &report.final_pose)?;
    write_json(&out.join("intrinsics.json"), &report.final_intrinsics)?;
    if cfg.export_depth {
        write_pfm(&out.join("depth.pfm"), &depth)?;
        write_npy(&out.join("depth.npy"), &depth)?;
    }
    if cfg.export_png {
        write_depth_png(&out.join("depth.png"), &depth)?;
    }
    let summary = RunSummary {
        scene: &spec,
        gt_pose: quad.gt_pose,
        gt_intrinsics: quad.gt_intrinsics,
        optimization: &report,
        evaluation,
    };
    write_json(&out.join("report.json"), &summary)?;

    let final_total = report.final_loss.map_or(f64::NAN, |l| l.total);
    println!(
        "{} steps, final loss {final_total:.6e}, converged {}, {:.1}s; outputs in {}",
        report.steps,
        report.converged,
        report.wall_time_s,
        out.display()
    );
    if let Some(m) = &summary.evaluation.depth_median_scaled {
        println!("median-scaled abs_rel {:.4}", m.abs_rel);
    }
    if report.diverged() {
        eprintln!("error: optimisation diverged: {:?}", report.status);
        return Ok(EXIT_NUMERIC);
    }
    Ok(EXIT_OK)
}

/// Reads a single-channel depth map, picking the format from the extension.
pub fn read_depth(path: &Path) -> Result<Grid<f64>> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pfm") => read_pfm(path),
        Some("npy") => read_npy(path),
        Some("png") => read_depth_png(path),
        _ => Err(Error::InvalidArgument(format!(
            "{}: unsupported depth format (expected .pfm, .npy or .png)",
            path.display()
        ))),
    }
}

fn cmd_eval_depth(a: &EvalDepthArgs) -> Result<i32> {
    let pred = read_depth(&a.pred)?;
    let gt = read_depth(&a.gt)?;
    let m = depth_metrics(&pred, &gt, a.cap, a.median_scale)?;
    print_json(&m)?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("metrics.json"), &m)?;
        std::fs::write(
            dir.join("metrics.csv"),
            format!("{}\n{}\n", DepthMetrics::CSV_HEADER, m.csv_row()),
        )?;
    }
    Ok(EXIT_OK)
}

fn cmd_eval_pose(a: &EvalPoseArgs) -> Result<i32> {
    let (pred, _) = read_trajectory(&a.pred)?;
    let (gt, _) = read_trajectory(&a.gt)?;
    let r: AteResult = ate(&pred, &gt, a.with_scale)?;
    print_json(&r)?;
    if let Some(p) = &a.out {
        write_json(p, &r)?;
    }
    Ok(EXIT_OK)
}

#[derive(Clone, Debug, Serialize)]
pub struct ObservabilitySummary {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    pub rotation: [f64; 3],
    pub conjugacy: ConjugacyReport,
    pub uniqueness: UniquenessReport,
    pub focal_tolerance: FocalTolerance,
}

fn cmd_observability(a: &ObservabilityArgs) -> Result<i32> {
    if a.width == 0 || a.height == 0 {
        return Err(Error::InvalidArgument("width and height must be positive".into()));
    }
    let k = Intrinsics::new(
        a.fx,
        a.fy.unwrap_or(a.fx),
        a.x0.unwrap_or((a.width as f64 - 1.0) / 2.0),
        a.y0.unwrap_or((a.height as f64 - 1.0) / 2.0),
    )?;
    let k_hat = match a.k_hat {
        Some(v) => Intrinsics::new(v[0], v[1], v[2], v[3])?,
        None => k,
    };
    let conjugacy = conjugacy_report(
        &k,
        &k_hat,
        &a.rotation,
        &a.rotation_hat.unwrap_or(a.rotation),
        &a.translation,
        &a.translation_hat.unwrap_or(a.translation),
    )?;
    let summary = ObservabilitySummary {
        intrinsics: k,
        width: a.width,
        height: a.height,
        rotation: a.rotation,
        conjugacy,
        uniqueness: verify_uniqueness(&k, &a.rotation, a.trials, a.seed)?,
        focal_tolerance: focal_tolerance(&k, a.width as f64, a.height as f64, a.rotation[0], a.rotation[1])?,
    };
    print_json(&summary)?;
    if let Some(p) = &a.out {
        write_json(p, &summary)?;
    }
    Ok(EXIT_OK)
}
