//! Run configuration as flat `key = value` text.
//!
//! `#` starts a comment. Keys are unique and unknown keys are rejected.
//! `seed` is mandatory. Vectors are comma-separated (`motion_rot = 0,0.02,0`).
//! [`RunConfig::to_text`] writes every key, so a saved config is a complete,
//! reproducible record of a run.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PoseSE3};
use crate::losses::LossWeights;
use crate::optim::{FrozenFlags, InitConfig, OptimConfig};
use crate::synth::SceneSpec;

/// Prefix of environment variables that override config keys (`STDEPTH_LR=0.01`).
pub const ENV_PREFIX: &str = "STDEPTH_";

/// Scene preset plus optional overrides applied in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub preset: String,
    pub width: Option<usize>,
    pub height: Option<usize>,
    /// Replaces the (resized) preset intrinsics.
    pub intrinsics: Option<Intrinsics>,
    pub baseline: Option<f64>,
    pub motion_rot: Option<[f64; 3]>,
    pub motion_trans: Option<[f64; 3]>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            preset: "slanted".into(),
            width: None,
            height: None,
            intrinsics: None,
            baseline: None,
            motion_rot: None,
            motion_trans: None,
        }
    }
}

impl SceneConfig {
    pub fn build(&self, seed: u64) -> Result<SceneSpec> {
        let mut spec = SceneSpec::preset(&self.preset, seed)?;
        if self.width.is_some() || self.height.is_some() {
            let (w, h) = (self.width.unwrap_or(spec.width), self.height.unwrap_or(spec.height));
            spec = spec.with_size(w, h);
        }
        if let Some(k) = self.intrinsics {
            spec.intrinsics = k;
        }
        if let Some(b) = self.baseline {
            spec.baseline = b;
        }
        if let Some(r) = self.motion_rot {
            spec.motion.rot = r;
        }
        if let Some(t) = self.motion_trans {
            spec.motion.trans = t;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    /// Directory written by `gen`; when absent the scene is rendered in memory.
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub weights: LossWeights,
    pub optim: OptimConfig,
    pub init: InitConfig,
    pub frozen: FrozenFlags,
    pub export_depth: bool,
    pub export_png: bool,
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        RunConfig {
            seed,
            scene: SceneConfig::default(),
            input: None,
            output: PathBuf::from("out"),
            weights: LossWeights::default(),
            optim: OptimConfig {
                seed,
                ..OptimConfig::default()
            },
            init: InitConfig::default(),
            frozen: FrozenFlags::default(),
            export_depth: true,
            export_png: true,
        }
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let v3 = |a: &[f64; 3]| format!("{},{},{}", a[0], a[1], a[2]);
        let mut e = vec![("seed", self.seed.to_string()), ("scene", self.scene.preset.clone())];
        let s = &self.scene;
        if let Some(w) = s.width {
            e.push(("width", w.to_string()));
        }
        if let Some(h) = s.height {
            e.push(("height", h.to_string()));
        }
        if let Some(k) = s.intrinsics {
            e.push(("intrinsics", format!("{},{},{},{}", k.fx, k.fy, k.x0, k.y0)));
        }
        if let Some(b) = s.baseline {
            e.push(("baseline", b.to_string()));
        }
        if let Some(r) = &s.motion_rot {
            e.push(("motion_rot", v3(r)));
        }
        if let Some(t) = &s.motion_trans {
            e.push(("motion_trans", v3(t)));
        }
        if let Some(i) = &self.input {
            e.push(("input", i.display().to_string()));
        }
        let (w, o, i, f) = (&self.weights, &self.optim, &self.init, &self.frozen);
        e.extend([
            ("output", self.output.display().to_string()),
            ("lambda_p", w.lambda_p.to_string()),
            ("lambda_te", w.lambda_te.to_string()),
            ("lambda_lr", w.lambda_lr.to_string()),
            ("lambda_r", w.lambda_r.to_string()),
            ("alpha", w.alpha.to_string()),
            ("lr", o.lr.to_string()),
            ("beta1", o.beta1.to_string()),
            ("beta2", o.beta2.to_string()),
            ("epsilon", o.epsilon.to_string()),
            ("steps", o.steps.to_string()),
            ("lr_decay", o.lr_decay.to_string()),
            ("decay_every", o.decay_every.to_string()),
            ("convergence_tol", o.convergence_tol.to_string()),
            ("convergence_window", o.convergence_window.to_string()),
            ("pose_lr_scale", o.pose_lr_scale.to_string()),
            ("intrinsics_lr_scale", o.intrinsics_lr_scale.to_string()),
            ("init_depth", i.depth.to_string()),
            ("init_depth_jitter", i.depth_jitter.to_string()),
            ("init_intrinsics_jitter", i.intrinsics_jitter.to_string()),
            ("init_from_truth", i.from_truth.to_string()),
            ("freeze_disparity", f.disparity.to_string()),
            ("freeze_pose", f.pose.to_string()),
            ("freeze_intrinsics", f.intrinsics.to_string()),
            ("export_depth", self.export_depth.to_string()),
            ("export_png", self.export_png.to_string()),
        ]);
        e
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# stdepth run configuration\n");
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if map.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
        }
        Self::from_map(map)
    }

    /// Applies `STDEPTH_<KEY>` overrides, then re-validates.
    pub fn with_env(&self, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut map: BTreeMap<String, String> =
            self.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        for (name, value) in vars {
            if let Some(key) = name.strip_prefix(ENV_PREFIX) {
                let key = key.to_ascii_lowercase();
                if !KEYS.contains(&key.as_str()) {
                    return Err(Error::Config(format!("{name}: unknown config key {key:?}")));
                }
                map.insert(key, value);
            }
        }
        Self::from_map(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        let seed: u64 = take(&mut map, "seed")?.ok_or_else(|| Error::Config("`seed` is required".into()))?;
        let mut c = RunConfig::new(seed);
        macro_rules! set {
            ($key:literal => $field:expr) => {
                if let Some(v) = take(&mut map, $key)? {
                    $field = v;
                }
            };
        }
        set!("scene" => c.scene.preset);
        c.scene.width = take(&mut map, "width")?;
        c.scene.height = take(&mut map, "height")?;
        if let Some(v) = take::<String>(&mut map, "intrinsics")? {
            let k = floats::<4>("intrinsics", &v)?;
            c.scene.intrinsics = Some(Intrinsics::new(k[0], k[1], k[2], k[3]).map_err(|e| Error::Config(e.to_string()))?);
        }
        c.scene.baseline = take(&mut map, "baseline")?;
        if let Some(v) = take::<String>(&mut map, "motion_rot")? {
            c.scene.motion_rot = Some(floats::<3>("motion_rot", &v)?);
        }
        if let Some(v) = take::<String>(&mut map, "motion_trans")? {
            c.scene.motion_trans = Some(floats::<3>("motion_trans", &v)?);
        }
        c.input = take::<String>(&mut map, "input")?.map(PathBuf::from);
        if let Some(v) = take::<String>(&mut map, "output")? {
            c.output = PathBuf::from(v);
        }
        set!("lambda_p" => c.weights.lambda_p);
        set!("lambda_te" => c.weights.lambda_te);
        set!("lambda_lr" => c.weights.lambda_lr);
        set!("lambda_r" => c.weights.lambda_r);
        set!("alpha" => c.weights.alpha);
        set!("lr" => c.optim.lr);
        set!("beta1" => c.optim.beta1);
        set!("beta2" => c.optim.beta2);
        set!("epsilon" => c.optim.epsilon);
        set!("steps" => c.optim.steps);
        set!("lr_decay" => c.optim.lr_decay);
        set!("decay_every" => c.optim.decay_every);
        set!("convergence_tol" => c.optim.convergence_tol);
        set!("convergence_window" => c.optim.convergence_window);
        set!("pose_lr_scale" => c.optim.pose_lr_scale);
        set!("intrinsics_lr_scale" => c.optim.intrinsics_lr_scale);
        set!("init_depth" => c.init.depth);
        set!("init_depth_jitter" => c.init.depth_jitter);
        set!("init_intrinsics_jitter" => c.init.intrinsics_jitter);
        set!("init_from_truth" => c.init.from_truth);
        set!("freeze_disparity" => c.frozen.disparity);
        set!("freeze_pose" => c.frozen.pose);
        set!("freeze_intrinsics" => c.frozen.intrinsics);
        set!("export_depth" => c.export_depth);
        set!("export_png" => c.export_png);
        debug_assert!(map.is_empty(), "unhandled keys {map:?}");
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.weights.validate().map_err(cfg)?;
        self.optim.validate().map_err(cfg)?;
        if self.input.is_none() {
            self.scene.build(self.seed).map_err(cfg)?;
        }
        if !(self.init.depth > 0.0) || !(self.init.depth_jitter >= 0.0) || !(self.init.intrinsics_jitter >= 0.0) {
            return Err(Error::Config("init_depth must be positive and jitters non-negative".into()));
        }
        Ok(())
    }

    /// Motion of the configured scene, for reports.
    pub fn scene_motion(&self) -> Result<PoseSE3> {
        Ok(self.scene.build(self.seed)?.motion)
    }
}

const KEYS: &[&str] = &[
    "seed",
    "scene",
    "width",
    "height",
    "intrinsics",
    "baseline",
    "motion_rot",
    "motion_trans",
    "input",
    "output",
    "lambda_p",
    "lambda_te",
    "lambda_lr",
    "lambda_r",
    "alpha",
    "lr",
    "beta1",
    "beta2",
    "epsilon",
    "steps",
    "lr_decay",
    "decay_every",
    "convergence_tol",
    "convergence_window",
    "pose_lr_scale",
    "intrinsics_lr_scale",
    "init_depth",
    "init_depth_jitter",
    "init_intrinsics_jitter",
    "init_from_truth",
    "freeze_disparity",
    "freeze_pose",
    "freeze_intrinsics",
    "export_depth",
    "export_png",
];

fn take<T: FromStr>(map: &mut BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    map.remove(key)
        .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))))
        .transpose()
}

fn floats<const N: usize>(key: &str, v: &str) -> Result<[f64; N]> {
    let parts: Vec<f64> = v
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))?;
    parts
        .try_into()
        .map_err(|p: Vec<f64>| Error::Config(format!("{key} needs {N} comma-separated values, got {}", p.len())))
}
