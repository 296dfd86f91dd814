//! Direct recovery of disparity, egomotion and intrinsics by minimising the
//! combined objective with reverse-mode gradients and Adam.
//!
//! Optimizer coordinates: log-disparities as-is, rotation in radians,
//! translation in meters, and intrinsics normalised by the image size
//! (`fx/w, fy/h, x0/w, y0/h`) so one learning rate suits every class.

use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PoseSE3};
use crate::grid::Grid;
use crate::losses::{total_loss, ImageQuad, LossBreakdown, LossVariables, LossWeights};
use crate::synth::Quadruplet;

/// Losses above this are treated as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenFlags {
    pub disparity: bool,
    pub pose: bool,
    pub intrinsics: bool,
}

impl FrozenFlags {
    pub fn all() -> Self {
        FrozenFlags {
            disparity: true,
            pose: true,
            intrinsics: true,
        }
    }
}

/// Starting point for the free variables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// Depth of the fronto-parallel plane the disparities start from, meters.
    pub depth: f64,
    /// Per-seed log-uniform spread of the initial depth: factor in `[1/(1+j), 1+j]`.
    pub depth_jitter: f64,
    /// Per-seed relative spread of the initial focal lengths; the principal
    /// point moves by up to `0.1·j` of the image size.
    pub intrinsics_jitter: f64,
    /// Start every class (not only frozen ones) at ground truth.
    pub from_truth: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            depth: 10.0,
            depth_jitter: 0.0,
            intrinsics_jitter: 0.0,
            from_truth: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: usize,
    /// Multiplicative learning-rate decay applied every `decay_every` steps.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub seed: u64,
    /// Relative loss change below which the run counts as converged.
    pub convergence_tol: f64,
    pub convergence_window: usize,
    /// Learning-rate multipliers per variable class.
    pub pose_lr_scale: f64,
    pub intrinsics_lr_scale: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            steps: 1000,
            lr_decay: 0.9,
            decay_every: 100,
            seed: 0,
            convergence_tol: 1e-4,
            convergence_window: 50,
            pose_lr_scale: 1.0,
            intrinsics_lr_scale: 1.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        if !(self.pose_lr_scale >= 0.0) || !(self.intrinsics_lr_scale >= 0.0) {
            return Err(Error::InvalidArgument("learning-rate scales must be >= 0".into()));
        }
        if !(self.lr_decay > 0.0) || self.decay_every == 0 {
            return Err(Error::InvalidArgument("lr_decay must be positive and decay_every nonzero".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr * self.lr_decay.powi((step / self.decay_every) as i32)
    }
}

/// Everything the objective needs, plus the current values of the variables.
#[derive(Clone, Debug)]
pub struct Problem {
    pub images: ImageQuad,
    pub baseline: f64,
    pub vars: LossVariables<f64>,
    pub frozen: FrozenFlags,
    pub weights: LossWeights,
}

impl Problem {
    /// Neutral starting point: a fronto-parallel plane at `init.depth`, the
    /// identity pose and intrinsics `(0.8w, 0.8w, w/2, h/2)`. Frozen classes
    /// (or all of them, with `init.from_truth`) start at ground truth instead.
    pub fn from_quadruplet(
        quad: &Quadruplet,
        init: &InitConfig,
        frozen: FrozenFlags,
        weights: LossWeights,
        seed: u64,
    ) -> Result<Self> {
        let (w, h) = (quad.images.width(), quad.images.height());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_1417);
        let mut jitter = |j: f64| if j > 0.0 { rng.random_range(-j..j) } else { 0.0 };

        let intr = if frozen.intrinsics || init.from_truth {
            quad.gt_intrinsics
        } else {
            let j = init.intrinsics_jitter;
            Intrinsics::new(
                0.8 * w as f64 * (1.0 + jitter(j)),
                0.8 * w as f64 * (1.0 + jitter(j)),
                w as f64 / 2.0 + 0.1 * w as f64 * jitter(j),
                h as f64 / 2.0 + 0.1 * h as f64 * jitter(j),
            )?
        };
        let pose = if frozen.pose || init.from_truth {
            quad.gt_pose
        } else {
            PoseSE3::identity()
        };
        let (log_disp_l, log_disp_r) = if frozen.disparity || init.from_truth {
            (
                quad.gt_disp_l.grid().map(f64::ln),
                quad.gt_disp_r.grid().map(f64::ln),
            )
        } else {
            let spread = (1.0 + init.depth_jitter).ln();
            let depth = init.depth * jitter(spread).exp();
            if !(depth > 0.0) {
                return Err(Error::InvalidArgument(format!("initial depth must be positive, got {depth}")));
            }
            let ld = (quad.baseline * intr.fx / depth).ln();
            (Grid::filled(w, h, 1, ld), Grid::filled(w, h, 1, ld))
        };
        Ok(Problem {
            images: quad.images.clone(),
            baseline: quad.baseline,
            vars: LossVariables {
                log_disp_l,
                log_disp_r,
                pose,
                intr,
            },
            frozen,
            weights,
        })
    }

    pub fn evaluate(&self) -> Result<LossBreakdown> {
        total_loss(&self.images, self.baseline, &self.vars, &self.weights)
    }

    /// Depth implied by the current left disparities and focal length.
    pub fn depth(&self) -> Grid<f64> {
        let bf = self.baseline * self.vars.intr.fx;
        self.vars.log_disp_l.map(|ld| bf / ld.exp())
    }

    fn image_size(&self) -> (f64, f64) {
        (self.images.width() as f64, self.images.height() as f64)
    }

    /// Flattens the unfrozen variables into optimizer coordinates.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::new();
        if !self.frozen.disparity {
            p.extend_from_slice(self.vars.log_disp_l.data());
            p.extend_from_slice(self.vars.log_disp_r.data());
        }
        if !self.frozen.pose {
            p.extend_from_slice(&self.vars.pose.rot);
            p.extend_from_slice(&self.vars.pose.trans);
        }
        if !self.frozen.intrinsics {
            let (w, h) = self.image_size();
            let k = self.vars.intr;
            p.extend_from_slice(&[k.fx / w, k.fy / h, k.x0 / w, k.y0 / h]);
        }
        p
    }

    /// Per-parameter learning-rate multipliers, aligned with [`Problem::parameters`].
    fn lr_scales(&self, config: &OptimConfig) -> Vec<f64> {
        let mut s = Vec::new();
        if !self.frozen.disparity {
            s.resize(2 * self.vars.log_disp_l.len(), 1.0);
        }
        if !self.frozen.pose {
            s.extend_from_slice(&[config.pose_lr_scale; 6]);
        }
        if !self.frozen.intrinsics {
            s.extend_from_slice(&[config.intrinsics_lr_scale; 4]);
        }
        s
    }

    pub fn set_parameters(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        if !self.frozen.disparity {
            for x in self.vars.log_disp_l.data_mut() {
                *x = it.next().expect("parameter vector too short");
            }
            for x in self.vars.log_disp_r.data_mut() {
                *x = it.next().expect("parameter vector too short");
            }
        }
        if !self.frozen.pose {
            for x in self.vars.pose.rot.iter_mut().chain(self.vars.pose.trans.iter_mut()) {
                *x = it.next().expect("parameter vector too short");
            }
        }
        if !self.frozen.intrinsics {
            let (w, h) = self.image_size();
            let mut next = || it.next().expect("parameter vector too short");
            self.vars.intr = Intrinsics {
                fx: next() * w,
                fy: next() * h,
                x0: next() * w,
                y0: next() * h,
            };
        }
    }
}

/// Derivatives of the total loss; `None` for frozen classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub log_disp_l: Option<Grid<f64>>,
    pub log_disp_r: Option<Grid<f64>>,
    /// `[rx, ry, rz, tx, ty, tz]`
    pub pose: Option<[f64; 6]>,
    /// With respect to `[fx, fy, x0, y0]` in pixels.
    pub intrinsics: Option<[f64; 4]>,
}

impl Gradients {
    /// Gradient in optimizer coordinates, aligned with [`Problem::parameters`].
    pub fn flatten(&self, problem: &Problem) -> Vec<f64> {
        let mut g = Vec::new();
        if let (Some(l), Some(r)) = (&self.log_disp_l, &self.log_disp_r) {
            g.extend_from_slice(l.data());
            g.extend_from_slice(r.data());
        }
        if let Some(p) = &self.pose {
            g.extend_from_slice(p);
        }
        if let Some(k) = &self.intrinsics {
            let (w, h) = problem.image_size();
            g.extend_from_slice(&[k[0] * w, k[1] * h, k[2] * w, k[3] * h]);
        }
        g
    }
}

/// Loss and its exact reverse-mode gradient with respect to every unfrozen variable.
pub fn gradient(problem: &Problem) -> Result<(LossBreakdown, Gradients)> {
    let tape = Tape::with_capacity(64 * problem.images.left.len());
    gradient_on(&tape, problem)
}

fn gradient_on(tape: &Tape, problem: &Problem) -> Result<(LossBreakdown, Gradients)> {
    let f = problem.frozen;
    let vars = &problem.vars;
    let lift = |x: f64, frozen: bool| if frozen { Var::constant(x) } else { tape.var(x) };
    let tv = LossVariables {
        log_disp_l: vars.log_disp_l.map(|x| lift(x, f.disparity)),
        log_disp_r: vars.log_disp_r.map(|x| lift(x, f.disparity)),
        pose: PoseSE3 {
            rot: vars.pose.rot.map(|x| lift(x, f.pose)),
            trans: vars.pose.trans.map(|x| lift(x, f.pose)),
        },
        intr: Intrinsics {
            fx: lift(vars.intr.fx, f.intrinsics),
            fy: lift(vars.intr.fy, f.intrinsics),
            x0: lift(vars.intr.x0, f.intrinsics),
            y0: lift(vars.intr.y0, f.intrinsics),
        },
    };
    let loss = total_loss(&problem.images, problem.baseline, &tv, &problem.weights)?;
    let values = loss.values();
    if let Some(component) = values.first_non_finite() {
        return Err(Error::NonFinite {
            component: component.to_string(),
        });
    }
    let adj = tape.gradient(loss.total);
    let grads = Gradients {
        log_disp_l: (!f.disparity).then(|| tv.log_disp_l.map(|v| adj.wrt(v))),
        log_disp_r: (!f.disparity).then(|| tv.log_disp_r.map(|v| adj.wrt(v))),
        pose: (!f.pose).then(|| {
            let p = &tv.pose;
            [p.rot[0], p.rot[1], p.rot[2], p.trans[0], p.trans[1], p.trans[2]].map(|v| adj.wrt(v))
        }),
        intrinsics: (!f.intrinsics).then(|| {
            let k = &tv.intr;
            [k.fx, k.fy, k.x0, k.y0].map(|v| adj.wrt(v))
        }),
    };
    if let Some(bad) = grads.flatten(problem).iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            component: format!("gradient entry {bad}"),
        });
    }
    Ok((values, grads))
}

/// First and second moment estimates of Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], state: &mut AdamState, grads: &[f64], lr: f64, config: &OptimConfig) {
    adam_update(params, state, grads, |_| lr, config);
}

fn adam_update(
    params: &mut [f64],
    state: &mut AdamState,
    grads: &[f64],
    lr: impl Fn(usize) -> f64,
    config: &OptimConfig,
) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
    assert_eq!(params.len(), state.m.len(), "parameter/state length mismatch");
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr(i) * m_hat / (v_hat.sqrt() + config.epsilon);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { step: usize, reason: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimReport {
    /// Loss before each executed update.
    pub trace: Vec<LossBreakdown>,
    /// Loss at the returned variables.
    pub final_loss: Option<LossBreakdown>,
    pub final_pose: PoseSE3,
    pub final_intrinsics: Intrinsics,
    #[serde(skip)]
    pub final_log_disp_l: Grid<f64>,
    #[serde(skip)]
    pub final_log_disp_r: Grid<f64>,
    pub steps: usize,
    pub converged: bool,
    pub status: RunStatus,
    /// Excluded from serialisation so reports are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl OptimReport {
    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }
}

fn converged(trace: &[LossBreakdown], config: &OptimConfig) -> bool {
    let w = config.convergence_window;
    if w == 0 || trace.len() <= w {
        return false;
    }
    let now = trace[trace.len() - 1].total;
    let before = trace[trace.len() - 1 - w].total;
    (before - now).abs() <= config.convergence_tol * before.abs().max(f64::MIN_POSITIVE)
}

/// Runs `config.steps` iterations of gradient + Adam, updating `problem.vars`.
///
/// Divergence (non-finite values or a loss above [`DIVERGENCE_LOSS`]) stops
/// the run early; the report then carries the partial trace and the last
/// finite variables.
pub fn optimize(problem: &mut Problem, config: &OptimConfig) -> Result<OptimReport> {
    config.validate()?;
    let started = Instant::now();
    let mut params = problem.parameters();
    let mut state = AdamState::new(params.len());
    let mut trace = Vec::with_capacity(config.steps);
    let mut status = RunStatus::Completed;
    let mut tape = Tape::with_capacity(64 * problem.images.left.len());
    let scales = problem.lr_scales(config);

    for step in 0..config.steps {
        tape.clear();
        let (loss, grads) = match gradient_on(&tape, problem) {
            Ok(r) => r,
            Err(e @ (Error::NonFinite { .. } | Error::DegenerateMask(_))) => {
                status = RunStatus::Diverged {
                    step,
                    reason: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        trace.push(loss);
        if loss.total > DIVERGENCE_LOSS {
            status = RunStatus::Diverged {
                step,
                reason: format!("loss {} exceeds {DIVERGENCE_LOSS}", loss.total),
            };
            break;
        }
        let flat = grads.flatten(problem);
        let lr = config.lr_at(step);
        adam_update(&mut params, &mut state, &flat, |i| lr * scales[i], config);
        if params.iter().any(|p| !p.is_finite()) {
            status = RunStatus::Diverged {
                step,
                reason: "non-finite parameter after update".into(),
            };
            break;
        }
        problem.set_parameters(&params);
    }

    let final_loss = problem.evaluate().ok();
    Ok(OptimReport {
        converged: matches!(status, RunStatus::Completed) && converged(&trace, config),
        steps: trace.len(),
        trace,
        final_loss,
        final_pose: problem.vars.pose,
        final_intrinsics: problem.vars.intr,
        final_log_disp_l: problem.vars.log_disp_l.clone(),
        final_log_disp_r: problem.vars.log_disp_r.clone(),
        status,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}
