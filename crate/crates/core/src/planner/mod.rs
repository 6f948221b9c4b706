//! Next-pose search: precomputed base information, the trace objective for a
//! candidate pose, and two global optimizers over a bounded pose box.

mod anneal;
mod evolution;

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::{DMatrix, Matrix2, Vector3, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{CalibrationError, CalibrationState, ImageInformation, ObservationSet};
use crate::corner::{predicted_weights, CornerConditions};
use crate::geometry::{IntrinsicParams, Pose, PoseFrame, TargetSpec, MIN_DEPTH};
use crate::linalg::pinv_symmetric;

pub const DEFAULT_PENALTY: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("no feasible pose found in {evaluations} evaluations")]
    NoFeasiblePose { evaluations: usize },
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
}

/// `A_pre = sum_i (U_i - W_i V_i^+ W_i^T)` over the images taken so far.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseInformation {
    pub a_pre: DMatrix<f64>,
}

impl BaseInformation {
    pub fn zeros(k: usize) -> Self {
        Self { a_pre: DMatrix::zeros(k, k) }
    }

    pub fn from_images<'a>(k: usize, images: impl IntoIterator<Item = &'a ImageInformation>) -> Self {
        let mut base = Self::zeros(k);
        for im in images {
            base.add_image(im);
        }
        base
    }

    pub fn add_image(&mut self, info: &ImageInformation) {
        self.a_pre += info.schur_term().0;
    }

    pub fn param_count(&self) -> usize {
        self.a_pre.nrows()
    }

    /// `trace(A_pre^+)`.
    pub fn trace_covariance(&self) -> f64 {
        pinv_symmetric(&self.a_pre).0.trace()
    }
}

/// Base information from the blocks cached in `state`.
pub fn precompute_base(state: &CalibrationState) -> BaseInformation {
    BaseInformation::from_images(state.theta.param_count(), &state.per_image_info)
}

/// Weights of predicted corners scaled so that a sharp, full-contrast,
/// fronto-parallel corner at the configured blur has `C = I`.
pub fn normalized_weights(
    theta: &IntrinsicParams,
    pose: &Pose,
    target: &TargetSpec,
    cond: &CornerConditions,
) -> Option<Vec<Matrix2<f64>>> {
    let unit = cond.model.f(90.0, cond.sigma).ok()?;
    let w = predicted_weights(theta, pose, target, cond)?;
    Some(w.into_iter().map(|c| c / unit).collect())
}

/// Base information with every observed corner weighted by its predicted
/// autocorrelation at the estimated pose. Images whose predicted geometry is
/// unavailable fall back to identity weights.
pub fn precompute_weighted_base(
    state: &CalibrationState,
    obs: &ObservationSet,
    cond: &CornerConditions,
) -> Result<BaseInformation, CalibrationError> {
    let k = state.theta.param_count();
    let mut base = BaseInformation::zeros(k);
    for (i, (im, pose)) in obs.images.iter().zip(&state.poses).enumerate() {
        let weights = normalized_weights(&state.theta, pose, &obs.target, cond);
        let corners = im.corners.iter().map(|c| {
            let w = weights.as_ref().map_or_else(Matrix2::identity, |w| w[c.j]);
            (c.j, w)
        });
        let info = crate::calibration::image_information(&state.theta, pose, &obs.target, corners)
            .map_err(|(j, _)| CalibrationError::PointBehindCamera { image: i, point: j })?;
        base.add_image(&info);
    }
    Ok(base)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMethod {
    SimulatedAnnealing,
    EvolutionStrategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub method: SearchMethod,
    /// Objective evaluations.
    pub budget: usize,
    pub seed: u64,
    pub penalty: f64,
    pub use_corner_model: bool,
    /// Corners must stay this many pixels inside the image border.
    pub border_margin: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            method: SearchMethod::SimulatedAnnealing,
            budget: 3000,
            seed: 0,
            penalty: DEFAULT_PENALTY,
            use_corner_model: false,
            border_margin: 0.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.budget == 0 {
            return Err(PlannerError::InvalidConfig("budget must be at least 1".into()));
        }
        if !(self.penalty.is_finite() && self.penalty > 0.0) {
            return Err(PlannerError::InvalidConfig("penalty must be positive".into()));
        }
        if !(self.border_margin >= 0.0 && self.border_margin.is_finite()) {
            return Err(PlannerError::InvalidConfig("border margin must be non-negative".into()));
        }
        Ok(())
    }
}

/// Trace of the expected intrinsic covariance after adding one image at a
/// candidate pose.
#[derive(Debug, Clone, Copy)]
pub struct PoseObjective<'a> {
    pub base: &'a BaseInformation,
    pub theta: IntrinsicParams,
    pub target: TargetSpec,
    pub image_size: [u32; 2],
    pub penalty: f64,
    pub border_margin: f64,
    pub corners: Option<CornerConditions<'a>>,
}

impl<'a> PoseObjective<'a> {
    /// `corners` is used only when `cfg.use_corner_model` is set.
    pub fn new(
        base: &'a BaseInformation,
        theta: IntrinsicParams,
        target: TargetSpec,
        image_size: [u32; 2],
        cfg: &PlannerConfig,
        corners: Option<CornerConditions<'a>>,
    ) -> Self {
        Self {
            base,
            theta,
            target,
            image_size,
            penalty: cfg.penalty,
            border_margin: cfg.border_margin,
            corners: if cfg.use_corner_model { corners } else { None },
        }
    }

    /// Sum of pixel distances by which corners leave the admissible image
    /// region; corners behind the camera count `1e6` each. Zero iff feasible.
    pub fn violation(&self, pose: &Pose) -> f64 {
        let r = pose.rotation();
        let lo = self.border_margin;
        let (hx, hy) = (self.image_size[0] as f64 - lo, self.image_size[1] as f64 - lo);
        let mut total = 0.0;
        for j in 0..self.target.len() {
            let s = r * self.target.point(j) + pose.t;
            if s.z <= MIN_DEPTH {
                total += 1e6;
                continue;
            }
            match self.theta.project_local(&s) {
                Ok(p) => {
                    let out = (lo - p.x).max(0.0) + (p.x - hx).max(0.0) + (lo - p.y).max(0.0) + (p.y - hy).max(0.0);
                    // the upper edge itself is excluded
                    let edge = if p.x == hx || p.y == hy { 1e-9 } else { 0.0 };
                    total += out + edge;
                }
                Err(_) => total += 1e6,
            }
        }
        total
    }

    pub fn is_feasible(&self, pose: &Pose) -> bool {
        self.violation(pose) == 0.0
    }

    /// Information block of one image at `pose` over all target corners.
    pub fn candidate_information(&self, pose: &Pose) -> Option<ImageInformation> {
        let weights = match &self.corners {
            Some(cond) => Some(normalized_weights(&self.theta, pose, &self.target, cond)?),
            None => None,
        };
        let frame = PoseFrame::new(pose);
        let mut info = ImageInformation::zeros(self.theta.param_count());
        for j in 0..self.target.len() {
            let jb = frame.jacobian_blocks(&self.theta, &self.target.point(j)).ok()?;
            let c = weights.as_ref().map_or_else(Matrix2::identity, |w| w[j]);
            info.accumulate(&jb, &c);
        }
        Some(info)
    }

    /// Objective and violation in one pass.
    pub fn assess(&self, pose: &Pose) -> (f64, f64) {
        let v = self.violation(pose);
        if v > 0.0 {
            return (self.penalty, v);
        }
        let Some(info) = self.candidate_information(pose) else {
            return (self.penalty, 1e6);
        };
        let total = &self.base.a_pre + info.schur_term().0;
        let value = pinv_symmetric(&total).0.trace();
        if value.is_finite() && value < self.penalty {
            (value, 0.0)
        } else {
            (self.penalty, 0.0)
        }
    }

    pub fn evaluate(&self, pose: &Pose) -> f64 {
        self.assess(pose).0
    }
}

/// Axis-aligned box over `z = (t1, t2, t3, alpha, beta, gamma)`, angles in
/// radians. With `lateral_relative_to_depth`, the first two axes are factors
/// and the pose uses `t1 = z1 * t3`, `t2 = z2 * t3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSearchSpace {
    pub lower: [f64; 6],
    pub upper: [f64; 6],
    pub lateral_relative_to_depth: bool,
    pub image_size: [u32; 2],
}

impl PoseSearchSpace {
    /// Depth in `[0.5, 4]` target diagonals, centre within 80% of the half
    /// field of view, angles within 75 deg.
    pub fn default_for(theta: &IntrinsicParams, target: &TargetSpec, image_size: [u32; 2]) -> Self {
        let d = target.diagonal();
        let tx = 0.8 * (0.5 * image_size[0] as f64) / theta.f;
        let ty = 0.8 * (0.5 * image_size[1] as f64) / theta.f;
        let a = 75f64.to_radians();
        Self {
            lower: [-tx, -ty, 0.5 * d, -a, -a, -a],
            upper: [tx, ty, 4.0 * d, a, a, a],
            lateral_relative_to_depth: true,
            image_size,
        }
    }

    pub fn point(pose: &Pose) -> Self {
        let z = pose.to_vector();
        let z: [f64; 6] = z.into();
        Self { lower: z, upper: z, lateral_relative_to_depth: false, image_size: [1, 1] }
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return Err(PlannerError::InvalidSpace("image size must be positive".into()));
        }
        for i in 0..6 {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(PlannerError::InvalidSpace(format!("axis {i}: [{lo}, {hi}]")));
            }
        }
        if self.lower[2] <= 0.0 {
            return Err(PlannerError::InvalidSpace("depth must be positive".into()));
        }
        Ok(())
    }

    pub fn range(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn clamp(&self, z: &Vector6<f64>) -> Vector6<f64> {
        Vector6::from_fn(|i, _| z[i].clamp(self.lower[i], self.upper[i]))
    }

    pub fn to_pose(&self, z: &Vector6<f64>) -> Pose {
        let (t1, t2) = if self.lateral_relative_to_depth { (z[0] * z[2], z[1] * z[2]) } else { (z[0], z[1]) };
        Pose::new(Vector3::new(t1, t2, z[2]), Vector3::new(z[3], z[4], z[5]))
    }

    /// Uniform draw over the box.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vector6<f64> {
        Vector6::from_fn(|i, _| self.lower[i] + self.range(i) * rng.random::<f64>())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerResult {
    pub pose: Pose,
    pub objective: f64,
    pub evaluations: usize,
    #[serde(skip)]
    pub trace: Vec<TracePoint>,
}

/// Budgeted, cancellable evaluation with best-so-far bookkeeping.
pub(crate) struct Tracker<'a> {
    objective: &'a PoseObjective<'a>,
    space: &'a PoseSearchSpace,
    budget: usize,
    cancel: Option<&'a AtomicBool>,
    pub evaluations: usize,
    pub best: Option<(Vector6<f64>, f64)>,
    pub trace: Vec<TracePoint>,
}

impl<'a> Tracker<'a> {
    fn new(
        objective: &'a PoseObjective<'a>,
        space: &'a PoseSearchSpace,
        budget: usize,
        cancel: Option<&'a AtomicBool>,
    ) -> Self {
        Self { objective, space, budget, cancel, evaluations: 0, best: None, trace: Vec::new() }
    }

    pub fn exhausted(&self) -> bool {
        self.evaluations >= self.budget || self.cancel.is_some_and(|c| c.load(Ordering::Relaxed))
    }

    pub fn penalty(&self) -> f64 {
        self.objective.penalty
    }

    /// `(objective, violation)`, or `None` once the budget is spent or the
    /// search was cancelled.
    pub fn eval(&mut self, z: &Vector6<f64>) -> Option<(f64, f64)> {
        if self.exhausted() {
            return None;
        }
        let (f, v) = self.objective.assess(&self.space.to_pose(z));
        self.evaluations += 1;
        if self.best.as_ref().is_none_or(|(_, b)| f < *b) {
            self.best = Some((*z, f));
        }
        let best = self.best.as_ref().map_or(f, |b| b.1);
        self.trace.push(TracePoint { iteration: self.evaluations, best });
        Some((f, v))
    }

    fn finish(self) -> Result<PlannerResult, PlannerError> {
        match self.best {
            Some((z, f)) if f < self.objective.penalty => Ok(PlannerResult {
                pose: self.space.to_pose(&z),
                objective: f,
                evaluations: self.evaluations,
                trace: self.trace,
            }),
            _ => Err(PlannerError::NoFeasiblePose { evaluations: self.evaluations }),
        }
    }
}

/// Global search for the pose with the smallest objective. Deterministic for a
/// given seed; setting `cancel` stops early with the best pose so far.
pub fn search_next_pose(
    objective: &PoseObjective,
    space: &PoseSearchSpace,
    cfg: &PlannerConfig,
    cancel: Option<&AtomicBool>,
) -> Result<PlannerResult, PlannerError> {
    cfg.validate()?;
    space.validate()?;
    let mut tracker = Tracker::new(objective, space, cfg.budget, cancel);
    match cfg.method {
        SearchMethod::SimulatedAnnealing => anneal::run(&mut tracker, space, cfg.seed),
        SearchMethod::EvolutionStrategy => evolution::run(&mut tracker, space, cfg.seed),
    }
    tracker.finish()
}
