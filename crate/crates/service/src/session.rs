//! Per-session calibration state machine. Everything here is synchronous; the
//! HTTP layer serializes access per session.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use calibwiz_core::calibration::{
    estimate_pose, initialize_calibration, optimize_bundle, validate_image, BundleConfig,
    CalibrationState, ImageObservations, ObservationSet,
};
use calibwiz_core::corner::{CornerConditions, CornerModel};
use calibwiz_core::geometry::{project_target, IntrinsicParams, ModelKind, Pose, TargetSpec};
use calibwiz_core::planner::{
    precompute_base, precompute_weighted_base, search_next_pose, PlannerConfig, PoseObjective,
    PoseSearchSpace,
};
use calibwiz_core::synth::synthesize_image;
use calibwiz_core::umap::{render_map, StatKind, UncertaintyMap};

use crate::ApiError;

pub const DEFAULT_PROXIMITY_PX: f64 = 15.0;
const MIN_IMAGES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Live,
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub model: ModelKind,
    pub target: TargetSpec,
    pub image_size: [u32; 2],
    /// Blur assumed for predicted corner weights.
    pub blur_sigma: f64,
    pub contrast: f64,
    /// Corner noise added by virtual captures.
    pub noise_sigma: f64,
    pub planner: PlannerConfig,
    pub mode: Mode,
    pub ground_truth: Option<IntrinsicParams>,
    /// Mean corner distance below which a pose counts as reached.
    pub proximity_threshold: f64,
    /// Seed of the virtual camera noise.
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::PinholeK1K2,
            target: TargetSpec::default(),
            image_size: [640, 480],
            blur_sigma: 1.0,
            contrast: 255.0,
            noise_sigma: 0.0,
            planner: PlannerConfig { border_margin: 5.0, ..PlannerConfig::default() },
            mode: Mode::Live,
            ground_truth: None,
            proximity_threshold: DEFAULT_PROXIMITY_PX,
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ApiError> {
        let bad = |m: String| Err(ApiError::InvalidConfig(m));
        if let Err(e) = self.target.validate() {
            return bad(e.to_string());
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return bad("image size must be positive".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative".into());
        }
        if !(self.blur_sigma.is_finite() && self.blur_sigma >= 0.0) {
            return bad("blur sigma must be non-negative".into());
        }
        if !(self.contrast.is_finite() && self.contrast > 0.0) {
            return bad("contrast must be positive".into());
        }
        if !(self.proximity_threshold.is_finite() && self.proximity_threshold > 0.0) {
            return bad("proximity threshold must be positive".into());
        }
        if let Err(e) = self.planner.validate() {
            return bad(e.to_string());
        }
        match (self.mode, &self.ground_truth) {
            (Mode::Virtual, None) => return bad("virtual mode requires ground_truth".into()),
            (_, Some(gt)) => {
                if let Err(e) = gt.validate() {
                    return bad(e.to_string());
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    /// `collecting` until the first successful calibration.
    pub status: String,
    pub image_count: usize,
    pub theta: Option<IntrinsicParams>,
    pub rms: Option<f64>,
    pub trace_sigma: Option<f64>,
    pub sigma: Option<Vec<Vec<f64>>>,
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextPose {
    pub pose: Pose,
    /// Expected `trace(Sigma)` after adding an image at `pose`.
    pub objective: f64,
    pub current_trace: f64,
    pub evaluations: usize,
    pub weighted: bool,
    /// Projections of the target at `pose` under the current estimate.
    pub corners: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProximityReport {
    pub mean_corner_distance: f64,
    pub within_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualCapture {
    pub image: ImageObservations,
    /// Absent while there is no suggestion.
    pub proximity: Option<ProximityReport>,
}

#[derive(Debug, Clone)]
struct Suggestion {
    weighted: bool,
    pose: Pose,
    json: Arc<str>,
}

/// Everything a planner run needs, detached from the session.
#[derive(Debug, Clone)]
pub struct PlanningJob {
    pub generation: u64,
    pub weighted: bool,
    state: CalibrationState,
    obs: ObservationSet,
    config: SessionConfig,
}

impl PlanningJob {
    pub fn run(&self, model: Option<&CornerModel>, cancel: &AtomicBool) -> Result<NextPose, ApiError> {
        let c = &self.config;
        let cond: Option<CornerConditions> =
            model.map(|m| CornerConditions { model: m, sigma: c.blur_sigma, contrast: c.contrast });
        let mut pcfg = c.planner;
        pcfg.use_corner_model = self.weighted && cond.is_some();
        let base = match (&cond, pcfg.use_corner_model) {
            (Some(cond), true) => precompute_weighted_base(&self.state, &self.obs, cond)?,
            _ => precompute_base(&self.state),
        };
        let objective = PoseObjective::new(&base, self.state.theta, c.target, c.image_size, &pcfg, cond);
        let space = PoseSearchSpace::default_for(&self.state.theta, &c.target, c.image_size);
        let result = search_next_pose(&objective, &space, &pcfg, Some(cancel));
        if cancel.load(Ordering::Relaxed) {
            return Err(ApiError::Superseded);
        }
        let result = result?;
        let corners = project_target(&self.state.theta, &result.pose, &c.target)
            .map_err(|e| ApiError::Internal(e.to_string()))?
            .iter()
            .map(|p| [p.x, p.y])
            .collect();
        Ok(NextPose {
            pose: result.pose,
            objective: result.objective,
            current_trace: self.state.trace_sigma(),
            evaluations: result.evaluations,
            weighted: self.weighted,
            corners,
        })
    }
}

pub struct Session {
    pub id: String,
    pub config: SessionConfig,
    pub obs: ObservationSet,
    pub state: Option<CalibrationState>,
    pub history: Vec<f64>,
    /// Bumped with every accepted observation.
    pub generation: u64,
    suggestion: Option<Suggestion>,
    /// Cancellation flags of planner runs started since the last observation.
    inflight: Vec<Arc<AtomicBool>>,
    rng: ChaCha8Rng,
}

impl Session {
    pub fn new(id: String, config: SessionConfig) -> Result<Self, ApiError> {
        config.validate()?;
        Ok(Self {
            id,
            obs: ObservationSet::new(config.image_size, config.target),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            state: None,
            history: Vec::new(),
            generation: 0,
            suggestion: None,
            inflight: Vec::new(),
        })
    }

    pub fn summary(&self) -> CalibrationSummary {
        let st = self.state.as_ref();
        CalibrationSummary {
            status: if st.is_some() { "calibrated" } else { "collecting" }.into(),
            image_count: self.obs.images.len(),
            theta: st.map(|s| s.theta),
            rms: st.map(|s| s.rms),
            trace_sigma: st.map(|s| s.trace_sigma()),
            sigma: st.map(|s| calibwiz_core::calibration::rows_of(&s.sigma)),
            history: self.history.clone(),
        }
    }

    /// Mean distance between the observed corners and the suggestion's
    /// projection under the current estimate.
    fn followed_suggestion(&self, im: &ImageObservations) -> Option<Pose> {
        let (sug, st) = (self.suggestion.as_ref()?, self.state.as_ref()?);
        let pts = project_target(&st.theta, &sug.pose, &self.obs.target).ok()?;
        let d = im.corners.iter().map(|c| (pts[c.j] - c.position()).norm()).sum::<f64>()
            / im.corners.len().max(1) as f64;
        (d < self.config.proximity_threshold).then_some(sug.pose)
    }

    fn calibrate(&self, guess: Option<Pose>) -> Result<CalibrationState, ApiError> {
        let cfg = BundleConfig { weighted: self.obs.has_weights(), ..BundleConfig::default() };
        if let Some(prev) = &self.state {
            let warm = (|| {
                let mut poses = prev.poses.clone();
                let n = self.obs.images.len();
                for (i, im) in self.obs.images.iter().enumerate().skip(poses.len()) {
                    let pose = match (im.pose_guess, guess.filter(|_| i + 1 == n)) {
                        (Some(p), _) | (None, Some(p)) => p,
                        (None, None) => estimate_pose(&prev.theta, im, &self.obs.target)?,
                    };
                    poses.push(pose);
                }
                let start = CalibrationState::evaluate(prev.theta, poses, &self.obs, cfg.weighted)?;
                optimize_bundle(&start, &self.obs, &cfg)
            })();
            match warm {
                Ok((state, report)) if report.converged => return Ok(state),
                Ok(_) => log::debug!("session {}: warm start did not converge", self.id),
                Err(e) => log::debug!("session {}: warm start failed: {e}", self.id),
            }
        }
        let init = initialize_calibration(&self.obs, self.config.model)?;
        let init = CalibrationState::evaluate(init.theta, init.poses, &self.obs, cfg.weighted)?;
        Ok(optimize_bundle(&init, &self.obs, &cfg)?.0)
    }

    /// Appends one image and recalibrates once three images are present. A
    /// degenerate configuration keeps the image and reports guidance.
    pub fn submit(&mut self, im: ImageObservations) -> Result<CalibrationSummary, ApiError> {
        validate_image(&im, &self.obs.target).map_err(ApiError::SchemaError)?;
        if im.corners.len() < 4 {
            return Err(ApiError::SchemaError("an image needs at least 4 corners".into()));
        }
        let (w, h) = (self.obs.image_size[0] as f64, self.obs.image_size[1] as f64);
        if im.corners.iter().any(|c| !(0.0..w).contains(&c.x) || !(0.0..h).contains(&c.y)) {
            return Err(ApiError::SchemaError("corner outside the image".into()));
        }
        let guess = self.followed_suggestion(&im);
        self.obs.images.push(im);
        self.generation += 1;
        self.suggestion = None;
        for c in self.inflight.drain(..) {
            c.store(true, Ordering::Relaxed);
        }
        if self.obs.images.len() >= MIN_IMAGES {
            let state = self.calibrate(guess)?;
            self.history.push(state.trace_sigma());
            self.state = Some(state);
        }
        Ok(self.summary())
    }

    pub fn cached_suggestion(&self, weighted: bool) -> Option<Arc<str>> {
        self.suggestion.as_ref().filter(|s| s.weighted == weighted).map(|s| s.json.clone())
    }

    /// Snapshot for an off-lock planner run plus its cancellation flag.
    pub fn planning_job(&mut self, weighted: bool) -> Result<(PlanningJob, Arc<AtomicBool>), ApiError> {
        let state = self.state.clone().ok_or(ApiError::NotCalibrated)?;
        let cancel = Arc::new(AtomicBool::new(false));
        self.inflight.retain(|c| Arc::strong_count(c) > 1);
        self.inflight.push(cancel.clone());
        let job = PlanningJob {
            generation: self.generation,
            weighted,
            state,
            obs: self.obs.clone(),
            config: self.config.clone(),
        };
        Ok((job, cancel))
    }

    /// Stores a finished planner result unless newer data arrived meanwhile.
    pub fn finish_planning(&mut self, job: &PlanningJob, result: NextPose) -> Result<Arc<str>, ApiError> {
        if job.generation != self.generation {
            return Err(ApiError::Superseded);
        }
        let json: Arc<str> = serde_json::to_string(&result).map_err(|e| ApiError::Internal(e.to_string()))?.into();
        self.suggestion = Some(Suggestion { weighted: job.weighted, pose: result.pose, json: json.clone() });
        Ok(json)
    }

    pub fn suggestion_pose(&self) -> Option<Pose> {
        self.suggestion.as_ref().map(|s| s.pose)
    }

    /// Noisy ground-truth corners at the user's pose; never ingested here.
    pub fn virtual_capture(&mut self, pose: &Pose) -> Result<VirtualCapture, ApiError> {
        let gt = match (self.config.mode, self.config.ground_truth) {
            (Mode::Virtual, Some(gt)) => gt,
            _ => return Err(ApiError::NotVirtualMode),
        };
        let c = &self.config;
        let exact = project_target(&gt, pose, &c.target)
            .map_err(|_| ApiError::PoseInfeasible("target behind the camera".into()))?;
        let (w, h) = (c.image_size[0] as f64, c.image_size[1] as f64);
        let outside = exact.iter().filter(|p| !(p.x >= 0.0 && p.y >= 0.0 && p.x < w && p.y < h)).count();
        if outside > 0 {
            return Err(ApiError::PoseInfeasible(format!("{outside} corners fall outside the image")));
        }
        let image = synthesize_image(&gt, pose, &c.target, c.image_size, c.noise_sigma, &mut self.rng)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        let proximity = self.suggestion_pose().and_then(|s| {
            let target = project_target(&gt, &s, &c.target).ok()?;
            let d = exact.iter().zip(&target).map(|(a, b)| (a - b).norm()).sum::<f64>() / exact.len() as f64;
            Some(ProximityReport { mean_corner_distance: d, within_threshold: d < c.proximity_threshold })
        });
        Ok(VirtualCapture { image, proximity })
    }

    pub fn uncertainty_map(&self, stat: StatKind) -> Result<UncertaintyMap, ApiError> {
        let st = self.state.as_ref().ok_or(ApiError::NotCalibrated)?;
        render_map(&st.theta, &st.sigma, self.obs.image_size, stat).map_err(|e| ApiError::Internal(e.to_string()))
    }
}
