//! Synthetic calibration experiments: random views of the target, noisy corner
//! synthesis and per-trial acquisition loops for random and planned images.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{
    estimate_pose, initialize_calibration, optimize_bundle, BundleConfig, CalibrationError,
    CalibrationState, Corner, ImageObservations, ObservationSet,
};
use crate::corner::{CornerConditions, CornerError, CornerModel};
use crate::geometry::{wrap_angle, GeometryError, IntrinsicParams, Pose, TargetSpec};
use crate::planner::{
    precompute_base, precompute_weighted_base, search_next_pose, PlannerConfig, PlannerError,
    PoseObjective, PoseSearchSpace,
};

pub const DEFAULT_PATH_FRAMES: usize = 25;
pub const MAX_POSE_ATTEMPTS: usize = 1000;
/// Frames with fewer visible corners are dropped.
pub const MIN_FRAME_CORNERS: usize = 10;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no fully visible pose after {attempts} attempts")]
    SamplingExhausted { attempts: usize },
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("trial table has no rows")]
    EmptyTable,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Corner(#[from] CornerError),
    #[error("csv: {0}")]
    Csv(String),
}

/// Camera placement around the target centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSampler {
    /// `X, Y ~ U(-lateral, lateral) * Z`.
    pub lateral: f64,
    /// `Z ~ U(depth.0, depth.1) * target diagonal`.
    pub depth: (f64, f64),
    /// Per-axis tilt bound after aiming, degrees.
    pub max_tilt_deg: f64,
    pub max_attempts: usize,
}

impl Default for PoseSampler {
    fn default() -> Self {
        Self { lateral: 0.4, depth: (1.2, 3.5), max_tilt_deg: 15.0, max_attempts: MAX_POSE_ATTEMPTS }
    }
}

impl PoseSampler {
    /// Camera at `position` (target frame) looking at the target centre, then
    /// rotated about its own axes by `tilt` (radians, x, y, z).
    pub fn aimed_pose(position: &Vector3<f64>, tilt: &Vector3<f64>) -> Pose {
        let z = (-position).normalize();
        let up = if z.cross(&Vector3::y()).norm() < 1e-9 { Vector3::x() } else { Vector3::y() };
        let x = up.cross(&z).normalize();
        let y = z.cross(&x);
        let cam_to_target = Matrix3::from_columns(&[x, y, z]);
        let local = Rotation3::from_axis_angle(&Vector3::x_axis(), tilt.x)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), tilt.y)
            * Rotation3::from_axis_angle(&Vector3::z_axis(), tilt.z);
        let r = (cam_to_target * local.matrix()).transpose();
        Pose::from_rotation(&r, -(r * position))
    }

    /// One draw without the visibility check.
    pub fn draw<R: Rng>(&self, target: &TargetSpec, rng: &mut R) -> Pose {
        let d = target.diagonal();
        let z = rng.random_range(self.depth.0..=self.depth.1) * d;
        let x = rng.random_range(-self.lateral..=self.lateral) * z;
        let y = rng.random_range(-self.lateral..=self.lateral) * z;
        let b = self.max_tilt_deg.to_radians();
        let tilt = Vector3::from_fn(|_, _| if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 });
        Self::aimed_pose(&Vector3::new(x, y, -z), &tilt)
    }

    pub fn sample<R: Rng>(
        &self,
        theta: &IntrinsicParams,
        target: &TargetSpec,
        image_size: [u32; 2],
        rng: &mut R,
    ) -> Result<Pose, HarnessError> {
        for _ in 0..self.max_attempts {
            let pose = self.draw(target, rng);
            if visible_corners(theta, &pose, target, image_size).len() == target.len() {
                return Ok(pose);
            }
        }
        Err(HarnessError::SamplingExhausted { attempts: self.max_attempts })
    }
}

/// Random pose with every target corner inside the image.
pub fn random_pose<R: Rng>(
    ground_truth: &IntrinsicParams,
    target: &TargetSpec,
    image_size: [u32; 2],
    rng: &mut R,
) -> Result<Pose, HarnessError> {
    PoseSampler::default().sample(ground_truth, target, image_size, rng)
}

/// Indices and projections of the corners inside `[0, w) x [0, h)`.
pub fn visible_corners(
    theta: &IntrinsicParams,
    pose: &Pose,
    target: &TargetSpec,
    image_size: [u32; 2],
) -> Vec<(usize, f64, f64)> {
    let (w, h) = (image_size[0] as f64, image_size[1] as f64);
    let r = pose.rotation();
    (0..target.len())
        .filter_map(|j| {
            let p = theta.project_local(&(r * target.point(j) + pose.t)).ok()?;
            (p.x >= 0.0 && p.y >= 0.0 && p.x < w && p.y < h).then_some((j, p.x, p.y))
        })
        .collect()
}

fn noisy_image<R: Rng>(
    theta: &IntrinsicParams,
    pose: &Pose,
    target: &TargetSpec,
    image_size: [u32; 2],
    noise: Option<&Normal<f64>>,
    rng: &mut R,
) -> ImageObservations {
    let corners = visible_corners(theta, pose, target, image_size)
        .into_iter()
        .map(|(j, x, y)| match noise {
            Some(n) => Corner::new(j, x + n.sample(rng), y + n.sample(rng)),
            None => Corner::new(j, x, y),
        })
        .collect();
    ImageObservations::new(corners)
}

/// Visible corners of one view with i.i.d. `N(0, noise_sigma^2)` noise.
pub fn synthesize_image<R: Rng>(
    theta: &IntrinsicParams,
    pose: &Pose,
    target: &TargetSpec,
    image_size: [u32; 2],
    noise_sigma: f64,
    rng: &mut R,
) -> Result<ImageObservations, HarnessError> {
    let noise = noise_distribution(noise_sigma)?;
    Ok(noisy_image(theta, pose, target, image_size, noise.as_ref(), rng))
}

fn noise_distribution(sigma: f64) -> Result<Option<Normal<f64>>, HarnessError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(HarnessError::InvalidConfig(format!("noise sigma must be >= 0, got {sigma}")));
    }
    Ok(if sigma > 0.0 { Some(Normal::new(0.0, sigma).expect("positive sigma")) } else { None })
}

/// Ground-truth projections plus i.i.d. `N(0, noise_sigma^2)` per coordinate.
/// Every pose must show the whole target.
pub fn generate_observations<R: Rng>(
    ground_truth: &IntrinsicParams,
    poses: &[Pose],
    target: &TargetSpec,
    image_size: [u32; 2],
    noise_sigma: f64,
    rng: &mut R,
) -> Result<ObservationSet, HarnessError> {
    let noise = noise_distribution(noise_sigma)?;
    let mut obs = ObservationSet::new(image_size, *target);
    for (i, pose) in poses.iter().enumerate() {
        let im = noisy_image(ground_truth, pose, target, image_size, noise.as_ref(), rng);
        if im.corners.len() != target.len() {
            return Err(HarnessError::InvalidConfig(format!("pose {i} does not show the whole target")));
        }
        obs.images.push(im);
    }
    Ok(obs)
}

/// `frames` poses from `a` to `b` inclusive, linear in translation and in
/// each angle along the shorter arc.
pub fn interpolate_path(a: &Pose, b: &Pose, frames: usize) -> Vec<Pose> {
    let frames = frames.max(2);
    let da = Vector3::from_fn(|i, _| wrap_angle(b.angles[i] - a.angles[i]));
    (0..frames)
        .map(|k| {
            if k == 0 {
                return *a;
            }
            if k == frames - 1 {
                return *b;
            }
            let s = k as f64 / (frames - 1) as f64;
            let t = a.t * (1.0 - s) + b.t * s;
            let angles = (a.angles + da * s).map(wrap_angle);
            Pose::new(t, angles)
        })
        .collect()
}

/// Whether each pose shows the whole target.
pub fn path_feasibility(
    theta: &IntrinsicParams,
    poses: &[Pose],
    target: &TargetSpec,
    image_size: [u32; 2],
) -> Vec<bool> {
    poses
        .iter()
        .map(|p| visible_corners(theta, p, target, image_size).len() == target.len())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Random,
    Wizard,
    WizardAuto,
    RandomPath,
    WizardPath,
}

impl Scheme {
    pub const ALL: [Scheme; 5] =
        [Scheme::Random, Scheme::Wizard, Scheme::WizardAuto, Scheme::RandomPath, Scheme::WizardPath];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Random => "random",
            Scheme::Wizard => "wizard",
            Scheme::WizardAuto => "wizard-auto",
            Scheme::RandomPath => "random-path",
            Scheme::WizardPath => "wizard-path",
        }
    }

    pub fn is_path(self) -> bool {
        matches!(self, Scheme::RandomPath | Scheme::WizardPath)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::InvalidConfig(format!("unknown scheme '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub ground_truth: IntrinsicParams,
    pub target: TargetSpec,
    pub image_size: [u32; 2],
    pub noise_sigma: f64,
    pub trials: usize,
    pub scheme: Scheme,
    /// Final image count for `Random`, `Wizard` and `WizardAuto`.
    pub images_per_trial: usize,
    pub seed: u64,
    /// Random images before planning starts (single-image schemes).
    pub initial_images: usize,
    /// Frames drawn from the first path for the initial calibration.
    pub initial_path_frames: usize,
    pub paths: usize,
    pub path_frames: usize,
    /// Search settings; the seed is replaced per step.
    pub planner: PlannerConfig,
    /// Corner blur used by `WizardAuto`.
    pub blur_sigma: f64,
    pub contrast: f64,
    pub sampler: PoseSampler,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            ground_truth: IntrinsicParams::with_k1k2(800.0, 320.0, 240.0, 0.01, 0.1),
            target: TargetSpec::default(),
            image_size: [640, 480],
            noise_sigma: 0.5,
            trials: 30,
            scheme: Scheme::Random,
            images_per_trial: 20,
            seed: 0,
            initial_images: 3,
            initial_path_frames: 5,
            paths: 3,
            path_frames: DEFAULT_PATH_FRAMES,
            planner: PlannerConfig { border_margin: 5.0, ..PlannerConfig::default() },
            blur_sigma: 1.0,
            contrast: 255.0,
            sampler: PoseSampler::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.into()));
        self.ground_truth.validate()?;
        self.target.validate()?;
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative");
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return bad("image size must be positive");
        }
        if self.initial_images < 3 {
            return bad("at least 3 initial images are required");
        }
        if !self.scheme.is_path() && self.images_per_trial < self.initial_images {
            return bad("images per trial must be at least the initial image count");
        }
        if self.scheme.is_path() {
            if self.paths == 0 || self.path_frames < 2 {
                return bad("path schemes need at least one path of two frames");
            }
            if self.initial_path_frames < 3 || self.initial_path_frames > self.path_frames {
                return bad("initial path frames must lie in [3, path_frames]");
            }
        }
        self.planner.validate()?;
        Ok(())
    }
}

/// Estimate after one acquisition step. Missing distortion terms are 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub scheme: Scheme,
    pub image_count: usize,
    pub f: f64,
    pub u: f64,
    pub v: f64,
    pub k1: f64,
    pub k2: f64,
    pub trace_sigma: f64,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub scheme: Scheme,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialTable {
    pub rows: Vec<TrialRow>,
    pub failures: Vec<TrialFailure>,
}

impl TrialTable {
    /// Rows with the given image count, ordered by trial.
    pub fn at(&self, scheme: Scheme, image_count: usize) -> Vec<&TrialRow> {
        let mut rows: Vec<_> =
            self.rows.iter().filter(|r| r.scheme == scheme && r.image_count == image_count).collect();
        rows.sort_by_key(|r| r.trial);
        rows
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), HarnessError> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r).map_err(|e| HarnessError::Csv(e.to_string()))?;
        }
        wr.flush().map_err(|e| HarnessError::Csv(e.to_string()))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let file = std::fs::File::create(path).map_err(|e| HarnessError::Csv(e.to_string()))?;
        self.write_csv(file)
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self, HarnessError> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd
            .deserialize()
            .collect::<Result<Vec<TrialRow>, _>>()
            .map_err(|e| HarnessError::Csv(e.to_string()))?;
        Ok(Self { rows, failures: Vec::new() })
    }
}

/// Independent stream per (seed, trial, purpose).
fn stream(seed: u64, trial: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((trial as u64) << 8) | purpose);
    rng
}

const INITIAL: u64 = 0;
const EXTRA_POSES: u64 = 1;
const EXTRA_NOISE: u64 = 2;
const PLANNING: u64 = 3;

struct Trial<'a> {
    cfg: &'a ExperimentConfig,
    index: usize,
    model: Option<&'a CornerModel>,
    noise: Option<Normal<f64>>,
    obs: ObservationSet,
    state: Option<CalibrationState>,
    rows: Vec<TrialRow>,
}

impl<'a> Trial<'a> {
    fn image(&self, pose: &Pose, rng: &mut ChaCha8Rng) -> ImageObservations {
        let c = self.cfg;
        noisy_image(&c.ground_truth, pose, &c.target, c.image_size, self.noise.as_ref(), rng)
    }

    fn push(&mut self, im: ImageObservations) -> bool {
        if im.corners.len() < MIN_FRAME_CORNERS {
            return false;
        }
        self.obs.images.push(im);
        true
    }

    fn calibrate_fresh(&self) -> Result<CalibrationState, CalibrationError> {
        let init = initialize_calibration(&self.obs, self.cfg.ground_truth.model)?;
        Ok(optimize_bundle(&init, &self.obs, &BundleConfig::default())?.0)
    }

    fn calibrate_warm(&self, prev: &CalibrationState) -> Result<CalibrationState, CalibrationError> {
        let mut poses = prev.poses.clone();
        for im in &self.obs.images[poses.len()..] {
            poses.push(estimate_pose(&prev.theta, im, &self.obs.target)?);
        }
        let start = CalibrationState::evaluate(prev.theta, poses, &self.obs, false)?;
        let (state, report) = optimize_bundle(&start, &self.obs, &BundleConfig::default())?;
        if !report.converged {
            return Err(CalibrationError::InsufficientData("warm start did not converge".into()));
        }
        Ok(state)
    }

    /// Recalibrates on all images and records a row.
    fn step(&mut self) -> Result<(), HarnessError> {
        let warm = self.state.as_ref().map(|prev| self.calibrate_warm(prev));
        let state = match warm {
            Some(Ok(s)) => s,
            Some(Err(e)) => {
                log::debug!("trial {}: warm start failed ({e}), reinitializing", self.index);
                self.calibrate_fresh()?
            }
            None => self.calibrate_fresh()?,
        };
        let t = &state.theta;
        self.rows.push(TrialRow {
            trial: self.index,
            scheme: self.cfg.scheme,
            image_count: self.obs.images.len(),
            f: t.f,
            u: t.u,
            v: t.v,
            k1: t.k1,
            k2: t.k2,
            trace_sigma: state.trace_sigma(),
            rms: state.rms,
        });
        self.state = Some(state);
        Ok(())
    }

    fn plan(&self, rng: &mut ChaCha8Rng) -> Result<Pose, HarnessError> {
        let c = self.cfg;
        let state = self.state.as_ref().expect("planning follows a calibration");
        let mut pcfg = c.planner;
        pcfg.seed = rng.random();
        let cond = self.model.map(|m| CornerConditions { model: m, sigma: c.blur_sigma, contrast: c.contrast });
        let base = match (&cond, c.scheme) {
            (Some(cond), Scheme::WizardAuto) => {
                pcfg.use_corner_model = true;
                precompute_weighted_base(state, &self.obs, cond)?
            }
            _ => {
                pcfg.use_corner_model = false;
                precompute_base(state)
            }
        };
        let objective = PoseObjective::new(&base, state.theta, c.target, c.image_size, &pcfg, cond);
        let space = PoseSearchSpace::default_for(&state.theta, &c.target, c.image_size);
        Ok(search_next_pose(&objective, &space, &pcfg, None)?.pose)
    }

    fn run_single(&mut self) -> Result<(), HarnessError> {
        let c = self.cfg;
        let mut init = stream(c.seed, self.index, INITIAL);
        for _ in 0..c.initial_images {
            let pose = c.sampler.sample(&c.ground_truth, &c.target, c.image_size, &mut init)?;
            let im = self.image(&pose, &mut init);
            self.push(im);
        }
        self.step()?;
        let mut poses = stream(c.seed, self.index, EXTRA_POSES);
        let mut noise = stream(c.seed, self.index, EXTRA_NOISE);
        let mut planning = stream(c.seed, self.index, PLANNING);
        while self.obs.images.len() < c.images_per_trial {
            let pose = match c.scheme {
                Scheme::Random => c.sampler.sample(&c.ground_truth, &c.target, c.image_size, &mut poses)?,
                _ => self.plan(&mut planning)?,
            };
            let im = self.image(&pose, &mut noise);
            if !self.push(im) {
                return Err(HarnessError::InvalidConfig(format!(
                    "proposed pose shows fewer than {MIN_FRAME_CORNERS} corners"
                )));
            }
            self.step()?;
        }
        Ok(())
    }

    fn run_path(&mut self) -> Result<(), HarnessError> {
        let c = self.cfg;
        let mut init = stream(c.seed, self.index, INITIAL);
        let p0 = c.sampler.sample(&c.ground_truth, &c.target, c.image_size, &mut init)?;
        let p1 = c.sampler.sample(&c.ground_truth, &c.target, c.image_size, &mut init)?;
        let first: Vec<_> =
            interpolate_path(&p0, &p1, c.path_frames).iter().map(|p| self.image(p, &mut init)).collect();
        let mut picks = rand::seq::index::sample(&mut init, first.len(), c.initial_path_frames).into_vec();
        picks.sort_unstable();

        let mut poses = stream(c.seed, self.index, EXTRA_POSES);
        let mut noise = stream(c.seed, self.index, EXTRA_NOISE);
        let mut planning = stream(c.seed, self.index, PLANNING);
        let mut current = p1;
        let remaining = match c.scheme {
            Scheme::RandomPath => {
                for im in first {
                    self.push(im);
                }
                self.step()?;
                c.paths - 1
            }
            _ => {
                for k in picks {
                    self.push(first[k].clone());
                }
                self.step()?;
                c.paths
            }
        };
        for _ in 0..remaining {
            let next = match c.scheme {
                Scheme::RandomPath => c.sampler.sample(&c.ground_truth, &c.target, c.image_size, &mut poses)?,
                _ => self.plan(&mut planning)?,
            };
            for p in interpolate_path(&current, &next, c.path_frames) {
                let im = self.image(&p, &mut noise);
                self.push(im);
            }
            current = next;
            self.step()?;
        }
        Ok(())
    }
}

/// Runs every trial of `cfg`. `WizardAuto` builds the default corner model.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<TrialTable, HarnessError> {
    let model = if cfg.scheme == Scheme::WizardAuto { Some(CornerModel::build_default()?) } else { None };
    run_experiment_with(cfg, model.as_ref())
}

/// Like [`run_experiment`] with a caller-supplied corner model.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    model: Option<&CornerModel>,
) -> Result<TrialTable, HarnessError> {
    cfg.validate()?;
    if cfg.scheme == Scheme::WizardAuto && model.is_none() {
        return Err(HarnessError::InvalidConfig("wizard-auto needs a corner model".into()));
    }
    let noise = noise_distribution(cfg.noise_sigma)?;
    let mut table = TrialTable::default();
    for index in 0..cfg.trials {
        let mut trial = Trial {
            cfg,
            index,
            model,
            noise,
            obs: ObservationSet::new(cfg.image_size, cfg.target),
            state: None,
            rows: Vec::new(),
        };
        let outcome = if cfg.scheme.is_path() { trial.run_path() } else { trial.run_single() };
        match outcome {
            Ok(()) => table.rows.extend(trial.rows),
            Err(e) => {
                log::warn!("{} trial {index} failed: {e}", cfg.scheme);
                table.failures.push(TrialFailure { trial: index, scheme: cfg.scheme, message: e.to_string() });
            }
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl Stats {
    /// Sample statistics; `std` is 0 for a single value.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 { sorted[m] } else { 0.5 * (sorted[m - 1] + sorted[m]) };
        Some(Self { mean, std, median })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub image_count: usize,
    pub parameter: String,
    pub trials: usize,
    pub value: Stats,
    pub abs_error: Stats,
}

/// Statistics per scheme, image count and intrinsic parameter.
pub fn summarize(table: &TrialTable, ground_truth: &IntrinsicParams) -> Result<Vec<SummaryRow>, HarnessError> {
    if table.rows.is_empty() {
        return Err(HarnessError::EmptyTable);
    }
    let names = ["f", "u", "v", "k1", "k2"];
    let truth = [ground_truth.f, ground_truth.u, ground_truth.v, ground_truth.k1, ground_truth.k2];
    let k = ground_truth.param_count();
    let mut groups: BTreeMap<(Scheme, usize), Vec<&TrialRow>> = BTreeMap::new();
    for r in &table.rows {
        groups.entry((r.scheme, r.image_count)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((scheme, image_count), rows) in groups {
        for p in 0..k {
            let values: Vec<f64> = rows.iter().map(|r| [r.f, r.u, r.v, r.k1, r.k2][p]).collect();
            let errors: Vec<f64> = values.iter().map(|x| (x - truth[p]).abs()).collect();
            out.push(SummaryRow {
                scheme,
                image_count,
                parameter: names[p].into(),
                trials: rows.len(),
                value: Stats::of(&values).expect("group is non-empty"),
                abs_error: Stats::of(&errors).expect("group is non-empty"),
            });
        }
    }
    Ok(out)
}
