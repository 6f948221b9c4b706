//! Levenberg-Marquardt bundle adjustment over all intrinsics and poses, solved
//! through the reduced (Schur) system on the intrinsic block.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix6, Vector6};

use super::information::{ImageGradient, ImageInformation};
use super::{CalibrationError, CalibrationState, ObservationSet};
use crate::geometry::{IntrinsicParams, Pose, PoseFrame};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step decreases the cost by less than this fraction.
    pub tol: f64,
    /// Weight residuals by the per-corner autocorrelation matrices.
    pub weighted: bool,
    /// `lambda_0 = initial_damping * mean(diag H)`.
    pub initial_damping: f64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self { max_iterations: 100, tol: 1e-10, weighted: false, initial_damping: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleReport {
    /// Linearizations performed.
    pub iterations: usize,
    pub converged: bool,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

impl BundleReport {
    pub fn final_cost(&self) -> f64 {
        *self.cost_history.last().expect("history starts with the initial cost")
    }
}

/// Max consecutive damping increases within one iteration.
const MAX_REJECTIONS: usize = 40;

struct Linearization {
    images: Vec<ImageInformation>,
    grads: Vec<ImageGradient>,
}

fn weights(obs: &ObservationSet, weighted: bool) -> Vec<Vec<Matrix2<f64>>> {
    obs.images
        .iter()
        .map(|im| {
            im.corners
                .iter()
                .map(|c| if weighted { c.weight() } else { Matrix2::identity() })
                .collect()
        })
        .collect()
}

fn cost(
    theta: &IntrinsicParams,
    poses: &[Pose],
    obs: &ObservationSet,
    w: &[Vec<Matrix2<f64>>],
) -> Result<f64, CalibrationError> {
    let mut total = 0.0;
    for (i, (im, pose)) in obs.images.iter().zip(poses).enumerate() {
        let r = pose.rotation();
        for (c, cw) in im.corners.iter().zip(&w[i]) {
            let p = theta
                .project_local(&(r * obs.target.point(c.j) + pose.t))
                .map_err(|_| CalibrationError::PointBehindCamera { image: i, point: c.j })?;
            let res = c.position() - p;
            total += res.dot(&(cw * res));
        }
    }
    Ok(total)
}

fn linearize(
    theta: &IntrinsicParams,
    poses: &[Pose],
    obs: &ObservationSet,
    w: &[Vec<Matrix2<f64>>],
) -> Result<Linearization, CalibrationError> {
    let k = theta.param_count();
    let mut images = Vec::with_capacity(poses.len());
    let mut grads = Vec::with_capacity(poses.len());
    for (i, (im, pose)) in obs.images.iter().zip(poses).enumerate() {
        let frame = PoseFrame::new(pose);
        let mut info = ImageInformation::zeros(k);
        let mut g = ImageGradient { g_theta: DVector::zeros(k), g_pose: Vector6::zeros() };
        for (c, cw) in im.corners.iter().zip(&w[i]) {
            let jb = frame
                .jacobian_blocks(theta, &obs.target.point(c.j))
                .map_err(|_| CalibrationError::PointBehindCamera { image: i, point: c.j })?;
            info.accumulate(&jb, cw);
            let cr = cw * (c.position() - jb.point);
            g.g_theta += jb.a.transpose() * cr;
            g.g_pose += jb.b.transpose() * cr;
        }
        images.push(info);
        grads.push(g);
    }
    Ok(Linearization { images, grads })
}

/// Damped normal-equation step via elimination of the pose blocks.
fn solve_step(lin: &Linearization, lambda: f64) -> Option<(DVector<f64>, Vec<Vector6<f64>>)> {
    let k = lin.grads[0].g_theta.len();
    let mut s = DMatrix::<f64>::identity(k, k) * lambda;
    let mut rhs = DVector::zeros(k);
    let mut v_inv = Vec::with_capacity(lin.images.len());
    for (info, g) in lin.images.iter().zip(&lin.grads) {
        s += &info.u;
        rhs += &g.g_theta;
        let vd = info.v + Matrix6::identity() * lambda;
        let vi = vd.cholesky()?.inverse();
        let wv = &info.w * DMatrix::from_iterator(6, 6, vi.iter().copied());
        s -= &wv * info.w.transpose();
        rhs -= &wv * DVector::from_iterator(6, g.g_pose.iter().copied());
        v_inv.push(vi);
    }
    let s = (&s + s.transpose()) * 0.5;
    let d_theta = s.cholesky()?.solve(&rhs);
    let d_poses = lin
        .images
        .iter()
        .zip(&lin.grads)
        .zip(&v_inv)
        .map(|((info, g), vi)| {
            let wt_d = info.w.transpose() * &d_theta;
            let wt_d = Vector6::from_iterator(wt_d.iter().copied());
            vi * (g.g_pose - wt_d)
        })
        .collect();
    Some((d_theta, d_poses))
}

fn apply_step(
    theta: &IntrinsicParams,
    poses: &[Pose],
    d_theta: &DVector<f64>,
    d_poses: &[Vector6<f64>],
) -> (IntrinsicParams, Vec<Pose>) {
    let p: Vec<f64> = theta.to_vec().iter().zip(d_theta.iter()).map(|(a, b)| a + b).collect();
    let new_theta = IntrinsicParams::from_slice(theta.model, &p);
    let new_poses = poses
        .iter()
        .zip(d_poses)
        .map(|(pose, d)| Pose::from_vector(&(pose.to_vector() + d)))
        .collect();
    (new_theta, new_poses)
}

/// Minimizes the (optionally weighted) reprojection error over intrinsics and
/// all poses starting from `state`.
///
/// Non-convergence within the iteration limit is reported through
/// [`BundleReport::converged`], with the best iterate returned.
pub fn optimize_bundle(
    state: &CalibrationState,
    obs: &ObservationSet,
    cfg: &BundleConfig,
) -> Result<(CalibrationState, BundleReport), CalibrationError> {
    if state.poses.len() != obs.images.len() {
        return Err(CalibrationError::InvalidObservations(format!(
            "{} poses for {} images",
            state.poses.len(),
            obs.images.len()
        )));
    }
    if obs.corner_count() == 0 {
        return Err(CalibrationError::EmptyObservations);
    }
    let finite = state.theta.to_vec().iter().all(|x| x.is_finite())
        && state.poses.iter().all(|p| p.to_vector().iter().all(|x| x.is_finite()));
    if !finite {
        return Err(CalibrationError::InvalidObservations("non-finite starting point".into()));
    }

    let w = weights(obs, cfg.weighted);
    let mut theta = state.theta;
    let mut poses = state.poses.clone();
    let mut current = cost(&theta, &poses, obs, &w)?;
    let mut history = vec![current];
    let mut lambda: Option<f64> = None;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iterations {
        if current == 0.0 {
            converged = true;
            break;
        }
        let lin = linearize(&theta, &poses, obs, &w)?;
        let grad_max = lin
            .grads
            .iter()
            .flat_map(|g| g.g_theta.iter().chain(g.g_pose.iter()))
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        if grad_max <= 1e-14 * current.max(1e-300).sqrt() {
            converged = true;
            break;
        }
        iterations += 1;
        let mut lam = *lambda.get_or_insert_with(|| {
            let n = theta.param_count() + 6 * lin.images.len();
            let diag: f64 = lin.images.iter().map(|i| i.u.trace() + i.v.trace()).sum();
            cfg.initial_damping * diag / n as f64
        });
        let mut accepted = false;
        let mut singular_failures = 0;
        for _ in 0..MAX_REJECTIONS {
            let Some((d_theta, d_poses)) = solve_step(&lin, lam) else {
                singular_failures += 1;
                if singular_failures > 10 {
                    return Err(CalibrationError::SingularNormalEquations);
                }
                lam *= 10.0;
                continue;
            };
            let (nt, np) = apply_step(&theta, &poses, &d_theta, &d_poses);
            let candidate = match cost(&nt, &np, obs, &w) {
                Ok(c) if c.is_finite() => Some(c),
                _ => None,
            };
            match candidate {
                Some(c) if c < current => {
                    let rel = (current - c) / current;
                    theta = nt;
                    poses = np;
                    current = c;
                    history.push(c);
                    lam /= 10.0;
                    accepted = true;
                    if rel < cfg.tol {
                        converged = true;
                    }
                    break;
                }
                _ => lam *= 10.0,
            }
        }
        lambda = Some(lam);
        if !accepted {
            // No decrease at any damping: numerically at a minimum.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    let out = CalibrationState::evaluate(theta, poses, obs, cfg.weighted)?;
    Ok((out, BundleReport { iterations, converged, cost_history: history }))
}
