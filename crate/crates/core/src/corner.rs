//! Synthetic X-corner autocorrelation model and predicted corner weights.
//!
//! Canonical rendering frame (beta = 0): the two edges lie at `+-alpha/2` from
//! the patch x-axis, so the wedge of opening `alpha` is bisected by the x-axis.
//! In that frame `C` is diagonal with `f(alpha)` on the y-axis. The prediction
//! frame puts `f(alpha)` first, i.e. it is the rendering frame turned by 90 deg.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{IntrinsicParams, Pose, TargetSpec};

pub const SUPERSAMPLE: usize = 4;
pub const DEFAULT_PATCH_SIZE: usize = 21;
pub const POLY_DEGREE: usize = 6;
pub const ALPHA_MIN: f64 = 30.0;
pub const ALPHA_MAX: f64 = 150.0;
pub const CONTRAST_REF: f64 = 255.0;
/// Offset from the grid-geometry `beta` to the prediction frame in degrees.
pub const GRID_TO_MODEL_BETA: f64 = -45.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CornerError {
    #[error("opening angle {0} deg is outside the valid range")]
    InvalidAngle(f64),
    #[error("invalid patch size {0}")]
    InvalidSize(usize),
    #[error("patch has no gradient")]
    DegeneratePatch,
    #[error("fit for blur {sigma} has relative residual {residual}")]
    FitFailure { sigma: f64, residual: f64 },
    #[error("opening angle {0} deg is outside the fitted range")]
    AngleOutOfRange(f64),
    #[error("corner {0} lacks a row or column neighbour")]
    InsufficientNeighbors(usize),
    #[error("invalid corner model: {0}")]
    InvalidModel(String),
}

/// Square greyscale patch, row-major, values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Patch {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.size + x]
    }

    pub fn transpose(&self) -> Self {
        let n = self.size;
        Self { size: n, data: (0..n * n).map(|i| self.get(i / n, i % n)).collect() }
    }

    pub fn inverted(&self) -> Self {
        Self { size: self.size, data: self.data.iter().map(|v| 255.0 - v).collect() }
    }

    /// Rotates the content by +90 deg (x-axis onto y-axis).
    pub fn rotated90(&self) -> Self {
        let n = self.size;
        // new(x, y) = old(y, n-1-x)
        Self { size: n, data: (0..n * n).map(|i| self.get(i / n, n - 1 - i % n)).collect() }
    }

    /// Sum of squared central-difference gradients over the window.
    pub fn gradient_energy(&self) -> f64 {
        let c = autocorrelation_raw(self);
        c[(0, 0)] + c[(1, 1)]
    }
}

/// Coverage of a sample point: 1 inside the wedges bisected by the canonical
/// x-axis, 0 inside the others, 1/2 on an edge.
fn coverage(x: f64, y: f64, e1: Vector2<f64>, e2: Vector2<f64>) -> f64 {
    let tol = 1e-12 * x.hypot(y);
    let side = |e: Vector2<f64>| {
        let s = e.x * y - e.y * x;
        if s.abs() <= tol { 0.0 } else { s.signum() }
    };
    match side(e1) * side(e2) {
        p if p < 0.0 => 1.0,
        p if p > 0.0 => 0.0,
        _ => 0.5,
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn blur(data: &[f64], n: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let sample = |v: &[f64], x: isize, y: isize| {
        let cx = x.clamp(0, n as isize - 1) as usize;
        let cy = y.clamp(0, n as isize - 1) as usize;
        v[cy * n + cx]
    };
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            tmp[y * n + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, w)| w * sample(data, x as isize + i as isize - r as isize, y as isize))
                .sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            out[y * n + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, w)| w * sample(&tmp, x as isize, y as isize + i as isize - r as isize))
                .sum();
        }
    }
    out
}

/// Anti-aliased X-corner of opening `alpha` rotated by `beta` (degrees),
/// blurred with a Gaussian of std `sigma` pixels.
pub fn render_corner_patch(alpha: f64, beta: f64, sigma: f64, size: usize) -> Result<Patch, CornerError> {
    if !(10.0..=170.0).contains(&alpha) {
        return Err(CornerError::InvalidAngle(alpha));
    }
    if size < 5 || size % 2 == 0 {
        return Err(CornerError::InvalidSize(size));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(CornerError::InvalidModel(format!("blur sigma {sigma}")));
    }
    let kernel = (sigma > 0.0).then(|| gaussian_kernel(sigma));
    let pad = kernel.as_ref().map_or(0, |k| k.len() / 2);
    let n = size + 2 * pad;
    let centre = (n as f64 - 1.0) / 2.0;
    let half = alpha.to_radians() / 2.0;
    let e1 = Vector2::new((beta.to_radians() + half).cos(), (beta.to_radians() + half).sin());
    let e2 = Vector2::new((beta.to_radians() - half).cos(), (beta.to_radians() - half).sin());
    let ss = SUPERSAMPLE as f64;
    let mut data = vec![0.0; n * n];
    for py in 0..n {
        for px in 0..n {
            let mut white = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f64 - centre + (sx as f64 + 0.5) / ss - 0.5;
                    let y = py as f64 - centre + (sy as f64 + 0.5) / ss - 0.5;
                    white += coverage(x, y, e1, e2);
                }
            }
            data[py * n + px] = 255.0 * white / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        }
    }
    if let Some(k) = &kernel {
        data = blur(&data, n, k);
    }
    let crop = (0..size * size).map(|i| data[(i / size + pad) * n + i % size + pad]).collect();
    Ok(Patch { size, data: crop })
}

fn autocorrelation_raw(patch: &Patch) -> Matrix2<f64> {
    let n = patch.size;
    let centre = (n as f64 - 1.0) / 2.0;
    let radius2 = (centre - 1.0).powi(2);
    let mut c = Matrix2::zeros();
    for y in 1..n - 1 {
        for x in 1..n - 1 {
            if (x as f64 - centre).powi(2) + (y as f64 - centre).powi(2) > radius2 {
                continue;
            }
            let ix = 0.5 * (patch.get(x + 1, y) - patch.get(x - 1, y));
            let iy = 0.5 * (patch.get(x, y + 1) - patch.get(x, y - 1));
            c[(0, 0)] += ix * ix;
            c[(0, 1)] += ix * iy;
            c[(1, 1)] += iy * iy;
        }
    }
    c[(1, 0)] = c[(0, 1)];
    c
}

/// Structure tensor of the patch from central-difference gradients, summed
/// over the disc inscribed in the interior pixels so that the result rotates
/// with the corner.
pub fn autocorrelation_of_patch(patch: &Patch) -> Result<Matrix2<f64>, CornerError> {
    if patch.size < 5 || patch.data.len() != patch.size * patch.size {
        return Err(CornerError::InvalidSize(patch.size));
    }
    let c = autocorrelation_raw(patch);
    if c[(0, 0)] + c[(1, 1)] == 0.0 {
        return Err(CornerError::DegeneratePatch);
    }
    Ok(c)
}

/// Eigenvalues of `c` ordered as (eigenvector nearest (0,1), the other one).
pub fn axis_eigenvalues(c: &Matrix2<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(*c);
    let (a, b) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    if eig.eigenvectors[(1, 0)].abs() >= eig.eigenvectors[(1, 1)].abs() {
        (a, b)
    } else {
        (b, a)
    }
}

/// Measured `f(alpha)` at one blur level.
pub fn measured_eigenvalue(alpha: f64, sigma: f64, size: usize) -> Result<f64, CornerError> {
    let c = autocorrelation_of_patch(&render_corner_patch(alpha, 0.0, sigma, size)?)?;
    Ok(axis_eigenvalues(&c).0)
}

fn poly_var(alpha: f64) -> f64 {
    (alpha - 90.0) / 60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurLevel {
    pub sigma: f64,
    /// Ascending coefficients in `t = (alpha - 90) / 60`.
    pub coeffs: Vec<f64>,
}

impl BlurLevel {
    fn eval(&self, alpha: f64) -> f64 {
        let t = poly_var(alpha);
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerModel {
    pub patch_size: usize,
    pub levels: Vec<BlurLevel>,
}

pub fn default_alpha_samples() -> Vec<f64> {
    (0..=24).map(|i| ALPHA_MIN + 5.0 * i as f64).collect()
}

/// Fits `f(alpha)` per blur level from rendered corners.
pub fn build_corner_model(
    blur_levels: &[f64],
    alpha_samples: &[f64],
    patch_size: usize,
) -> Result<CornerModel, CornerError> {
    if alpha_samples.len() < 8 {
        return Err(CornerError::InvalidModel(format!(
            "at least 8 opening angles required, got {}",
            alpha_samples.len()
        )));
    }
    let lo = alpha_samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = alpha_samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo > ALPHA_MIN + 1e-9 || hi < ALPHA_MAX - 1e-9 {
        return Err(CornerError::InvalidModel(format!(
            "opening angles must span [{ALPHA_MIN}, {ALPHA_MAX}]"
        )));
    }
    if blur_levels.is_empty() {
        return Err(CornerError::InvalidModel("no blur levels".into()));
    }
    let mut sorted = blur_levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let n = alpha_samples.len();
    let vander = DMatrix::from_fn(n, POLY_DEGREE + 1, |r, c| poly_var(alpha_samples[r]).powi(c as i32));
    let svd = vander.clone().svd(true, true);
    let mut levels = Vec::with_capacity(sorted.len());
    for &sigma in &sorted {
        let y = alpha_samples
            .iter()
            .map(|&a| measured_eigenvalue(a, sigma, patch_size))
            .collect::<Result<Vec<_>, _>>()?;
        let y = DVector::from_vec(y);
        let coeffs = svd.solve(&y, 1e-14).expect("svd with both factors");
        let level = BlurLevel { sigma, coeffs: coeffs.iter().copied().collect() };
        let resid = &vander * &coeffs - &y;
        let range = y.max() - y.min();
        let rms = (resid.norm_squared() / n as f64).sqrt();
        let relative = if range > 0.0 { rms / range } else { 0.0 };
        let positive = (0..=120).all(|i| level.eval(ALPHA_MIN + i as f64) > 0.0);
        if relative >= 0.02 || !positive {
            return Err(CornerError::FitFailure { sigma, residual: relative });
        }
        levels.push(level);
    }
    Ok(CornerModel { patch_size, levels })
}

fn rotation2(beta_deg: f64) -> Matrix2<f64> {
    let (s, c) = beta_deg.to_radians().sin_cos();
    Matrix2::new(c, -s, s, c)
}

impl CornerModel {
    /// Model with the default blur levels 0..3 and opening-angle samples.
    pub fn build_default() -> Result<Self, CornerError> {
        build_corner_model(&[0.0, 1.0, 2.0, 3.0], &default_alpha_samples(), DEFAULT_PATCH_SIZE)
    }

    pub fn validate(&self) -> Result<(), CornerError> {
        if self.levels.is_empty() {
            return Err(CornerError::InvalidModel("no blur levels".into()));
        }
        if self.levels.iter().any(|l| l.coeffs.len() != POLY_DEGREE + 1 || !l.sigma.is_finite()) {
            return Err(CornerError::InvalidModel(format!("each level needs {} coefficients", POLY_DEGREE + 1)));
        }
        if self.levels.windows(2).any(|w| w[0].sigma >= w[1].sigma) {
            return Err(CornerError::InvalidModel("blur levels must be strictly increasing".into()));
        }
        Ok(())
    }

    /// `f(alpha)` at blur `sigma`, linearly interpolated between levels and
    /// clamped to the outermost ones.
    pub fn f(&self, alpha: f64, sigma: f64) -> Result<f64, CornerError> {
        if !(ALPHA_MIN..=ALPHA_MAX).contains(&alpha) {
            return Err(CornerError::AngleOutOfRange(alpha));
        }
        let first = &self.levels[0];
        let last = &self.levels[self.levels.len() - 1];
        if sigma <= first.sigma {
            return Ok(first.eval(alpha));
        }
        if sigma >= last.sigma {
            return Ok(last.eval(alpha));
        }
        let i = self.levels.iter().position(|l| l.sigma > sigma).expect("bracketed");
        let (a, b) = (&self.levels[i - 1], &self.levels[i]);
        let w = (sigma - a.sigma) / (b.sigma - a.sigma);
        Ok((1.0 - w) * a.eval(alpha) + w * b.eval(alpha))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CornerError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| CornerError::InvalidModel(e.to_string()))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| CornerError::InvalidModel(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("model serializes"))
    }
}

/// `R(beta) diag(f(alpha), f(180 - alpha)) R(beta)^T * x^2 / 255^2`.
pub fn predict_autocorrelation(
    alpha: f64,
    beta: f64,
    sigma: f64,
    contrast: f64,
    model: &CornerModel,
) -> Result<Matrix2<f64>, CornerError> {
    let d = Matrix2::new(model.f(alpha, sigma)?, 0.0, 0.0, model.f(180.0 - alpha, sigma)?);
    let r = rotation2(beta);
    let c = r * d * r.transpose();
    let c = (c + c.transpose()) * 0.5;
    Ok(c * (contrast * contrast / (CONTRAST_REF * CONTRAST_REF)))
}

/// Opening angle and rotation (degrees) of corner `j` from its projected grid
/// neighbours. `points[j]` is `None` for corners that are not visible.
pub fn corner_geometry_from_projection(
    points: &[Option<Vector2<f64>>],
    target: &TargetSpec,
    j: usize,
) -> Result<(f64, f64), CornerError> {
    let p = points.get(j).copied().flatten().ok_or(CornerError::InsufficientNeighbors(j))?;
    let (row, col) = target.row_col(j);
    let at = |r: usize, c: usize| points.get(target.index(r, c)).copied().flatten();
    let dir = |forward: Option<Vector2<f64>>, backward: Option<Vector2<f64>>| {
        forward.map(|q| q - p).or_else(|| backward.map(|q| p - q)).filter(|d| d.norm() > 0.0).map(|d| d.normalize())
    };
    let d1 = dir(
        (col + 1 < target.cols).then(|| at(row, col + 1)).flatten(),
        (col > 0).then(|| at(row, col - 1)).flatten(),
    )
    .ok_or(CornerError::InsufficientNeighbors(j))?;
    let d2 = dir(
        (row + 1 < target.rows).then(|| at(row + 1, col)).flatten(),
        (row > 0).then(|| at(row - 1, col)).flatten(),
    )
    .ok_or(CornerError::InsufficientNeighbors(j))?;
    let alpha = d1.dot(&d2).clamp(-1.0, 1.0).acos().to_degrees();
    let bis = d1 + d2;
    if bis.norm() < 1e-12 {
        return Err(CornerError::InsufficientNeighbors(j));
    }
    let beta = crate::geometry::wrap_angle(bis.y.atan2(bis.x) - std::f64::consts::FRAC_PI_4).to_degrees();
    Ok((alpha, beta))
}

/// Blur and contrast assumed for predicted corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerConditions<'a> {
    pub model: &'a CornerModel,
    pub sigma: f64,
    pub contrast: f64,
}

/// Predicted weight of every target corner under `(theta, pose)`. Opening
/// angles outside the fitted range are clamped. `None` when the pose puts a
/// corner behind the camera.
pub fn predicted_weights(
    theta: &IntrinsicParams,
    pose: &Pose,
    target: &TargetSpec,
    cond: &CornerConditions,
) -> Option<Vec<Matrix2<f64>>> {
    let r = pose.rotation();
    let pts: Vec<Option<Vector2<f64>>> = (0..target.len())
        .map(|j| theta.project_local(&(r * target.point(j) + pose.t)).ok())
        .collect();
    if pts.iter().any(Option::is_none) {
        return None;
    }
    (0..target.len())
        .map(|j| {
            let (alpha, beta) = corner_geometry_from_projection(&pts, target, j).ok()?;
            let alpha = alpha.clamp(ALPHA_MIN, ALPHA_MAX);
            predict_autocorrelation(alpha, beta + GRID_TO_MODEL_BETA, cond.sigma, cond.contrast, cond.model).ok()
        })
        .collect()
}
