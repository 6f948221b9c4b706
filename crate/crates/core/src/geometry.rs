//! Camera models, pose parameterization and analytic projection derivatives.
//!
//! A pose maps target coordinates into the camera frame, `S = R Q + t`, with
//! `R = Rz(gamma) Ry(beta) Rx(alpha)`. Intrinsics are a focal length, a
//! principal point and up to two radial distortion coefficients applied to the
//! normalized point before focal scaling.

use std::f64::consts::PI;

use nalgebra::{Matrix2x3, Matrix2x6, Matrix2xX, Matrix3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points closer to the image plane than this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point behind camera (depth {depth})")]
    PointBehindCamera { depth: f64 },
    #[error("invalid intrinsic parameters: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("undistortion did not converge at pixel ({x}, {y})")]
    UndistortDivergence { x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "pinhole3")]
    Pinhole3,
    #[serde(rename = "pinhole-k1")]
    PinholeK1,
    #[serde(rename = "pinhole-k1k2")]
    PinholeK1K2,
}

impl ModelKind {
    /// Number of intrinsic parameters `k`.
    pub fn param_count(self) -> usize {
        match self {
            ModelKind::Pinhole3 => 3,
            ModelKind::PinholeK1 => 4,
            ModelKind::PinholeK1K2 => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pinhole3 => "pinhole3",
            ModelKind::PinholeK1 => "pinhole-k1",
            ModelKind::PinholeK1K2 => "pinhole-k1k2",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pinhole3" => Ok(ModelKind::Pinhole3),
            "pinhole-k1" => Ok(ModelKind::PinholeK1),
            "pinhole-k1k2" => Ok(ModelKind::PinholeK1K2),
            other => Err(GeometryError::InvalidIntrinsics(format!(
                "unknown model kind `{other}`"
            ))),
        }
    }
}

/// Intrinsic parameters. Coefficients not used by `model` are kept at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicParams {
    pub model: ModelKind,
    pub f: f64,
    pub u: f64,
    pub v: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
}

impl IntrinsicParams {
    pub fn pinhole(f: f64, u: f64, v: f64) -> Self {
        Self { model: ModelKind::Pinhole3, f, u, v, k1: 0.0, k2: 0.0 }
    }

    pub fn with_k1(f: f64, u: f64, v: f64, k1: f64) -> Self {
        Self { model: ModelKind::PinholeK1, f, u, v, k1, k2: 0.0 }
    }

    pub fn with_k1k2(f: f64, u: f64, v: f64, k1: f64, k2: f64) -> Self {
        Self { model: ModelKind::PinholeK1K2, f, u, v, k1, k2 }
    }

    /// Same focal length and principal point, distortion reset to zero, under `model`.
    pub fn as_model(&self, model: ModelKind) -> Self {
        let mut out = *self;
        out.model = model;
        if model.param_count() < 4 {
            out.k1 = 0.0;
        }
        if model.param_count() < 5 {
            out.k2 = 0.0;
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.model.param_count()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.f.is_finite() && self.f > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal length must be positive, got {}",
                self.f
            )));
        }
        let all = [self.u, self.v, self.k1, self.k2];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("non-finite parameter".into()));
        }
        if (self.model.param_count() < 4 && self.k1 != 0.0)
            || (self.model.param_count() < 5 && self.k2 != 0.0)
        {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "distortion coefficient set on model {}",
                self.model.name()
            )));
        }
        Ok(())
    }

    /// Parameter vector `(f, u, v[, k1[, k2]])`.
    pub fn to_vec(&self) -> Vec<f64> {
        let all = [self.f, self.u, self.v, self.k1, self.k2];
        all[..self.param_count()].to_vec()
    }

    pub fn from_slice(model: ModelKind, p: &[f64]) -> Self {
        assert_eq!(p.len(), model.param_count(), "parameter vector length");
        Self {
            model,
            f: p[0],
            u: p[1],
            v: p[2],
            k1: p.get(3).copied().unwrap_or(0.0),
            k2: p.get(4).copied().unwrap_or(0.0),
        }
    }

    /// Radial factor `1 + k1 r^2 + k2 r^4` for squared normalized radius `r2`.
    pub fn radial_factor(&self, r2: f64) -> f64 {
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }

    /// Local projection `q(Theta, S)` of a camera-frame point.
    pub fn project_local(&self, s: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        if s.z <= MIN_DEPTH {
            return Err(GeometryError::PointBehindCamera { depth: s.z });
        }
        let xn = s.x / s.z;
        let yn = s.y / s.z;
        let d = self.radial_factor(xn * xn + yn * yn);
        Ok(Vector2::new(self.u + self.f * d * xn, self.v + self.f * d * yn))
    }

    /// Local projection together with its derivatives w.r.t. `Theta` and `S`.
    pub fn project_local_with_derivatives(
        &self,
        s: &Vector3<f64>,
    ) -> Result<LocalProjection, GeometryError> {
        if s.z <= MIN_DEPTH {
            return Err(GeometryError::PointBehindCamera { depth: s.z });
        }
        let iz = 1.0 / s.z;
        let xn = s.x * iz;
        let yn = s.y * iz;
        let r2 = xn * xn + yn * yn;
        let d = self.radial_factor(r2);
        let f = self.f;

        let k = self.param_count();
        let mut d_theta = Matrix2xX::zeros(k);
        d_theta[(0, 0)] = d * xn;
        d_theta[(1, 0)] = d * yn;
        d_theta[(0, 1)] = 1.0;
        d_theta[(1, 2)] = 1.0;
        if k >= 4 {
            d_theta[(0, 3)] = f * r2 * xn;
            d_theta[(1, 3)] = f * r2 * yn;
        }
        if k >= 5 {
            d_theta[(0, 4)] = f * r2 * r2 * xn;
            d_theta[(1, 4)] = f * r2 * r2 * yn;
        }

        // q = f d(r2) n, with n the normalized point.
        let dd_dr2 = self.k1 + 2.0 * self.k2 * r2;
        let dq_dn = Matrix2x3::new(
            f * (d + 2.0 * dd_dr2 * xn * xn),
            f * 2.0 * dd_dr2 * xn * yn,
            0.0,
            f * 2.0 * dd_dr2 * xn * yn,
            f * (d + 2.0 * dd_dr2 * yn * yn),
            0.0,
        );
        let dn_ds = Matrix3::new(iz, 0.0, -xn * iz, 0.0, iz, -yn * iz, 0.0, 0.0, 0.0);
        let d_s = dq_dn * dn_ds;

        Ok(LocalProjection {
            point: Vector2::new(self.u + f * d * xn, self.v + f * d * yn),
            d_theta,
            d_s,
        })
    }
}

impl IntrinsicParams {
    /// Undistorted normalized coordinates `(S1/S3, S2/S3)` of a pixel.
    ///
    /// Ten fixed-point iterations followed by a Newton polish on the radius.
    /// Fails where the radial map is not locally invertible.
    pub fn normalize_pixel(&self, px: &Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
        let diverged = || GeometryError::UndistortDivergence { x: px.x, y: px.y };
        let distorted = Vector2::new((px.x - self.u) / self.f, (px.y - self.v) / self.f);
        if self.k1 == 0.0 && self.k2 == 0.0 {
            return Ok(distorted);
        }
        let rho_d = distorted.norm();
        if rho_d == 0.0 {
            return Ok(distorted);
        }

        let mut n = distorted;
        for _ in 0..10 {
            n = distorted / self.radial_factor(n.norm_squared());
        }
        let mut rho = n.norm();
        if !rho.is_finite() || rho > 10.0 * rho_d.max(1.0) {
            rho = rho_d;
        }
        let (k1, k2) = (self.k1, self.k2);
        let mut converged = false;
        for _ in 0..50 {
            let r2 = rho * rho;
            let g = rho * self.radial_factor(r2) - rho_d;
            let dg = 1.0 + 3.0 * k1 * r2 + 5.0 * k2 * r2 * r2;
            if dg <= 0.0 {
                return Err(diverged());
            }
            let step = g / dg;
            rho -= step;
            if step.abs() <= 1e-15 * rho_d.max(1e-300) + 1e-17 {
                converged = true;
                break;
            }
        }
        let r2 = rho * rho;
        let dg = 1.0 + 3.0 * k1 * r2 + 5.0 * k2 * r2 * r2;
        if !converged || !rho.is_finite() || rho < 0.0 || dg <= 0.0 {
            return Err(diverged());
        }
        Ok(distorted * (rho / rho_d))
    }
}

#[derive(Debug, Clone)]
pub struct LocalProjection {
    pub point: Vector2<f64>,
    /// `dq/dTheta`, 2 x k.
    pub d_theta: Matrix2xX<f64>,
    /// `dq/dS`, 2 x 3.
    pub d_s: Matrix2x3<f64>,
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// `R = Rz(gamma) Ry(beta) Rx(alpha)` for `angles = (alpha, beta, gamma)`.
pub fn rotation_from_angles(angles: &Vector3<f64>) -> Matrix3<f64> {
    rot_z(angles.z) * rot_y(angles.y) * rot_x(angles.x)
}

/// Inverse of [`rotation_from_angles`]; `beta` is returned in `[-pi/2, pi/2]`.
pub fn angles_from_rotation(r: &Matrix3<f64>) -> Vector3<f64> {
    let sb = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let beta = sb.asin();
    let cb = beta.cos();
    if cb > 1e-9 {
        let alpha = r[(2, 1)].atan2(r[(2, 2)]);
        let gamma = r[(1, 0)].atan2(r[(0, 0)]);
        Vector3::new(alpha, beta, gamma)
    } else {
        // Gimbal lock: only alpha - gamma (or alpha + gamma) is observable.
        let alpha = (-r[(1, 2)]).atan2(r[(1, 1)]);
        Vector3::new(alpha, beta, 0.0)
    }
}

/// Extrinsic parameters `(t1, t2, t3, alpha, beta, gamma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub t: Vector3<f64>,
    /// Radians, each in `(-pi, pi]`.
    pub angles: Vector3<f64>,
}

impl Pose {
    pub fn new(t: Vector3<f64>, angles: Vector3<f64>) -> Self {
        Self { t, angles: angles.map(wrap_angle) }
    }

    pub fn from_degrees(t: [f64; 3], angles_deg: [f64; 3]) -> Self {
        Self::new(
            Vector3::from(t),
            Vector3::from(angles_deg).map(f64::to_radians),
        )
    }

    pub fn from_rotation(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        Self::new(t, angles_from_rotation(r))
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_from_angles(&self.angles)
    }

    pub fn angles_deg(&self) -> [f64; 3] {
        [self.angles.x.to_degrees(), self.angles.y.to_degrees(), self.angles.z.to_degrees()]
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.t.x, self.t.y, self.t.z, self.angles.x, self.angles.y, self.angles.z)
    }

    pub fn from_vector(p: &Vector6<f64>) -> Self {
        Self::new(Vector3::new(p[0], p[1], p[2]), Vector3::new(p[3], p[4], p[5]))
    }

    /// Camera-frame coordinates `S = R Q + t`.
    pub fn transform(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * q + self.t
    }
}

/// Pose representation used in JSON files: translation plus angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub t: [f64; 3],
    pub angles_deg: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        Self { t: [p.t.x, p.t.y, p.t.z], angles_deg: p.angles_deg() }
    }
}

impl From<&PoseRecord> for Pose {
    fn from(r: &PoseRecord) -> Self {
        Pose::from_degrees(r.t, r.angles_deg)
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        PoseRecord::deserialize(d).map(|r| Pose::from(&r))
    }
}

/// Planar grid of inner corners, centred on the target origin with `Z = 0`.
///
/// Corner `j = row * cols + col` sits at
/// `((col - (cols-1)/2) * spacing, (row - (rows-1)/2) * spacing, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self { rows: 6, cols: 9, spacing: 1.0 }
    }
}

impl TargetSpec {
    pub fn new(rows: usize, cols: usize, spacing: f64) -> Result<Self, GeometryError> {
        let t = Self { rows, cols, spacing };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.rows < 2 || self.cols < 2 {
            return Err(GeometryError::InvalidTarget(format!(
                "grid must be at least 2x2, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(GeometryError::InvalidTarget(format!(
                "spacing must be positive, got {}",
                self.spacing
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row_col(&self, j: usize) -> (usize, usize) {
        (j / self.cols, j % self.cols)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn point(&self, j: usize) -> Vector3<f64> {
        let (r, c) = self.row_col(j);
        let cx = (self.cols as f64 - 1.0) / 2.0;
        let cy = (self.rows as f64 - 1.0) / 2.0;
        Vector3::new((c as f64 - cx) * self.spacing, (r as f64 - cy) * self.spacing, 0.0)
    }

    pub fn points(&self) -> Vec<Vector3<f64>> {
        (0..self.len()).map(|j| self.point(j)).collect()
    }

    /// Length of the diagonal spanned by the outer corners.
    pub fn diagonal(&self) -> f64 {
        let w = (self.cols as f64 - 1.0) * self.spacing;
        let h = (self.rows as f64 - 1.0) * self.spacing;
        w.hypot(h)
    }
}

/// Global projection `p(Theta, Pi, Q)`.
pub fn project(
    theta: &IntrinsicParams,
    pose: &Pose,
    q: &Vector3<f64>,
) -> Result<Vector2<f64>, GeometryError> {
    theta.project_local(&pose.transform(q))
}

/// Project the whole target; fails on the first point behind the camera.
pub fn project_target(
    theta: &IntrinsicParams,
    pose: &Pose,
    target: &TargetSpec,
) -> Result<Vec<Vector2<f64>>, GeometryError> {
    let r = pose.rotation();
    (0..target.len())
        .map(|j| theta.project_local(&(r * target.point(j) + pose.t)))
        .collect()
}

/// Derivatives of the projection of one point.
///
/// `a` is `d(p_x, p_y)/dTheta` and `b` is `d(p_x, p_y)/dPi`. These are
/// derivatives of the projection; the residual `obs - p` has the negated
/// Jacobian, which the solver accounts for.
#[derive(Debug, Clone)]
pub struct JacobianBlocks {
    pub point: Vector2<f64>,
    pub a: Matrix2xX<f64>,
    pub b: Matrix2x6<f64>,
}

/// Rotation and its three angle derivatives, for evaluating many points per pose.
#[derive(Debug, Clone)]
pub struct PoseFrame {
    pub rotation: Matrix3<f64>,
    pub d_alpha: Matrix3<f64>,
    pub d_beta: Matrix3<f64>,
    pub d_gamma: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl PoseFrame {
    pub fn new(pose: &Pose) -> Self {
        let (a, b, g) = (pose.angles.x, pose.angles.y, pose.angles.z);
        let (rx, ry, rz) = (rot_x(a), rot_y(b), rot_z(g));
        Self {
            rotation: rz * ry * rx,
            d_alpha: rz * ry * drot_x(a),
            d_beta: rz * drot_y(b) * rx,
            d_gamma: drot_z(g) * ry * rx,
            t: pose.t,
        }
    }

    pub fn jacobian_blocks(
        &self,
        theta: &IntrinsicParams,
        q: &Vector3<f64>,
    ) -> Result<JacobianBlocks, GeometryError> {
        let s = self.rotation * q + self.t;
        let lp = theta.project_local_with_derivatives(&s)?;
        let ds_dangles = Matrix3::from_columns(&[self.d_alpha * q, self.d_beta * q, self.d_gamma * q]);
        let b_rot = lp.d_s * ds_dangles;
        let mut b = Matrix2x6::zeros();
        b.fixed_view_mut::<2, 3>(0, 0).copy_from(&lp.d_s);
        b.fixed_view_mut::<2, 3>(0, 3).copy_from(&b_rot);
        Ok(JacobianBlocks { point: lp.point, a: lp.d_theta, b })
    }
}

/// Analytic `A_ij` and `B_ij` blocks for one point.
pub fn jacobian_blocks(
    theta: &IntrinsicParams,
    pose: &Pose,
    q: &Vector3<f64>,
) -> Result<JacobianBlocks, GeometryError> {
    PoseFrame::new(pose).jacobian_blocks(theta, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_rotation() {
        let r = rotation_from_angles(&Vector3::zeros());
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_x() {
        let r = rotation_from_angles(&Vector3::new(PI / 2.0, 0.0, 0.0));
        let out = r * Vector3::new(0.0, 1.0, 0.0);
        assert_relative_eq!(out, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn angles_wrap_into_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        let p = Pose::new(Vector3::zeros(), Vector3::new(7.0, -7.0, 0.5));
        assert!(p.angles.iter().all(|a| *a > -PI && *a <= PI));
    }

    #[test]
    fn angle_round_trip() {
        let a = Vector3::new(0.3, -1.1, 2.5);
        let back = angles_from_rotation(&rotation_from_angles(&a));
        assert_relative_eq!(back, a, epsilon = 1e-12);
    }

    #[test]
    fn project_optical_axis_point() {
        let theta = IntrinsicParams::pinhole(800.0, 320.0, 240.0);
        let pose = Pose::new(Vector3::new(0.0, 0.0, 2.0), Vector3::zeros());
        let p = project(&theta, &pose, &Vector3::zeros()).unwrap();
        assert_eq!(p, Vector2::new(320.0, 240.0));
    }

    #[test]
    fn project_with_k1() {
        let theta = IntrinsicParams::with_k1(800.0, 320.0, 240.0, 0.5);
        let p = theta.project_local(&Vector3::new(0.1, 0.0, 1.0)).unwrap();
        assert_relative_eq!(p.x, 400.4, epsilon = 1e-9);
        assert_relative_eq!(p.y, 240.0, epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_rejected() {
        let theta = IntrinsicParams::pinhole(800.0, 320.0, 240.0);
        let err = theta.project_local(&Vector3::new(0.0, 0.0, 1e-10)).unwrap_err();
        assert!(matches!(err, GeometryError::PointBehindCamera { .. }));
        let pose = Pose::new(Vector3::new(0.0, 0.0, -1.0), Vector3::zeros());
        assert!(jacobian_blocks(&theta, &pose, &Vector3::zeros()).is_err());
    }

    #[test]
    fn optical_axis_intrinsic_derivatives() {
        let theta = IntrinsicParams::pinhole(800.0, 320.0, 240.0);
        let pose = Pose::new(Vector3::new(0.0, 0.0, 3.0), Vector3::zeros());
        let jb = jacobian_blocks(&theta, &pose, &Vector3::zeros()).unwrap();
        assert_eq!(jb.a[(0, 0)], 0.0);
        assert_eq!(jb.a[(0, 1)], 1.0);
    }

    #[test]
    fn translation_block_is_ds() {
        let theta = IntrinsicParams::with_k1k2(700.0, 300.0, 250.0, 0.2, -0.1);
        let pose = Pose::new(Vector3::new(0.3, -0.2, 5.0), Vector3::new(0.2, 0.3, -0.4));
        let q = Vector3::new(1.0, 2.0, 0.0);
        let jb = jacobian_blocks(&theta, &pose, &q).unwrap();
        let lp = theta.project_local_with_derivatives(&pose.transform(&q)).unwrap();
        assert_eq!(jb.b.fixed_view::<2, 3>(0, 0).into_owned(), lp.d_s);
    }

    #[test]
    fn fronto_parallel_grid_is_axis_aligned() {
        let theta = IntrinsicParams::pinhole(800.0, 320.0, 240.0);
        let target = TargetSpec::default();
        let pose = Pose::new(Vector3::new(0.0, 0.0, 12.0), Vector3::zeros());
        let pts = project_target(&theta, &pose, &target).unwrap();
        let scale = 800.0 / 12.0;
        for (j, p) in pts.iter().enumerate() {
            let q = target.point(j);
            assert_relative_eq!(p.x, 320.0 + scale * q.x, epsilon = 1e-9);
            assert_relative_eq!(p.y, 240.0 + scale * q.y, epsilon = 1e-9);
        }
    }

    #[test]
    fn normalize_pixel_round_trip() {
        let theta = IntrinsicParams::with_k1k2(800.0, 320.0, 240.0, 0.5, 1.0);
        for &(x, y) in &[(0.0, 0.0), (639.0, 479.0), (320.0, 240.0), (100.0, 400.0)] {
            let n = theta.normalize_pixel(&Vector2::new(x, y)).unwrap();
            let back = theta.project_local(&Vector3::new(n.x, n.y, 1.0)).unwrap();
            assert_relative_eq!(back, Vector2::new(x, y), epsilon = 1e-9);
        }
    }

    #[test]
    fn normalize_pixel_fails_outside_invertible_region() {
        let theta = IntrinsicParams::with_k1(800.0, 320.0, 240.0, -0.5);
        // rho (1 - 0.5 rho^2) peaks at rho_d ~ 0.544, i.e. ~435 px from centre.
        assert!(theta.normalize_pixel(&Vector2::new(320.0 + 600.0, 240.0)).is_err());
        assert!(theta.normalize_pixel(&Vector2::new(320.0 + 200.0, 240.0)).is_ok());
    }

    #[test]
    fn target_geometry() {
        let t = TargetSpec::default();
        assert_eq!(t.points().len(), 54);
        assert!(t.points().iter().all(|p| p.z == 0.0));
        assert!(TargetSpec::new(0, 9, 1.0).is_err());
        assert_relative_eq!(t.diagonal(), (64.0f64 + 25.0).sqrt());
    }

    #[test]
    fn intrinsic_validation() {
        assert!(IntrinsicParams::pinhole(-1.0, 0.0, 0.0).validate().is_err());
        let mut p = IntrinsicParams::pinhole(800.0, 0.0, 0.0);
        p.k1 = 0.1;
        assert!(p.validate().is_err());
        let v = IntrinsicParams::with_k1k2(800.0, 1.0, 2.0, 0.1, 0.2).to_vec();
        assert_eq!(v, vec![800.0, 1.0, 2.0, 0.1, 0.2]);
    }
}
