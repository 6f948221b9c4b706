//! Per-pixel propagation of the intrinsic covariance and rendered uncertainty
//! rasters.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, IntrinsicParams};

pub const SIDECAR_MAGIC: &[u8; 4] = b"UMAP";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UmapError {
    #[error("undistortion diverges at ({x}, {y})")]
    UndistortDivergence { x: f64, y: f64 },
    #[error("covariance is {rows}x{cols}, expected {k}x{k}")]
    SigmaShape { rows: usize, cols: usize, k: usize },
    #[error("image size must be positive")]
    InvalidSize,
    #[error("malformed sidecar: {0}")]
    Sidecar(String),
    #[error(transparent)]
    Geometry(GeometryError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<GeometryError> for UmapError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::UndistortDivergence { x, y } => UmapError::UndistortDivergence { x, y },
            other => UmapError::Geometry(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatKind {
    #[default]
    Trace,
    MaxEigenvalue,
    Determinant,
}

impl StatKind {
    pub fn code(self) -> u32 {
        match self {
            StatKind::Trace => 0,
            StatKind::MaxEigenvalue => 1,
            StatKind::Determinant => 2,
        }
    }

    pub fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(StatKind::Trace),
            1 => Some(StatKind::MaxEigenvalue),
            2 => Some(StatKind::Determinant),
            _ => None,
        }
    }

    pub fn apply(self, g: &Matrix2<f64>) -> f64 {
        match self {
            StatKind::Trace => g.trace(),
            StatKind::MaxEigenvalue => SymmetricEigen::new(*g).eigenvalues.max().max(0.0),
            StatKind::Determinant => g.determinant().max(0.0),
        }
    }
}

impl FromStr for StatKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "trace" => Ok(StatKind::Trace),
            "max-eigenvalue" | "maxeig" => Ok(StatKind::MaxEigenvalue),
            "determinant" | "det" => Ok(StatKind::Determinant),
            _ => Err(format!("unknown statistic {s:?} (trace, max-eigenvalue, determinant)")),
        }
    }
}

/// Camera-frame point at depth `f` that projects to pixel `(x, y)`.
pub fn backproject(x: f64, y: f64, theta: &IntrinsicParams) -> Result<Vector3<f64>, UmapError> {
    let n = theta.normalize_pixel(&Vector2::new(x, y))?;
    Ok(Vector3::new(n.x * theta.f, n.y * theta.f, theta.f))
}

fn check_sigma(theta: &IntrinsicParams, sigma: &DMatrix<f64>) -> Result<(), UmapError> {
    let k = theta.param_count();
    if sigma.shape() != (k, k) {
        return Err(UmapError::SigmaShape { rows: sigma.nrows(), cols: sigma.ncols(), k });
    }
    Ok(())
}

/// `Gamma = D Sigma D^T` with `D` the intrinsic derivative of the projection
/// at the back-projected point.
pub fn pointwise_covariance(
    x: f64,
    y: f64,
    theta: &IntrinsicParams,
    sigma: &DMatrix<f64>,
) -> Result<Matrix2<f64>, UmapError> {
    check_sigma(theta, sigma)?;
    let s = backproject(x, y, theta)?;
    let d = theta.project_local_with_derivatives(&s)?.d_theta;
    let g = &d * sigma * d.transpose();
    let g = Matrix2::new(g[(0, 0)], g[(0, 1)], g[(1, 0)], g[(1, 1)]);
    Ok((g + g.transpose()) * 0.5)
}

/// Row-major raster; `NaN` marks pixels outside the invertible distortion region.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub width: u32,
    pub height: u32,
    pub stat: StatKind,
    pub values: Vec<f64>,
}

/// Evaluates the statistic at every pixel centre `(x, y)`, integer coordinates.
pub fn render_map(
    theta: &IntrinsicParams,
    sigma: &DMatrix<f64>,
    image_size: [u32; 2],
    stat: StatKind,
) -> Result<UncertaintyMap, UmapError> {
    let [w, h] = image_size;
    if w == 0 || h == 0 {
        return Err(UmapError::InvalidSize);
    }
    check_sigma(theta, sigma)?;
    let mut values = Vec::with_capacity(w as usize * h as usize);
    for y in 0..h {
        for x in 0..w {
            let v = match pointwise_covariance(x as f64, y as f64, theta, sigma) {
                Ok(g) => stat.apply(&g),
                Err(UmapError::UndistortDivergence { .. }) => f64::NAN,
                Err(e) => return Err(e),
            };
            values.push(v);
        }
    }
    Ok(UncertaintyMap { width: w, height: h, stat, values })
}

/// `a x^2 + b y^2 + c xy + d x + e y + g` fitted by least squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticFit {
    pub coeffs: [f64; 6],
    /// `|residual| / |values|` over valid pixels.
    pub relative_residual: f64,
}

impl QuadraticFit {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let [a, b, c, d, e, g] = self.coeffs;
        a * x * x + b * y * y + c * x * y + d * x + e * y + g
    }

    /// Stationary point of the surface; `None` when the Hessian is singular.
    pub fn stationary_point(&self) -> Option<(f64, f64)> {
        let [a, b, c, d, e, _] = self.coeffs;
        let hess = Matrix2::new(2.0 * a, c, c, 2.0 * b);
        let p = hess.try_inverse()? * Vector2::new(-d, -e);
        Some((p.x, p.y))
    }
}

impl UncertaintyMap {
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[(y * self.width + x) as usize]
    }

    fn valid(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.values.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, &v)| {
            let i = i as u32;
            (i % self.width, i / self.width, v)
        })
    }

    pub fn valid_count(&self) -> usize {
        self.valid().count()
    }

    /// Smallest valid value and its pixel.
    pub fn argmin(&self) -> Option<(u32, u32, f64)> {
        self.valid().min_by(|a, b| a.2.total_cmp(&b.2))
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        self.valid().fold(None, |acc, (_, _, v)| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    pub fn fit_quadratic(&self) -> Option<QuadraticFit> {
        // Fit in centred, scaled coordinates for conditioning.
        let (cx, cy) = (self.width as f64 / 2.0, self.height as f64 / 2.0);
        let s = cx.max(cy).max(1.0);
        let basis = |x: f64, y: f64| {
            let (u, v) = ((x - cx) / s, (y - cy) / s);
            Vector6::new(u * u, v * v, u * v, u, v, 1.0)
        };
        let mut ata = nalgebra::Matrix6::<f64>::zeros();
        let mut atb = Vector6::<f64>::zeros();
        let mut norm2 = 0.0;
        for (x, y, v) in self.valid() {
            let phi = basis(x as f64, y as f64);
            ata += phi * phi.transpose();
            atb += phi * v;
            norm2 += v * v;
        }
        let beta = ata.cholesky()?.solve(&atb);
        let mut resid2 = 0.0;
        for (x, y, v) in self.valid() {
            resid2 += (basis(x as f64, y as f64).dot(&beta) - v).powi(2);
        }
        // back to pixel coordinates
        let (a, b, c, d, e, g) = (beta[0], beta[1], beta[2], beta[3], beta[4], beta[5]);
        let (a, b, c) = (a / (s * s), b / (s * s), c / (s * s));
        let (d, e) = (d / s, e / s);
        let coeffs = [
            a,
            b,
            c,
            d - 2.0 * a * cx - c * cy,
            e - 2.0 * b * cy - c * cx,
            g - d * cx - e * cy + a * cx * cx + b * cy * cy + c * cx * cy,
        ];
        let relative_residual = if norm2 > 0.0 { (resid2 / norm2).sqrt() } else { 0.0 };
        Some(QuadraticFit { coeffs, relative_residual })
    }

    /// 8-bit ASCII PGM, min-max normalized over valid pixels; invalid pixels are 0.
    pub fn to_pgm(&self) -> String {
        let (lo, hi) = self.min_max().unwrap_or((0.0, 0.0));
        let span = hi - lo;
        let mut out = format!("P2\n{} {}\n255\n", self.width, self.height);
        for row in self.values.chunks(self.width as usize) {
            for (i, v) in row.iter().enumerate() {
                let g = if !v.is_finite() {
                    0
                } else if span > 0.0 {
                    (255.0 * (v - lo) / span).round() as u8
                } else {
                    0
                };
                // keep lines under 70 characters
                let sep = if i + 1 == row.len() { "\n" } else if i % 16 == 15 { "\n" } else { " " };
                let _ = write!(out, "{g}{sep}");
            }
        }
        out
    }

    /// Raw sidecar: magic, u32 width, height, stat code, then f32 values, all
    /// little-endian.
    pub fn to_sidecar(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.values.len());
        out.extend_from_slice(SIDECAR_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.stat.code().to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_sidecar(bytes: &[u8]) -> Result<Self, UmapError> {
        if bytes.len() < 16 || &bytes[..4] != SIDECAR_MAGIC {
            return Err(UmapError::Sidecar("missing header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let (width, height) = (word(4), word(8));
        let stat = StatKind::from_code(word(12)).ok_or_else(|| UmapError::Sidecar("unknown statistic".into()))?;
        let n = width as usize * height as usize;
        if bytes.len() != 16 + 4 * n {
            return Err(UmapError::Sidecar(format!("expected {} value bytes, got {}", 4 * n, bytes.len() - 16)));
        }
        let values = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Ok(Self { width, height, stat, values })
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<(), UmapError> {
        std::fs::write(path, self.to_pgm()).map_err(|e| UmapError::Io(e.to_string()))
    }

    pub fn write_sidecar(&self, path: impl AsRef<Path>) -> Result<(), UmapError> {
        std::fs::write(path, self.to_sidecar()).map_err(|e| UmapError::Io(e.to_string()))
    }
}

/// Location and value of the smallest trace for a focal/principal-point
/// covariance, from its closed form.
pub fn pinhole_trace_minimum(theta: &IntrinsicParams, sigma: &DMatrix<f64>) -> Option<(f64, f64, f64)> {
    let s11 = sigma[(0, 0)];
    if s11 <= 0.0 {
        return None;
    }
    let (s12, s13) = (sigma[(0, 1)], sigma[(0, 2)]);
    let x = theta.u - theta.f * s12 / s11;
    let y = theta.v - theta.f * s13 / s11;
    let value = sigma[(1, 1)] + sigma[(2, 2)] - (s12 * s12 + s13 * s13) / s11;
    Some((x, y, value))
}
