//! Linear initialization: per-image homographies, closed-form intrinsics for a
//! square-pixel zero-skew camera, and pose decomposition.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};

use super::{CalibrationError, CalibrationState, ImageObservations, ObservationSet};
use crate::geometry::{IntrinsicParams, ModelKind, Pose, TargetSpec};

/// Smallest relative singular value accepted for the third direction of the
/// intrinsic constraint system.
const DEGENERACY_THRESHOLD: f64 = 1e-6;
/// Rows come from unit-norm homographies; below this the system is empty.
const EMPTY_SYSTEM: f64 = 1e-9;

/// Hartley normalization: centroid to origin, mean distance sqrt(2).
fn normalizer(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn apply(h: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(q.x / q.z, q.y / q.z)
}

/// Right singular vector of the smallest singular value, plus all singular
/// values sorted descending.
fn null_vector(a: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    // Work on A^T A when A is tall; its eigenvectors are A's right singular vectors.
    let ata = a.transpose() * a;
    let eig = nalgebra::SymmetricEigen::new(ata);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let sv = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    let last = *order.last().expect("non-empty system");
    (eig.eigenvectors.column(last).iter().copied().collect(), sv)
}

/// Homography mapping target-plane coordinates to image points (normalized DLT).
pub fn estimate_homography(
    plane: &[Vector2<f64>],
    image: &[Vector2<f64>],
) -> Result<Matrix3<f64>, CalibrationError> {
    if plane.len() != image.len() || plane.len() < 4 {
        return Err(CalibrationError::InsufficientData(format!(
            "homography needs at least 4 correspondences, got {}",
            plane.len().min(image.len())
        )));
    }
    let tp = normalizer(plane);
    let ti = normalizer(image);
    let n = plane.len();
    let mut a = DMatrix::zeros(2 * n, 9);
    for (k, (p, q)) in plane.iter().zip(image).enumerate() {
        let p = apply(&tp, p);
        let q = apply(&ti, q);
        let (x, y) = (p.x, p.y);
        let (u, v) = (q.x, q.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(2 * k, c)] = r0[c];
            a[(2 * k + 1, c)] = r1[c];
        }
    }
    let (h, sv) = null_vector(&a);
    if sv[7] <= 1e-12 * sv[0] {
        return Err(CalibrationError::DegenerateConfiguration(
            "target points are collinear".into(),
        ));
    }
    let hn = Matrix3::from_row_slice(&h);
    let ti_inv = ti.try_inverse().expect("normalizer is invertible");
    let hm = ti_inv * hn * tp;
    Ok(hm / hm[(2, 2)])
}

fn plane_and_image_points(im: &ImageObservations, target: &TargetSpec) -> (Vec<Vector2<f64>>, Vec<Vector2<f64>>) {
    im.corners
        .iter()
        .map(|c| {
            let q = target.point(c.j);
            (Vector2::new(q.x, q.y), c.position())
        })
        .unzip()
}

/// `h_a^T B h_b` as a linear form in `b = (B11, B13, B23, B33)` with
/// `B = [[B11, 0, B13], [0, B11, B23], [B13, B23, B33]]`.
fn constraint_row(ha: &Vector3<f64>, hb: &Vector3<f64>) -> [f64; 4] {
    [
        ha.x * hb.x + ha.y * hb.y,
        ha.x * hb.z + ha.z * hb.x,
        ha.y * hb.z + ha.z * hb.y,
        ha.z * hb.z,
    ]
}

/// Pose from a homography between the target plane and normalized image
/// coordinates (`K^{-1} x`).
fn pose_from_normalized_homography(h: &Matrix3<f64>) -> Pose {
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let mut lambda = 2.0 / (h1.norm() + h2.norm());
    if (lambda * h3).z < 0.0 {
        lambda = -lambda;
    }
    let r1 = lambda * h1;
    let r2 = lambda * h2;
    let r3 = r1.cross(&r2);
    let t = lambda * h3;
    let approx = Matrix3::from_columns(&[r1, r2, r3]);
    let svd = approx.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    Pose::from_rotation(&r, t)
}

/// Pose of one image under known intrinsics (distortion removed first).
pub fn estimate_pose(
    theta: &IntrinsicParams,
    im: &ImageObservations,
    target: &TargetSpec,
) -> Result<Pose, CalibrationError> {
    let (plane, image) = plane_and_image_points(im, target);
    let normalized = image
        .iter()
        .map(|p| theta.normalize_pixel(p))
        .collect::<Result<Vec<_>, _>>()?;
    let h = estimate_homography(&plane, &normalized)?;
    Ok(pose_from_normalized_homography(&h))
}

/// Linear calibration from at least three views, distortion set to zero.
pub fn initialize_calibration(
    obs: &ObservationSet,
    model: ModelKind,
) -> Result<CalibrationState, CalibrationError> {
    obs.validate()?;
    if obs.images.len() < 3 {
        return Err(CalibrationError::InsufficientData(format!(
            "at least 3 images required, got {}",
            obs.images.len()
        )));
    }
    // Condition pixel coordinates around the image centre.
    let (w, h) = (obs.image_size[0] as f64, obs.image_size[1] as f64);
    let scale = 0.5 * (w + h);
    let (cx, cy) = (0.5 * w, 0.5 * h);
    let n = Matrix3::new(1.0 / scale, 0.0, -cx / scale, 0.0, 1.0 / scale, -cy / scale, 0.0, 0.0, 1.0);

    let mut homographies = Vec::with_capacity(obs.images.len());
    for (i, im) in obs.images.iter().enumerate() {
        let (plane, image) = plane_and_image_points(im, &obs.target);
        let hm = estimate_homography(&plane, &image).map_err(|e| match e {
            CalibrationError::InsufficientData(m) => {
                CalibrationError::InsufficientData(format!("image {i}: {m}"))
            }
            other => other,
        })?;
        let hn = n * hm;
        homographies.push(hn / hn.norm());
    }

    let mut a = DMatrix::zeros(2 * homographies.len(), 4);
    for (i, hm) in homographies.iter().enumerate() {
        let h1 = hm.column(0).into_owned();
        let h2 = hm.column(1).into_owned();
        let r12 = constraint_row(&h1, &h2);
        let r11 = constraint_row(&h1, &h1);
        let r22 = constraint_row(&h2, &h2);
        for c in 0..4 {
            a[(2 * i, c)] = r12[c];
            a[(2 * i + 1, c)] = r11[c] - r22[c];
        }
    }
    let (b, sv) = null_vector(&a);
    if sv[0] < EMPTY_SYSTEM || sv[2] < DEGENERACY_THRESHOLD * sv[0] {
        return Err(CalibrationError::DegenerateConfiguration(
            "views do not constrain the intrinsics (for example all fronto-parallel); tilt the target in some views".into(),
        ));
    }
    let (b11, b13, b23, b33) = (b[0], b[1], b[2], b[3]);
    let (mut un, mut vn) = (-b13 / b11, -b23 / b11);
    let lambda = b33 - (b13 * b13 + b23 * b23) / b11;
    let mut f2 = lambda / b11;
    let outside = (un * scale).abs() > cx || (vn * scale).abs() > cy;
    if !(f2.is_finite() && f2 > 0.0) || outside {
        // Strong distortion or weak tilt can push the full solution off;
        // retry with the principal point at the image centre.
        let centred = a.select_columns(&[0, 3]);
        let (b, _) = null_vector(&centred);
        log::debug!("principal point fixed at the image centre for the linear estimate");
        (un, vn, f2) = (0.0, 0.0, b[1] / b[0]);
    }
    if !(f2.is_finite() && f2 > 0.0) {
        return Err(CalibrationError::DegenerateConfiguration(
            "linear intrinsic estimate has no real focal length".into(),
        ));
    }
    let fnorm = f2.sqrt();
    let theta = IntrinsicParams {
        model,
        f: fnorm * scale,
        u: un * scale + cx,
        v: vn * scale + cy,
        k1: 0.0,
        k2: 0.0,
    };

    let poses = obs
        .images
        .iter()
        .map(|im| estimate_pose(&theta, im, &obs.target))
        .collect::<Result<Vec<_>, _>>()?;
    CalibrationState::evaluate(theta, poses, obs, false)
}
