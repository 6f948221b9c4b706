//! Block-sparse information matrix `H = J^T C J` and the intrinsic covariance
//! obtained from its Schur complement.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use super::{CalibrationError, CalibrationState, ObservationSet};
use crate::geometry::{IntrinsicParams, JacobianBlocks, Pose, PoseFrame, TargetSpec};
use crate::linalg::{pinv_symmetric, pinv_symmetric6};

/// Per-image blocks `U_i = sum A^T C A`, `V_i = sum B^T C B`, `W_i = sum A^T C B`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageInformation {
    pub u: DMatrix<f64>,
    pub v: Matrix6<f64>,
    pub w: DMatrix<f64>,
}

impl ImageInformation {
    pub fn zeros(k: usize) -> Self {
        Self { u: DMatrix::zeros(k, k), v: Matrix6::zeros(), w: DMatrix::zeros(k, 6) }
    }

    /// Adds one point's contribution with weight `c`.
    pub fn accumulate(&mut self, jb: &JacobianBlocks, c: &Matrix2<f64>) {
        let k = self.u.nrows();
        // C A (2 x k) and C B (2 x 6)
        let ca = c * &jb.a;
        let cb = c * jb.b;
        for r in 0..k {
            let a0 = jb.a[(0, r)];
            let a1 = jb.a[(1, r)];
            for s in r..k {
                let val = a0 * ca[(0, s)] + a1 * ca[(1, s)];
                self.u[(r, s)] += val;
                if s != r {
                    self.u[(s, r)] += val;
                }
            }
            for s in 0..6 {
                self.w[(r, s)] += a0 * cb[(0, s)] + a1 * cb[(1, s)];
            }
        }
        self.v += jb.b.transpose() * cb;
    }

    /// `U_i - W_i V_i^+ W_i^T`; the flag is false when `V_i` was singular.
    pub fn schur_term(&self) -> (DMatrix<f64>, bool) {
        let (v_inv, full) = pinv_symmetric6(&self.v);
        let k = self.u.nrows();
        let v_inv = DMatrix::from_iterator(6, 6, v_inv.iter().copied());
        let mut term = &self.u - &self.w * v_inv * self.w.transpose();
        // enforce exact symmetry
        for r in 0..k {
            for s in (r + 1)..k {
                let m = 0.5 * (term[(r, s)] + term[(s, r)]);
                term[(r, s)] = m;
                term[(s, r)] = m;
            }
        }
        (term, full)
    }
}

/// Information of one image at `(theta, pose)` over the given corners.
pub fn image_information<I>(
    theta: &IntrinsicParams,
    pose: &Pose,
    target: &TargetSpec,
    corners: I,
) -> Result<ImageInformation, (usize, CalibrationError)>
where
    I: IntoIterator<Item = (usize, Matrix2<f64>)>,
{
    let frame = PoseFrame::new(pose);
    let mut info = ImageInformation::zeros(theta.param_count());
    for (j, c) in corners {
        let jb = frame
            .jacobian_blocks(theta, &target.point(j))
            .map_err(|e| (j, CalibrationError::from(e)))?;
        info.accumulate(&jb, &c);
    }
    Ok(info)
}

/// Block representation of `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationMatrix {
    /// `U = sum_i U_i`.
    pub u: DMatrix<f64>,
    pub images: Vec<ImageInformation>,
}

impl InformationMatrix {
    pub fn from_images(k: usize, images: Vec<ImageInformation>) -> Self {
        let mut u = DMatrix::zeros(k, k);
        for im in &images {
            u += &im.u;
        }
        Self { u, images }
    }

    pub fn param_count(&self) -> usize {
        self.u.nrows()
    }

    /// Dense `(k + 6m) x (k + 6m)` matrix with intrinsics first.
    pub fn dense(&self) -> DMatrix<f64> {
        let k = self.param_count();
        let m = self.images.len();
        let n = k + 6 * m;
        let mut h = DMatrix::zeros(n, n);
        h.view_mut((0, 0), (k, k)).copy_from(&self.u);
        for (i, im) in self.images.iter().enumerate() {
            let o = k + 6 * i;
            h.view_mut((0, o), (k, 6)).copy_from(&im.w);
            h.view_mut((o, 0), (6, k)).copy_from(&im.w.transpose());
            h.view_mut((o, o), (6, 6)).copy_from(&im.v);
        }
        h
    }

    /// `sum_i (U_i - W_i V_i^+ W_i^T)`.
    pub fn reduced(&self) -> DMatrix<f64> {
        let k = self.param_count();
        let mut a = DMatrix::zeros(k, k);
        for (i, im) in self.images.iter().enumerate() {
            let (term, full) = im.schur_term();
            if !full {
                log::warn!("pose block of image {i} is singular; using its pseudo-inverse");
            }
            a += term;
        }
        a
    }
}

/// Intrinsic covariance and the numerical rank of the reduced information.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub sigma: DMatrix<f64>,
    pub rank: usize,
}

impl Covariance {
    pub fn trace(&self) -> f64 {
        self.sigma.trace()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.sigma.nrows()
    }
}

/// `Sigma = (U - sum_i W_i V_i^+ W_i^T)^+`.
pub fn intrinsic_covariance(info: &InformationMatrix) -> Covariance {
    covariance_from_reduced(&info.reduced())
}

pub fn covariance_from_reduced(reduced: &DMatrix<f64>) -> Covariance {
    let (sigma, rank) = pinv_symmetric(reduced);
    Covariance { sigma, rank }
}

/// Assemble per-image information at `state`; with `weighted = false` every
/// corner weight is the identity.
pub fn assemble_information(
    state: &CalibrationState,
    obs: &ObservationSet,
    weighted: bool,
) -> Result<InformationMatrix, CalibrationError> {
    assemble_at(&state.theta, &state.poses, obs, weighted)
}

pub(crate) fn assemble_at(
    theta: &IntrinsicParams,
    poses: &[Pose],
    obs: &ObservationSet,
    weighted: bool,
) -> Result<InformationMatrix, CalibrationError> {
    if poses.len() != obs.images.len() {
        return Err(CalibrationError::InvalidObservations(format!(
            "{} poses for {} images",
            poses.len(),
            obs.images.len()
        )));
    }
    let images = obs
        .images
        .iter()
        .zip(poses)
        .enumerate()
        .map(|(i, (im, pose))| {
            let corners = im.corners.iter().map(|c| {
                let w = if weighted { c.weight() } else { Matrix2::identity() };
                (c.j, w)
            });
            image_information(theta, pose, &obs.target, corners).map_err(|(j, e)| match e {
                CalibrationError::Geometry(_) => CalibrationError::PointBehindCamera { image: i, point: j },
                other => other,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(InformationMatrix::from_images(theta.param_count(), images))
}

/// Serializable form of per-image blocks (row-major nested arrays), together
/// with the target indices they were built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInformationRecord {
    pub corner_indices: Vec<usize>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CalibrationError> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(CalibrationError::InvalidObservations("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |r, c| rows[r][c]))
}

impl ImageInformationRecord {
    pub fn new(info: &ImageInformation, corner_indices: Vec<usize>) -> Self {
        let v = DMatrix::from_iterator(6, 6, info.v.iter().copied());
        Self { corner_indices, u: rows_of(&info.u), v: rows_of(&v), w: rows_of(&info.w) }
    }

    pub fn to_information(&self, k: usize) -> Result<ImageInformation, CalibrationError> {
        let u = matrix_from_rows(&self.u)?;
        let v = matrix_from_rows(&self.v)?;
        let w = matrix_from_rows(&self.w)?;
        if u.shape() != (k, k) || v.shape() != (6, 6) || w.shape() != (k, 6) {
            return Err(CalibrationError::InvalidObservations(
                "information block has wrong shape".into(),
            ));
        }
        Ok(ImageInformation { u, v: Matrix6::from_iterator(v.iter().copied()), w })
    }
}

/// Gradient pieces `A_i^T C r` and `B_i^T C r` used by the solver.
#[derive(Debug, Clone)]
pub(crate) struct ImageGradient {
    pub g_theta: DVector<f64>,
    pub g_pose: Vector6<f64>,
}
