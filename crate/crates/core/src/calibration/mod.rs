//! Bundle adjustment over intrinsics and poses, information assembly and
//! intrinsic covariance.

mod bundle;
mod information;
mod init;
mod observations;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bundle::{optimize_bundle, BundleConfig, BundleReport};
pub use information::{
    assemble_information, covariance_from_reduced, image_information, intrinsic_covariance,
    matrix_from_rows, rows_of, Covariance, ImageInformation, ImageInformationRecord,
    InformationMatrix,
};
pub use init::{estimate_homography, estimate_pose, initialize_calibration};
pub use observations::{validate_image, Corner, ImageObservations, ObservationSet};

use crate::geometry::{GeometryError, IntrinsicParams, Pose, TargetSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("point {point} of image {image} is behind the camera")]
    PointBehindCamera { image: usize, point: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("normal equations are singular")]
    SingularNormalEquations,
    #[error("no observations")]
    EmptyObservations,
    #[error("invalid observations: {0}")]
    InvalidObservations(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Estimated intrinsics and poses with their covariance summary.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationState {
    pub theta: IntrinsicParams,
    pub poses: Vec<Pose>,
    /// k x k intrinsic covariance.
    pub sigma: DMatrix<f64>,
    pub sigma_rank: usize,
    /// Reprojection RMS in pixels.
    pub rms: f64,
    /// Per-image `(U_i, V_i, W_i)` evaluated at this state.
    pub per_image_info: Vec<ImageInformation>,
    /// Whether `per_image_info` was built with corner weights.
    pub weighted: bool,
}

impl CalibrationState {
    /// Fills covariance, rank, RMS and information blocks for `theta` and `poses`.
    pub fn evaluate(
        theta: IntrinsicParams,
        poses: Vec<Pose>,
        obs: &ObservationSet,
        weighted: bool,
    ) -> Result<Self, CalibrationError> {
        let info = information::assemble_at(&theta, &poses, obs, weighted)?;
        let cov = intrinsic_covariance(&info);
        let rms = rms_at(&theta, &poses, obs)?;
        Ok(Self {
            theta,
            poses,
            sigma: cov.sigma,
            sigma_rank: cov.rank,
            rms,
            per_image_info: info.images,
            weighted,
        })
    }

    pub fn image_count(&self) -> usize {
        self.poses.len()
    }

    pub fn trace_sigma(&self) -> f64 {
        self.sigma.trace()
    }

    pub fn information(&self) -> InformationMatrix {
        InformationMatrix::from_images(self.theta.param_count(), self.per_image_info.clone())
    }
}

/// `sqrt(mean of squared residual components)` over all corners.
pub fn reprojection_rms(state: &CalibrationState, obs: &ObservationSet) -> Result<f64, CalibrationError> {
    rms_at(&state.theta, &state.poses, obs)
}

pub(crate) fn rms_at(
    theta: &IntrinsicParams,
    poses: &[Pose],
    obs: &ObservationSet,
) -> Result<f64, CalibrationError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (im, pose)) in obs.images.iter().zip(poses).enumerate() {
        let r = pose.rotation();
        for c in &im.corners {
            let p = theta
                .project_local(&(r * obs.target.point(c.j) + pose.t))
                .map_err(|_| CalibrationError::PointBehindCamera { image: i, point: c.j })?;
            sum += (c.x - p.x).powi(2) + (c.y - p.y).powi(2);
            count += 2;
        }
    }
    if count == 0 {
        return Err(CalibrationError::EmptyObservations);
    }
    Ok((sum / count as f64).sqrt())
}

/// On-disk calibration result. Matrices are nested row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub image_size: [u32; 2],
    pub target: TargetSpec,
    pub theta: IntrinsicParams,
    pub poses: Vec<Pose>,
    pub sigma: Vec<Vec<f64>>,
    pub sigma_rank: usize,
    pub rms: f64,
    pub weighted: bool,
    pub per_image_info: Vec<ImageInformationRecord>,
}

impl StateFile {
    pub fn new(state: &CalibrationState, obs: &ObservationSet) -> Self {
        Self {
            image_size: obs.image_size,
            target: obs.target,
            theta: state.theta,
            poses: state.poses.clone(),
            sigma: rows_of(&state.sigma),
            sigma_rank: state.sigma_rank,
            rms: state.rms,
            weighted: state.weighted,
            per_image_info: state
                .per_image_info
                .iter()
                .zip(&obs.images)
                .map(|(info, im)| {
                    ImageInformationRecord::new(info, im.corners.iter().map(|c| c.j).collect())
                })
                .collect(),
        }
    }

    pub fn to_state(&self) -> Result<CalibrationState, CalibrationError> {
        self.theta.validate()?;
        let k = self.theta.param_count();
        let sigma = matrix_from_rows(&self.sigma)?;
        if sigma.shape() != (k, k) {
            return Err(CalibrationError::InvalidObservations("sigma has wrong shape".into()));
        }
        if self.per_image_info.len() != self.poses.len() {
            return Err(CalibrationError::InvalidObservations(
                "one information block per pose expected".into(),
            ));
        }
        let per_image_info = self
            .per_image_info
            .iter()
            .map(|r| r.to_information(k))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CalibrationState {
            theta: self.theta,
            poses: self.poses.clone(),
            sigma,
            sigma_rank: self.sigma_rank,
            rms: self.rms,
            per_image_info,
            weighted: self.weighted,
        })
    }

    /// Target indices observed in each image.
    pub fn corner_indices(&self) -> Vec<Vec<usize>> {
        self.per_image_info.iter().map(|r| r.corner_indices.clone()).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CalibrationError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| CalibrationError::Io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| CalibrationError::InvalidObservations(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CalibrationError> {
        let text = serde_json::to_string_pretty(self).expect("state serializes");
        std::fs::write(path.as_ref(), text).map_err(|e| CalibrationError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn rms_of_single_residual() {
        let theta = IntrinsicParams::pinhole(800.0, 320.0, 240.0);
        let target = TargetSpec::default();
        let pose = Pose::new(Vector3::new(0.0, 0.0, 10.0), Vector3::zeros());
        let p = crate::geometry::project(&theta, &pose, &target.point(0)).unwrap();
        let mut obs = ObservationSet::new([640, 480], target);
        obs.images.push(ImageObservations::new(vec![Corner::new(0, p.x + 3.0, p.y + 4.0)]));
        let rms = rms_at(&theta, &[pose], &obs).unwrap();
        assert!((rms - (25.0f64 / 2.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn rms_of_empty_set() {
        let theta = IntrinsicParams::pinhole(800.0, 320.0, 240.0);
        let obs = ObservationSet::new([640, 480], TargetSpec::default());
        assert_eq!(rms_at(&theta, &[], &obs), Err(CalibrationError::EmptyObservations));
    }
}
