//! Calibration guidance engine: planar-target bundle adjustment, intrinsic
//! covariance from the Schur complement of the information matrix, and a
//! global search for the next acquisition pose that minimizes the expected
//! intrinsic uncertainty.

pub mod calibration;
pub mod corner;
pub mod geometry;
pub mod linalg;
pub mod planner;
pub mod synth;
pub mod umap;
