//! Shared synthetic scene helpers for integration tests.
#![allow(dead_code)]

use calibwiz_core::calibration::{Corner, ImageObservations, ObservationSet};
use calibwiz_core::geometry::{project_target, IntrinsicParams, Pose, TargetSpec};
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const SIZE: [u32; 2] = [640, 480];

pub fn truth_k1k2() -> IntrinsicParams {
    IntrinsicParams::with_k1k2(800.0, 320.0, 240.0, 0.01, 0.1)
}

/// Tilted view with the whole target inside the image.
pub fn random_view<R: Rng>(rng: &mut R, theta: &IntrinsicParams, target: &TargetSpec) -> Pose {
    loop {
        let pose = Pose::new(
            Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5), rng.random_range(14.0..26.0)),
            Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.4..0.4)),
        );
        if let Ok(pts) = project_target(theta, &pose, target) {
            if pts.iter().all(|p| p.x >= 0.0 && p.y >= 0.0 && p.x < SIZE[0] as f64 && p.y < SIZE[1] as f64) {
                return pose;
            }
        }
    }
}

pub fn observe<R: Rng>(
    rng: &mut R,
    theta: &IntrinsicParams,
    poses: &[Pose],
    target: &TargetSpec,
    sigma: f64,
) -> ObservationSet {
    let mut obs = ObservationSet::new(SIZE, *target);
    let noise = Normal::new(0.0, sigma.max(0.0)).unwrap();
    for pose in poses {
        let pts = project_target(theta, pose, target).unwrap();
        let corners = pts
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let (dx, dy) = if sigma > 0.0 { (noise.sample(rng), noise.sample(rng)) } else { (0.0, 0.0) };
                Corner::new(j, p.x + dx, p.y + dy)
            })
            .collect();
        obs.images.push(ImageObservations::new(corners));
    }
    obs
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
