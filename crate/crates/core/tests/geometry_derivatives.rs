//! Analytic projection derivatives against central finite differences of the
//! plain projection, and rotation properties.

use calibwiz_core::geometry::{
    jacobian_blocks, project, rotation_from_angles, IntrinsicParams, ModelKind, Pose,
};
use nalgebra::{Matrix3, Vector3, Vector6};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_case(rng: &mut ChaCha8Rng, model: ModelKind) -> (IntrinsicParams, Pose, Vector3<f64>) {
    let theta = IntrinsicParams {
        model,
        f: rng.random_range(400.0..1200.0),
        u: rng.random_range(250.0..390.0),
        v: rng.random_range(180.0..300.0),
        k1: if model.param_count() >= 4 { rng.random_range(-0.3..0.6) } else { 0.0 },
        k2: if model.param_count() >= 5 { rng.random_range(-0.3..1.0) } else { 0.0 },
    };
    let angles = Vector3::new(
        rng.random_range(-0.8..0.8),
        rng.random_range(-0.8..0.8),
        rng.random_range(-3.0..3.0),
    );
    let t = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(12.0..30.0));
    let q = Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-2.5..2.5), 0.0);
    (theta, Pose::new(t, angles), q)
}

/// Relative error with a unit floor, so entries that vanish analytically are
/// compared in absolute terms.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn check_case(theta: &IntrinsicParams, pose: &Pose, q: &Vector3<f64>) -> f64 {
    let jb = jacobian_blocks(theta, pose, q).unwrap();
    let k = theta.param_count();
    let mut worst: f64 = 0.0;

    let p = theta.to_vec();
    for c in 0..k {
        let h = 1e-6 * p[c].abs().max(1.0);
        let mut plus = p.clone();
        let mut minus = p.clone();
        plus[c] += h;
        minus[c] -= h;
        let fp = project(&IntrinsicParams::from_slice(theta.model, &plus), pose, q).unwrap();
        let fm = project(&IntrinsicParams::from_slice(theta.model, &minus), pose, q).unwrap();
        let num = (fp - fm) / (2.0 * h);
        for r in 0..2 {
            worst = worst.max(rel_err(jb.a[(r, c)], num[r]));
        }
    }

    let x = pose.to_vector();
    for c in 0..6 {
        let h = 1e-6 * x[c].abs().max(1.0);
        let mut plus = x;
        let mut minus = x;
        plus[c] += h;
        minus[c] -= h;
        let fp = project(theta, &Pose::from_vector(&plus), q).unwrap();
        let fm = project(theta, &Pose::from_vector(&minus), q).unwrap();
        let num = (fp - fm) / (2.0 * h);
        for r in 0..2 {
            worst = worst.max(rel_err(jb.b[(r, c)], num[r]));
        }
    }
    worst
}

#[test]
fn jacobians_match_central_differences_for_all_models() {
    for (seed, model) in [ModelKind::Pinhole3, ModelKind::PinholeK1, ModelKind::PinholeK1K2]
        .into_iter()
        .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed as u64);
        for _ in 0..100 {
            let (theta, pose, q) = random_case(&mut rng, model);
            let worst = check_case(&theta, &pose, &q);
            assert!(worst < 1e-6, "{model:?}: relative error {worst:e}");
        }
    }
}

fn axis_product(a: f64, b: f64, g: f64) -> Matrix3<f64> {
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, a.sin(), a.cos());
    let ry = Matrix3::new(b.cos(), 0.0, b.sin(), 0.0, 1.0, 0.0, -b.sin(), 0.0, b.cos());
    let rz = Matrix3::new(g.cos(), -g.sin(), 0.0, g.sin(), g.cos(), 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

proptest! {
    #[test]
    fn rotation_is_orthonormal_and_matches_axis_product(
        a in -3.14f64..3.14, b in -3.14f64..3.14, g in -3.14f64..3.14
    ) {
        let r = rotation_from_angles(&Vector3::new(a, b, g));
        prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        prop_assert!((r - axis_product(a, b, g)).amax() < 1e-14);
    }

    #[test]
    fn zero_distortion_matches_pinhole(
        x in -3.0f64..3.0, y in -2.0f64..2.0, z in 5.0f64..30.0,
        a in -0.7f64..0.7, b in -0.7f64..0.7, g in -3.0f64..3.0
    ) {
        let pose = Pose::new(Vector3::new(0.1, -0.2, z), Vector3::new(a, b, g));
        let q = Vector3::new(x, y, 0.0);
        let pin = project(&IntrinsicParams::pinhole(800.0, 320.0, 240.0), &pose, &q);
        let k2 = project(&IntrinsicParams::with_k1k2(800.0, 320.0, 240.0, 0.0, 0.0), &pose, &q);
        if let (Ok(p1), Ok(p2)) = (pin, k2) {
            prop_assert!((p1 - p2).amax() <= 1e-12 * p1.amax());
        }
    }

    #[test]
    fn pose_vector_round_trip(t in prop::array::uniform3(-10.0f64..10.0), ang in prop::array::uniform3(-3.1f64..3.1)) {
        let v = Vector6::new(t[0], t[1], t[2], ang[0], ang[1], ang[2]);
        let back = Pose::from_vector(&v).to_vector();
        prop_assert!((back - v).amax() < 1e-15);
    }
}
