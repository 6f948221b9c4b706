use std::sync::atomic::AtomicBool;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use calibwiz_core::geometry::{IntrinsicParams, TargetSpec};
use calibwiz_core::planner::PlannerConfig;
use calibwiz_core::synth::{random_pose, synthesize_image};
use calibwiz_service::{ApiError, Mode, Session, SessionConfig};

const SIZE: [u32; 2] = [640, 480];

fn truth() -> IntrinsicParams {
    IntrinsicParams::with_k1k2(800.0, 320.0, 240.0, 0.01, 0.1)
}

fn virtual_session(seed: u64, noise: f64, budget: usize) -> Session {
    let config = SessionConfig {
        mode: Mode::Virtual,
        ground_truth: Some(truth()),
        noise_sigma: noise,
        seed,
        planner: PlannerConfig { budget, seed, border_margin: 5.0, ..Default::default() },
        ..Default::default()
    };
    Session::new(format!("s{seed}"), config).unwrap()
}

fn seed_random(s: &mut Session, seed: u64, n: usize, noise: f64) {
    let target = TargetSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let pose = random_pose(&truth(), &target, SIZE, &mut rng).unwrap();
        let im = synthesize_image(&truth(), &pose, &target, SIZE, noise, &mut rng).unwrap();
        s.submit(im).unwrap();
    }
}

fn guided_step(s: &mut Session) -> Result<(), ApiError> {
    let (job, cancel) = s.planning_job(false)?;
    let result = job.run(None, &cancel)?;
    s.finish_planning(&job, result)?;
    let pose = s.suggestion_pose().unwrap();
    let cap = s.virtual_capture(&pose)?;
    assert!(cap.proximity.unwrap().within_threshold);
    s.submit(cap.image).map(|_| ())
}

#[test]
fn guided_history_is_mostly_non_increasing() {
    let (mut steps, mut increases) = (0, 0);
    for seed in 0..20 {
        let mut s = virtual_session(seed, 0.5, 800);
        seed_random(&mut s, 100 + seed, 3, 0.5);
        for _ in 0..4 {
            guided_step(&mut s).unwrap();
        }
        for w in s.history.windows(2) {
            steps += 1;
            if w[1] > w[0] {
                increases += 1;
            }
        }
    }
    assert_eq!(steps, 80);
    assert!(increases as f64 <= 0.05 * steps as f64, "{increases} of {steps} steps increased");
}

#[test]
fn stale_planner_result_is_superseded() {
    let mut s = virtual_session(1, 0.0, 300);
    seed_random(&mut s, 1, 4, 0.0);
    let (job, cancel) = s.planning_job(false).unwrap();
    let extra = s.obs.images[0].clone();
    s.submit(extra).unwrap();
    assert!(cancel.load(std::sync::atomic::Ordering::Relaxed));
    let fresh = AtomicBool::new(false);
    let result = job.run(None, &fresh).unwrap();
    assert_eq!(s.finish_planning(&job, result), Err(ApiError::Superseded));
    assert!(s.cached_suggestion(false).is_none());
    assert_eq!(job.run(None, &cancel).unwrap_err(), ApiError::Superseded);
}

#[test]
fn virtual_noise_is_seeded() {
    let capture = |seed| {
        let mut s = virtual_session(seed, 0.5, 300);
        seed_random(&mut s, 9, 3, 0.0);
        let pose = s.state.as_ref().unwrap().poses[0];
        s.virtual_capture(&pose).unwrap().image
    };
    assert_eq!(capture(3), capture(3));
    assert_ne!(capture(3), capture(4));
}
