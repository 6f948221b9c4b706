use calibwiz_core::geometry::{project, IntrinsicParams, Pose, TargetSpec};
use calibwiz_core::synth::{
    generate_observations, interpolate_path, path_feasibility, random_pose, run_experiment, summarize,
    ExperimentConfig, HarnessError, PoseSampler, Scheme, TrialRow, TrialTable,
};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SIZE: [u32; 2] = [640, 480];

fn truth() -> IntrinsicParams {
    IntrinsicParams::with_k1k2(800.0, 320.0, 240.0, 0.01, 0.1)
}

#[test]
fn random_poses_show_every_corner() {
    let target = TargetSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let pose = random_pose(&truth(), &target, SIZE, &mut rng).unwrap();
        for j in 0..target.len() {
            let p = project(&truth(), &pose, &target.point(j)).unwrap();
            assert!(p.x >= 0.0 && p.x < 640.0 && p.y >= 0.0 && p.y < 480.0);
        }
    }
}

#[test]
fn untilted_pose_aims_at_target_centre() {
    let theta = IntrinsicParams::pinhole(800.0, 320.0, 240.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sampler = PoseSampler { max_tilt_deg: 0.0, ..Default::default() };
    for _ in 0..50 {
        let pose = sampler.draw(&TargetSpec::default(), &mut rng);
        let c = project(&theta, &pose, &Vector3::zeros()).unwrap();
        assert!((c.x - 320.0).abs() < 1.0 && (c.y - 240.0).abs() < 1.0, "{c:?}");
    }
}

#[test]
fn exhausted_sampling_is_reported() {
    // a camera far too close never sees the whole target
    let sampler = PoseSampler { depth: (0.01, 0.02), max_attempts: 20, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = sampler.sample(&truth(), &TargetSpec::default(), SIZE, &mut rng).unwrap_err();
    assert!(matches!(err, HarnessError::SamplingExhausted { attempts: 20 }));
}

#[test]
fn pose_sequence_is_deterministic() {
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..5).map(|_| random_pose(&truth(), &TargetSpec::default(), SIZE, &mut rng).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(draw(11), draw(11));
    assert_ne!(draw(11), draw(12));
}

#[test]
fn noise_free_observations_match_projection() {
    let target = TargetSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let poses: Vec<_> = (0..3).map(|_| random_pose(&truth(), &target, SIZE, &mut rng).unwrap()).collect();
    let obs = generate_observations(&truth(), &poses, &target, SIZE, 0.0, &mut rng).unwrap();
    for (im, pose) in obs.images.iter().zip(&poses) {
        assert_eq!(im.corners.len(), 54);
        for c in &im.corners {
            let p = project(&truth(), pose, &target.point(c.j)).unwrap();
            assert_eq!((c.x, c.y), (p.x, p.y));
        }
    }
}

#[test]
fn unit_noise_has_unit_std() {
    let target = TargetSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let poses: Vec<_> = (0..100).map(|_| random_pose(&truth(), &target, SIZE, &mut rng).unwrap()).collect();
    let obs = generate_observations(&truth(), &poses, &target, SIZE, 1.0, &mut rng).unwrap();
    let mut residuals = Vec::new();
    for (im, pose) in obs.images.iter().zip(&poses) {
        for c in &im.corners {
            let p = project(&truth(), pose, &target.point(c.j)).unwrap();
            residuals.push(c.x - p.x);
            residuals.push(c.y - p.y);
        }
    }
    assert!(residuals.len() >= 10_000);
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let std = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((0.97..=1.03).contains(&std), "std {std}");
}

#[test]
fn path_endpoints_and_midpoint() {
    let a = Pose::from_degrees([1.0, -2.0, 12.0], [170.0, 10.0, -20.0]);
    let b = Pose::from_degrees([-3.0, 0.5, 20.0], [-170.0, -10.0, 40.0]);
    let two = interpolate_path(&a, &b, 2);
    assert_eq!(two, vec![a, b]);
    let path = interpolate_path(&a, &b, 25);
    assert_eq!(path.len(), 25);
    assert_eq!(path[0], a);
    assert_eq!(path[24], b);
    assert_eq!(path[12].t, (a.t + b.t) / 2.0);
    // shorter arc through 180 degrees
    assert!((path[12].angles_deg()[0].abs() - 180.0).abs() < 1e-9);
}

#[test]
fn path_feasibility_flags_frames_leaving_the_image() {
    let target = TargetSpec::default();
    let a = Pose::from_degrees([-8.0, 0.0, 20.0], [0.0, 0.0, 0.0]);
    let b = Pose::from_degrees([8.0, 0.0, 20.0], [0.0, 0.0, 0.0]);
    let flags = path_feasibility(&truth(), &interpolate_path(&a, &b, 25), &target, SIZE);
    // the target slides across the image and leaves it at both ends
    assert!(flags[12]);
    assert!(!flags[0] && !flags[24]);
    let ok = path_feasibility(&truth(), &interpolate_path(&a, &a, 25), &target, SIZE);
    assert!(ok.iter().all(|f| *f == flags[0]));
}

fn row(trial: usize, f: f64) -> TrialRow {
    TrialRow {
        trial,
        scheme: Scheme::Random,
        image_count: 3,
        f,
        u: 320.0,
        v: 240.0,
        k1: 0.01,
        k2: 0.1,
        trace_sigma: 1.0,
        rms: 0.5,
    }
}

#[test]
fn summary_of_single_trial_has_zero_std() {
    let table = TrialTable { rows: vec![row(0, 790.0)], failures: vec![] };
    let s = summarize(&table, &truth()).unwrap();
    assert_eq!(s.len(), 5);
    let f = &s[0];
    assert_eq!(f.parameter, "f");
    assert_eq!(f.value.std, 0.0);
    assert_eq!(f.value.mean, 790.0);
    assert_eq!(f.abs_error.mean, 10.0);
}

#[test]
fn summary_of_constant_column_is_that_constant() {
    let table = TrialTable { rows: (0..7).map(|t| row(t, 801.5)).collect(), failures: vec![] };
    let s = summarize(&table, &truth()).unwrap();
    let u = s.iter().find(|r| r.parameter == "u").unwrap();
    assert_eq!(u.value.mean, 320.0);
    assert_eq!(u.value.median, 320.0);
    assert_eq!(s[0].value.mean, 801.5);
    assert!(matches!(summarize(&TrialTable::default(), &truth()), Err(HarnessError::EmptyTable)));
}

#[test]
fn csv_round_trip() {
    let table = TrialTable { rows: vec![row(0, 799.25), row(1, 800.5)], failures: vec![] };
    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("trial,scheme,image_count,f,u,v,k1,k2,trace_sigma,rms\n"));
    assert!(text.contains(",random,"));
    assert_eq!(TrialTable::read_csv(&buf[..]).unwrap(), table);
}

fn small(scheme: Scheme, noise: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        scheme,
        trials: 2,
        noise_sigma: noise,
        images_per_trial: 5,
        seed: 9,
        paths: 2,
        path_frames: 8,
        ..Default::default()
    };
    cfg.planner.budget = 400;
    cfg
}

#[test]
fn noise_free_schemes_recover_ground_truth() {
    for scheme in Scheme::ALL {
        let cfg = small(scheme, 0.0);
        let table = run_experiment(&cfg).unwrap();
        assert!(table.failures.is_empty(), "{scheme}: {:?}", table.failures);
        let gt = truth().to_vec();
        for r in table.rows.iter().filter(|r| r.image_count >= 5) {
            let est = [r.f, r.u, r.v, r.k1, r.k2];
            for (e, t) in est.iter().zip(&gt) {
                assert!((e - t).abs() <= 1e-6 * t.abs(), "{scheme} n={}: {e} vs {t}", r.image_count);
            }
        }
    }
}

#[test]
fn experiment_rows_follow_the_protocol() {
    let table = run_experiment(&small(Scheme::Wizard, 0.5)).unwrap();
    let counts: Vec<_> = table.at(Scheme::Wizard, 5).iter().map(|r| r.trial).collect();
    assert_eq!(counts, vec![0, 1]);
    for n in 3..=5 {
        assert_eq!(table.at(Scheme::Wizard, n).len(), 2);
    }
    let path = run_experiment(&small(Scheme::WizardPath, 0.5)).unwrap();
    let mut counts: Vec<_> = path.rows.iter().filter(|r| r.trial == 0).map(|r| r.image_count).collect();
    counts.dedup();
    assert_eq!(counts.first(), Some(&5));
    assert_eq!(counts.len(), 3);
}

#[test]
fn schemes_share_initial_images() {
    let a = run_experiment(&small(Scheme::Random, 0.5)).unwrap();
    let b = run_experiment(&small(Scheme::Wizard, 0.5)).unwrap();
    for (x, y) in a.at(Scheme::Random, 3).iter().zip(b.at(Scheme::Wizard, 3)) {
        assert_eq!((x.f, x.u, x.v), (y.f, y.u, y.v));
    }
}

#[test]
fn same_seed_same_table() {
    let cfg = small(Scheme::WizardAuto, 0.5);
    assert_eq!(run_experiment(&cfg).unwrap(), run_experiment(&cfg).unwrap());
}

#[test]
fn config_round_trips_through_json() {
    let cfg = small(Scheme::RandomPath, 0.2);
    let text = serde_json::to_string(&cfg).unwrap();
    let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    let partial: ExperimentConfig = serde_json::from_str(r#"{"scheme":"wizard-auto","trials":4}"#).unwrap();
    assert_eq!(partial.scheme, Scheme::WizardAuto);
    assert_eq!(partial.images_per_trial, 20);
}
