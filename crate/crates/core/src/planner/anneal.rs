//! Simulated annealing with geometric cooling.

use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{PoseSearchSpace, Tracker};

const INITIAL_SAMPLES: usize = 50;
const STAGE_LENGTH: usize = 30;
const COOLING: f64 = 0.95;
const STEP_FRACTION: f64 = 0.1;

fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(var.sqrt())
}

pub(super) fn run(tracker: &mut Tracker, space: &PoseSearchSpace, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let penalty = tracker.penalty();

    let mut feasible = Vec::new();
    for _ in 0..INITIAL_SAMPLES {
        let z = space.sample(&mut rng);
        let Some((f, _)) = tracker.eval(&z) else { break };
        if f < penalty {
            feasible.push(f);
        }
    }
    let Some((start, start_f)) = tracker.best else { return };
    let t0 = sample_std(&feasible)
        .filter(|s| *s > 0.0)
        .unwrap_or_else(|| if start_f < penalty { 0.1 * start_f.abs().max(1e-300) } else { 1.0 });

    let steps = Vector6::from_fn(|i, _| STEP_FRACTION * space.range(i));
    let (mut z, mut fz) = (start, start_f);
    let mut k = 0usize;
    while !tracker.exhausted() {
        let temp = t0 * COOLING.powi((k / STAGE_LENGTH) as i32);
        let proposal = space.clamp(&Vector6::from_fn(|i, _| {
            let n: f64 = StandardNormal.sample(&mut rng);
            z[i] + steps[i] * n
        }));
        let Some((f, _)) = tracker.eval(&proposal) else { break };
        k += 1;
        let accept = f <= fz || (temp > 0.0 && rng.random::<f64>() < (-(f - fz) / temp).exp());
        if accept {
            z = proposal;
            fz = f;
        }
    }
}
