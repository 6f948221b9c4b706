//! (mu, lambda) evolution strategy with stochastic ranking of objective and
//! constraint violation, log-normal step-size self-adaptation and a
//! differential step for the best parents.

use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{PoseSearchSpace, Tracker};

const MU: usize = 15;
const LAMBDA: usize = 105;
const P_F: f64 = 0.45;
const GAMMA: f64 = 0.85;
const SMOOTHING: f64 = 0.2;
const RESAMPLES: usize = 10;

#[derive(Clone)]
struct Individual {
    x: Vector6<f64>,
    sigma: Vector6<f64>,
    f: f64,
    phi: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Bubble-sort style stochastic ranking.
fn rank(pop: &mut [Individual], rng: &mut ChaCha8Rng) {
    let n = pop.len();
    for _ in 0..n {
        let mut swapped = false;
        for j in 0..n.saturating_sub(1) {
            let (a, b) = (&pop[j], &pop[j + 1]);
            let by_objective = (a.phi == 0.0 && b.phi == 0.0) || rng.random::<f64>() < P_F;
            let out_of_order = if by_objective { a.f > b.f } else { a.phi > b.phi };
            if out_of_order {
                pop.swap(j, j + 1);
                swapped = true;
            }
        }
        if !swapped {
            break;
        }
    }
}

pub(super) fn run(tracker: &mut Tracker, space: &PoseSearchSpace, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 6.0f64;
    let tau = 1.0 / (2.0 * n.sqrt()).sqrt();
    let tau_global = 1.0 / (2.0 * n).sqrt();
    let sigma0 = Vector6::from_fn(|i, _| space.range(i) / n.sqrt());
    let max_sigma = sigma0;

    let mut pop = Vec::with_capacity(LAMBDA);
    for _ in 0..LAMBDA {
        let x = space.sample(&mut rng);
        let Some((f, phi)) = tracker.eval(&x) else { return };
        pop.push(Individual { x, sigma: sigma0, f, phi });
    }

    loop {
        rank(&mut pop, &mut rng);
        pop.truncate(MU);
        let mut next = Vec::with_capacity(LAMBDA);
        for k in 0..LAMBDA {
            let child = if k < MU - 1 {
                // differential variation towards the best parent
                let p = &pop[k];
                let x = p.x + (pop[0].x - pop[k + 1].x) * GAMMA;
                let x = if (0..6).all(|i| (space.lower[i]..=space.upper[i]).contains(&x[i])) {
                    x
                } else {
                    mutate_position(&p.x, &p.sigma, space, &mut rng)
                };
                Individual { x, sigma: p.sigma, f: 0.0, phi: 0.0 }
            } else {
                let p = &pop[k % MU];
                let global = tau_global * normal(&mut rng);
                let sigma = Vector6::from_fn(|i, _| {
                    let s = p.sigma[i] * (global + tau * normal(&mut rng)).exp();
                    s.min(max_sigma[i])
                });
                let x = mutate_position(&p.x, &sigma, space, &mut rng);
                let sigma = p.sigma + (sigma - p.sigma) * SMOOTHING;
                Individual { x, sigma, f: 0.0, phi: 0.0 }
            };
            next.push(child);
        }
        for child in &mut next {
            let Some((f, phi)) = tracker.eval(&child.x) else { return };
            child.f = f;
            child.phi = phi;
        }
        pop = next;
    }
}

/// Gaussian step per axis, resampled while out of bounds and finally left at
/// the parent coordinate.
fn mutate_position(
    x: &Vector6<f64>,
    sigma: &Vector6<f64>,
    space: &PoseSearchSpace,
    rng: &mut ChaCha8Rng,
) -> Vector6<f64> {
    Vector6::from_fn(|i, _| {
        for _ in 0..RESAMPLES {
            let c = x[i] + sigma[i] * normal(rng);
            if (space.lower[i]..=space.upper[i]).contains(&c) {
                return c;
            }
        }
        x[i]
    })
}
