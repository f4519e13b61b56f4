#![allow(dead_code)]

use emg2artic_nn::{seeded_rng, Rng, Tensor};
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    seeded_rng(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero so ReLU kinks stay out of reach of the
/// finite-difference step.
pub fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}
