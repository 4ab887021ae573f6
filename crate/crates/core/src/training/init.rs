use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::ParamKind;
use crate::tensor::Tensor;

/// Half-width `√(6 / (fan_in + fan_out))` of the Glorot-uniform range.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Draws a tensor of the given shape i.i.d. from the open interval
/// `(−bound, bound)`.
pub fn glorot_sample(fan_in: usize, fan_out: usize, shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let bound = glorot_bound(fan_in.max(1), fan_out.max(1));
    let dist = Uniform::new(-bound, bound);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            // Uniform::new is half-open; reject the closed end
            let x = dist.sample(rng);
            if x != -bound {
                break x;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// A `fan_out × fan_in` Glorot-uniform matrix, deterministic per seed.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    glorot_sample(fan_in, fan_out, &[fan_out, fan_in], &mut rng)
}

/// Parameter initializer: Glorot-uniform weights, zero biases, all drawn
/// from one seeded stream in registration order.
pub fn glorot_init(seed: u64) -> impl FnMut(ParamKind, &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    move |kind, shape| match kind {
        ParamKind::Weight { fan_in, fan_out } => glorot_sample(fan_in, fan_out, shape, &mut rng),
        ParamKind::Bias => Tensor::zeros(shape),
    }
}
