//! Fixtures shared by the benchmarks.

use invoamc_core::{Rng, Tensor};

/// A `B x C x 1 x W` standard-normal signal batch.
pub fn signal_batch(b: usize, c: usize, w: usize, seed: u64) -> Tensor<f32> {
    Rng::new(seed)
        .normal(&[b, c, 1, w], 0.0, 1.0)
        .expect("valid dims")
}
