//! Fixtures shared by the benchmarks.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxsep::AudioClip;

pub fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn stereo_noise(len: usize, rate: u32, seed: u64) -> AudioClip {
    AudioClip::new(vec![noise(len, seed), noise(len, seed + 1)], rate).expect("two equal channels")
}

/// Non-negative magnitudes shaped like a model input.
pub fn magnitudes(channels: usize, frames: usize, bins: usize, seed: u64) -> Array3<f64> {
    let v = noise(channels * frames * bins, seed).into_iter().map(f64::abs).collect();
    Array3::from_shape_vec((channels, frames, bins), v).expect("shape")
}
