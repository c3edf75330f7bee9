use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Independent deterministic generator per `(seed, stream)` pair.
pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub(crate) fn gaussian_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let n = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || n.sample(r))
}

pub(crate) fn gaussian_vector(r: &mut ChaCha8Rng, len: usize, std: f64) -> Array1<f64> {
    let n = Normal::new(0.0, std).expect("finite std");
    Array1::from_shape_simple_fn(len, || n.sample(r))
}

// stream ids, one per seeded component
pub(crate) const STREAM_ENCODER: u64 = 1;
pub(crate) const STREAM_POSITIONAL: u64 = 2;
pub(crate) const STREAM_LABELS: u64 = 3;
pub(crate) const STREAM_ADJUST: u64 = 4;
pub(crate) const STREAM_SCREEN: u64 = 5;
