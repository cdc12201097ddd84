//! Seeded tensor initialization.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::numcore::Tensor;

/// A generator whose stream depends only on `(seed, name)`, so adding or
/// reordering parameters never perturbs the others.
pub(crate) fn named_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut stream = 0xcbf2_9ce4_8422_2325u64;
    for b in name.bytes() {
        stream ^= u64::from(b);
        stream = stream.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn gaussian(seed: u64, name: &str, shape: &[usize], std: f64) -> Tensor {
    let mut rng = named_rng(seed, name);
    let normal = Normal::new(0.0, std).expect("std is finite and non-negative");
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    Tensor::new(shape, data).expect("shape matches sample count")
}
