//! Seeded randomness.
//!
//! Every random draw in the crate comes from a [`SeedRng`] (ChaCha8, a
//! counter-based stream cipher generator with a 64-bit block counter)
//! constructed from an explicit seed. There is no global generator. Child
//! streams are derived with [`derive_seed`] from a parent seed, a subsystem
//! label and a counter, so that independent consumers never share a stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numerics::Tensor;

pub type SeedRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Hashes `(seed, label, counter)` into a child seed.
pub fn derive_seed(seed: u64, label: &str, counter: u64) -> u64 {
    // FNV-1a over the label, then mixed with the seed and counter.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(seed ^ h).wrapping_add(counter))
}

/// Convenience for `seeded(derive_seed(..))`.
pub fn child_rng(seed: u64, label: &str, counter: u64) -> SeedRng {
    seeded(derive_seed(seed, label, counter))
}

/// `p × q` matrix of independent ±1 entries, each sign with probability 1/2.
pub fn rademacher_matrix(p: usize, q: usize, seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    let data = (0..p * q)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    Tensor::new(vec![p, q], data).expect("shape matches")
}

pub fn standard_normal(rng: &mut SeedRng, dims: &[usize]) -> Tensor {
    let len = dims.iter().product();
    let data = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(dims.to_vec(), data).expect("shape matches")
}

/// Uniform integer in the inclusive range `[lo, hi]`.
pub fn uniform_int(rng: &mut SeedRng, lo: u32, hi: u32) -> u32 {
    rng.random_range(lo..=hi)
}

/// Uniform sample on the unit sphere in `dim` dimensions.
pub fn unit_sphere(rng: &mut SeedRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}
