//! Deterministic child random streams.
//!
//! Every stochastic quantity is drawn from a stream derived from
//! `(root seed, stream name, index)`, so results never depend on which worker
//! handled which index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Seed of the `index`-th child of the named stream.
pub fn child_seed(seed: u64, stream: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a(stream)).wrapping_add(splitmix64(index)))
}

pub fn child_rng(seed: u64, stream: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(seed, stream, index))
}

pub fn standard_normal_vec<R: rand::Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Isotropic direction scaled to the given Euclidean norm.
pub fn isotropic_vec<R: rand::Rng>(rng: &mut R, len: usize, norm: f64) -> Vec<f64> {
    loop {
        let v = standard_normal_vec(rng, len);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-300 {
            return v.into_iter().map(|x| x * norm / n).collect();
        }
    }
}
