//! Counter-based seed derivation.
//!
//! Every stochastic component draws from its own ChaCha stream whose seed is a
//! pure function of the master seed and a path of integers (domain tag, visit,
//! task index, worker, ...). Inserting or removing a phase therefore never
//! shifts the seeds of unrelated phases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Domain tags used as the first path element of [`derive_seed`].
pub mod domain {
    pub const KB_INIT: u64 = 1;
    pub const ACTIVE_INIT: u64 = 2;
    pub const PROGRESS_ENV: u64 = 3;
    pub const PROGRESS_ACT: u64 = 4;
    pub const COMPRESS_ENV: u64 = 5;
    pub const COMPRESS_ACT: u64 = 6;
    pub const AGNOSTIC_SAMPLER: u64 = 7;
    pub const AGNOSTIC_INIT: u64 = 8;
    pub const AGNOSTIC_ENV: u64 = 9;
    pub const AGNOSTIC_ACT: u64 = 10;
    pub const AGNOSTIC_COMPRESS_ENV: u64 = 11;
    pub const AGNOSTIC_COMPRESS_ACT: u64 = 12;
    pub const FORWARD_MODEL_INIT: u64 = 13;
    pub const WORKER: u64 = 14;
    pub const ADAPTOR_INIT: u64 = 15;
    pub const EVAL: u64 = 16;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `master` with an integer path into a new 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = splitmix(master);
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    h
}

pub fn rng_from(master: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(master, path))
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn uniform01(rng: &mut impl rand::RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_are_order_sensitive() {
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_ne!(derive_seed(1, &[2]), derive_seed(1, &[2, 0]));
        assert_eq!(derive_seed(9, &[4, 5]), derive_seed(9, &[4, 5]));
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = rng_from(0, &[]);
        for _ in 0..10_000 {
            let u = uniform01(&mut rng);
            assert!((0.0..1.0).contains(&u));
        }
    }
}
