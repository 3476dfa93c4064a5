//! Seeded randomness.
//!
//! Every random stream in the simulator is a ChaCha20 generator seeded with
//! `seed_from_u64(seed)` and positioned on a numbered stream with
//! `set_stream`. ChaCha is counter based, so `(seed, stream)` fully
//! determines a realization regardless of the order in which streams are
//! consumed. Gaussian variates use `rand_distr::StandardNormal`.
//!
//! A master seed fans out to per-stage seeds with [`sub_seed`]: the first
//! 64-bit output of stream `stage` of the master generator.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stage identifiers used with [`sub_seed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Source = 1,
    Channel = 2,
    Inversion = 3,
    Generator = 4,
    IndexLink = 5,
}

pub fn sub_seed(master: u64, stage: Stage) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(stage as u64);
    rng.next_u64()
}

/// Generator for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_vec<R: rand::Rng + ?Sized>(rng: &mut R, len: usize, std: f64) -> Vec<f64> {
    (0..len).map(|_| std * standard_normal(rng)).collect()
}
