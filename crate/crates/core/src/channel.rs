//! AWGN channel for complex symbol blocks.
//!
//! Transmit power is unity, so the per-symbol noise variance is
//! `σ² = 10^(−snr_db/10)`, split evenly between real and imaginary parts.
//! `snr_db = +∞` is the noiseless sentinel.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::latent::ComplexBlock;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub snr_db: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(snr_db: f64, seed: u64) -> Self {
        Self { snr_db, seed }
    }

    pub fn noiseless(seed: u64) -> Self {
        Self::new(f64::INFINITY, seed)
    }
}

/// Complex noise variance `σ²` for a unit-power signal at `snr_db`.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Passes `block` through the channel.
///
/// The noise realization depends only on `(cfg.seed, counter)`, where
/// `counter` numbers the transmission within a run.
pub fn transmit(block: &ComplexBlock, cfg: &ChannelConfig, counter: u64) -> ComplexBlock {
    let variance = noise_variance(cfg.snr_db);
    if variance == 0.0 {
        return block.clone();
    }
    let std = (variance / 2.0).sqrt();
    let mut rng = rng::stream_rng(cfg.seed, counter);
    ComplexBlock::new(
        block
            .symbols()
            .iter()
            .map(|s| {
                let re = rng::standard_normal(&mut rng);
                let im = rng::standard_normal(&mut rng);
                s + Complex64::new(std * re, std * im)
            })
            .collect(),
    )
}

/// Real-valued equivalent: every component gets `N(0, σ²/2)`.
pub fn add_real_noise(values: &mut [f64], snr_db: f64, rng: &mut impl rand::Rng) {
    let variance = noise_variance(snr_db);
    if variance == 0.0 {
        return;
    }
    let std = (variance / 2.0).sqrt();
    for v in values {
        *v += std * rng::standard_normal(rng);
    }
}
