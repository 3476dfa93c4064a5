//! Reconstruction quality against channel SNR, with and without caching,
//! running independent seeds in parallel.
//!
//! ```text
//! cargo run --release --example snr_sweep
//! ```

use rayon::prelude::*;
use semlink::config::{GeneratorChoice, SimulationConfig, ThresholdSpec};
use semlink::pipeline::run_sequence;
use semlink::semcache::Threshold;

fn mean_over_seeds(snr_db: f64, thresholds: ThresholdSpec) -> semlink::Result<(f64, f64)> {
    let runs = (0..4u64)
        .into_par_iter()
        .map(|seed| {
            let mut cfg = SimulationConfig::desk();
            cfg.master_seed = seed;
            cfg.num_images = 30;
            cfg.generator.kind = GeneratorChoice::Mlp;
            cfg.channel.snr_db = snr_db;
            cfg.thresholds = thresholds.clone();
            run_sequence(&cfg).map(|o| (o.summary.mean_psnr_db.unwrap_or(f64::NAN), o.summary.mean_bcr))
        })
        .collect::<semlink::Result<Vec<_>>>()?;
    let n = runs.len() as f64;
    Ok((runs.iter().map(|r| r.0).sum::<f64>() / n, runs.iter().map(|r| r.1).sum::<f64>() / n))
}

fn main() -> semlink::Result<()> {
    println!("{:>7} {:>14} {:>14} {:>12}", "snr dB", "psnr no cache", "psnr cache", "bcr cache");
    for snr in [-5.0, 0.0, 5.0, 10.0, 20.0] {
        let (plain, _) = mean_over_seeds(snr, ThresholdSpec::Uniform(Threshold::NEVER))?;
        let (cached, bcr) = mean_over_seeds(snr, ThresholdSpec::Uniform(Threshold::At(0.9)))?;
        println!("{snr:>7} {plain:>14.2} {cached:>14.2} {bcr:>12.5}");
    }
    Ok(())
}
