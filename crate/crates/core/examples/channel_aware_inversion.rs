//! Recovering a latent from an image by gradient descent through the
//! generator, with and without the channel noise in the loop, then checking
//! how each latent survives an actual noisy transmission.
//!
//! ```text
//! cargo run --release --example channel_aware_inversion
//! ```

use semlink::accounting::psnr;
use semlink::channel;
use semlink::generator::{GeneratorModel, LatentDims};
use semlink::inversion::{invert, InversionConfig, NoiseMode};
use semlink::latent::{ImageDims, SemanticLatent};
use semlink::rng::{gaussian_vec, stream_rng};

fn received_psnr(model: &GeneratorModel, z: &SemanticLatent, target: &semlink::latent::Image, snr_db: f64) -> semlink::Result<f64> {
    let trials = 20;
    let mut total = 0.0;
    for t in 0..trials {
        let mut noisy = z.as_slice().to_vec();
        channel::add_real_noise(&mut noisy, snr_db, &mut stream_rng(77, t));
        let z_hat = SemanticLatent::new(z.n_slots(), z.slot_len(), noisy)?;
        total += psnr(target, &model.forward(&z_hat)?)?;
    }
    Ok(total / trials as f64)
}

fn main() -> semlink::Result<()> {
    let latent = LatentDims::new(4, 8);
    let image = ImageDims::new(12, 12);
    let model = GeneratorModel::seeded_mlp(latent, image, &[48], 3);
    let z_star = SemanticLatent::new(4, 8, gaussian_vec(&mut stream_rng(5, 0), 32, 1.0))?;
    let target = model.forward(&z_star.power_normalized()?)?;
    let snr_db = 0.0;

    for (label, noise_mode) in [("noise-free objective", NoiseMode::Off), ("channel-aware objective", NoiseMode::FreshPerStep)] {
        let cfg = InversionConfig {
            noise_mode,
            snr_db,
            iterations: 400,
            step_size: 0.02,
            ..Default::default()
        };
        let out = invert(&model, &target, &cfg, 11)?;
        let trace = &out.state.loss_trace;
        println!(
            "{label:>24}: loss {:.4} -> {:.4}, clean psnr {:.2} dB, psnr after {snr_db} dB channel {:.2} dB",
            trace[0],
            trace[trace.len() - 1],
            psnr(&target, &model.forward(&out.latent)?)?,
            received_psnr(&model, &out.latent, &target, snr_db)?,
        );
    }
    Ok(())
}
