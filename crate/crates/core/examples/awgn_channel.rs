//! Empirical noise statistics of the AWGN channel at a few SNRs.
//!
//! ```text
//! cargo run --release --example awgn_channel
//! ```

use num_complex::Complex64;
use semlink::channel::{self, ChannelConfig};
use semlink::latent::{pack_real_to_complex, power_normalize, unpack_complex_to_real, ComplexBlock};

fn main() -> semlink::Result<()> {
    let n = 100_000;
    let zeros = ComplexBlock::new(vec![Complex64::new(0.0, 0.0); n]);
    println!("{:>7} {:>12} {:>12} {:>10}", "snr dB", "sigma^2", "measured", "|mean|");
    for snr in [-5.0, 0.0, 5.0, 10.0, 20.0] {
        let noise = channel::transmit(&zeros, &ChannelConfig::new(snr, 1), 0);
        let var = noise.average_power();
        let mean = noise.symbols().iter().sum::<Complex64>() / n as f64;
        println!("{snr:>7} {:>12.5} {var:>12.5} {:>10.5}", channel::noise_variance(snr), mean.norm());
    }

    let (v, scale) = power_normalize(&[3.0, 4.0, 1.0, -2.0])?;
    let block = pack_real_to_complex(&v)?;
    println!("normalized by {scale:.4}: {:?}, average power {:.3}", block.symbols(), block.average_power());
    let clean = channel::transmit(&block, &ChannelConfig::noiseless(0), 0);
    println!("noiseless round trip exact: {}", unpack_complex_to_real(&clean) == v);
    Ok(())
}
