//! Compression ratio over an image stream as the caches fill up, averaged
//! over several seeds of a clustered synthetic source.
//!
//! ```text
//! cargo run --release --example evolving_bcr
//! ```

use semlink::config::{GeneratorChoice, SimulationConfig};
use semlink::pipeline::{moving_average, run_sequence};

fn main() -> semlink::Result<()> {
    let seeds = 5;
    let mut cfg = SimulationConfig::desk();
    cfg.generator.kind = GeneratorChoice::None;
    let n = cfg.num_images;

    let mut mean_curve = vec![0.0; n];
    let mut mean_hits = vec![0.0; n];
    for seed in 0..seeds {
        cfg.master_seed = seed;
        let out = run_sequence(&cfg)?;
        for (i, r) in out.records.iter().enumerate() {
            mean_curve[i] += r.bcr / seeds as f64;
            mean_hits[i] += r.hits.len() as f64 / seeds as f64;
        }
    }
    let smooth = moving_average(&mean_curve, 10);
    println!("{:>5} {:>10} {:>10} {:>6}", "image", "bcr", "ma10", "hits");
    for i in (0..n).step_by(10).chain([n - 1]) {
        println!("{:>5} {:>10.5} {:>10.5} {:>6.2}", i + 1, mean_curve[i], smooth[i], mean_hits[i]);
    }
    let early: f64 = mean_curve[..10].iter().sum::<f64>() / 10.0;
    let late: f64 = mean_curve[n / 2..].iter().sum::<f64>() / (n - n / 2) as f64;
    println!("mean bcr, first 10 images: {early:.5}; second half: {late:.5}");
    Ok(())
}
