//! Writing a latent/image sequence and generator weights to disk, reading
//! them back, and replaying the stored sequence through the simulator.
//!
//! ```text
//! cargo run --example dataset_roundtrip
//! ```

use semlink::config::{SimulationConfig, SourceKind};
use semlink::dataset::{load_dataset, save_dataset, Dataset};
use semlink::generator::GeneratorModel;
use semlink::pipeline::{generate_source_sequence, run_sequence};

fn main() -> semlink::Result<()> {
    let dir = std::env::temp_dir().join(format!("semlink-dataset-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| semlink::Error::Io { path: dir.clone(), source: e })?;

    let mut cfg = SimulationConfig::desk();
    cfg.num_images = 20;
    let model = GeneratorModel::seeded_linear(cfg.dims.latent(), cfg.dims.image(), 42);
    let seq = generate_source_sequence(&cfg.source.synthetic(), cfg.dims.latent(), 20, 7, Some(&model))?;

    let data = Dataset {
        latents: seq.latents,
        images: seq.images,
    };
    let data_path = dir.join("sequence.toml");
    let weights_path = dir.join("generator.toml");
    save_dataset(&data_path, &data)?;
    model.save(&weights_path)?;
    println!("{}", std::fs::read_to_string(&data_path).unwrap_or_default());

    let back = load_dataset(&data_path)?;
    println!("reloaded {} latents; equal at f32 precision: {}", back.len(), back == data.at_storage_precision()?);
    let reloaded = GeneratorModel::load(&weights_path)?;
    println!("generator reloaded: {:?}, {} layers", reloaded.kind(), reloaded.layers().len());

    cfg.source.kind = SourceKind::Dataset;
    cfg.source.path = Some(data_path);
    cfg.generator.weights = Some(weights_path);
    let out = run_sequence(&cfg)?;
    println!(
        "replayed: mean bcr {:.5}, mean hits {:.2}, mean psnr {:.2} dB",
        out.summary.mean_bcr,
        out.summary.mean_hits,
        out.summary.mean_psnr_db.unwrap_or(f64::NAN)
    );
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
