//! End-to-end transmission of an image sequence.
//!
//! Per image: obtain the latent (inversion or ground truth), plan against the
//! transmitter cache, update it, power-normalize and pack the missed vectors,
//! pass them through the AWGN channel, deliver the cache indices over the
//! side channel, rebuild the latent at the receiver (updating its cache) and
//! regenerate the image.
//!
//! The payload normalization scale travels with the index frame and the
//! receiver divides it back out, so received vectors live in the same
//! coordinates as the transmitter's latent.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::accounting::{self, IndexCostMode, TransmissionRecord};
use crate::channel::{self, ChannelConfig};
use crate::config::{SimulationConfig, SimulationMode, SourceKind, SyntheticSourceSpec};
use crate::dataset;
use crate::error::{Error, Result};
use crate::generator::{FeatureExtractor, GeneratorModel, LatentDims};
use crate::inversion;
use crate::latent::{pack_real_to_complex, power_normalize, unpack_complex_to_real, Image, SemanticLatent};
use crate::rng::{self, Stage};
use crate::semcache::{self, CacheMemory, IndexFrame, ThresholdProfile};

const PROTOTYPE_STREAM: u64 = 0;
const DRAW_STREAM: u64 = 1;

/// Window of the trailing moving average reported in [`Summary`].
pub const SUMMARY_WINDOW: usize = 10;

/// Ground-truth latents, optional rendered images and, for synthetic
/// sources, which slots reused a stored prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSequence {
    pub latents: Vec<SemanticLatent>,
    pub images: Option<Vec<Image>>,
    pub reused: Vec<Vec<bool>>,
}

/// Draws `count` clustered latents; renders `G(PN(z))` when a generator is given.
pub fn generate_source_sequence(
    spec: &SyntheticSourceSpec,
    dims: LatentDims,
    count: usize,
    seed: u64,
    generator: Option<&GeneratorModel>,
) -> Result<SourceSequence> {
    let v = spec.violations("");
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    let mut proto_rng = rng::stream_rng(seed, PROTOTYPE_STREAM);
    let prototypes: Vec<Vec<Vec<f64>>> = (0..dims.n_slots)
        .map(|_| {
            (0..spec.prototypes_per_slot)
                .map(|_| rng::gaussian_vec(&mut proto_rng, dims.slot_len, 1.0))
                .collect()
        })
        .collect();
    let mut draw = rng::stream_rng(seed, DRAW_STREAM);
    let mut latents = Vec::with_capacity(count);
    let mut reused = Vec::with_capacity(count);
    for _ in 0..count {
        let mut data = Vec::with_capacity(dims.num_values());
        let mut flags = Vec::with_capacity(dims.n_slots);
        for slot in prototypes.iter() {
            let reuse = rand::Rng::random::<f64>(&mut draw) < spec.reuse_prob;
            let base = if reuse {
                let k = rand::Rng::random_range(&mut draw, 0..slot.len());
                slot[k].clone()
            } else {
                rng::gaussian_vec(&mut draw, dims.slot_len, 1.0)
            };
            for b in base {
                data.push(b + spec.perturbation_std * rng::standard_normal(&mut draw));
            }
            flags.push(reuse);
        }
        latents.push(SemanticLatent::new(dims.n_slots, dims.slot_len, data)?);
        reused.push(flags);
    }
    let images = generator
        .map(|g| render_images(g, &latents))
        .transpose()?;
    Ok(SourceSequence {
        latents,
        images,
        reused,
    })
}

/// `G(PN(z))` for every latent.
pub fn render_images(generator: &GeneratorModel, latents: &[SemanticLatent]) -> Result<Vec<Image>> {
    latents
        .iter()
        .map(|z| generator.forward(&z.power_normalized()?))
        .collect()
}

/// One source item fed to [`Simulator::transmit_image`].
#[derive(Debug, Clone)]
pub struct SourceItem {
    pub latent: SemanticLatent,
    pub image: Option<Image>,
}

/// Transmitter and receiver caches plus the transmission counter.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub tx: CacheMemory,
    pub rx: CacheMemory,
    pub transmissions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub num_images: usize,
    pub first_bcr: f64,
    pub mean_bcr: f64,
    pub min_bcr: f64,
    pub max_bcr: f64,
    pub mean_n_s: f64,
    pub mean_hits: f64,
    pub mean_index_symbols: f64,
    pub mean_psnr_db: Option<f64>,
    pub mean_perceptual_distance: Option<f64>,
    pub moving_average_window: usize,
    pub moving_average_bcr: Vec<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Trailing moving average: entry `i` averages the last `min(window, i + 1)` values.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let start = (i + 1).saturating_sub(window);
            mean(values[start..=i].iter().copied())
        })
        .collect()
}

impl Summary {
    pub fn from_records(records: &[TransmissionRecord]) -> Self {
        let bcrs: Vec<f64> = records.iter().map(|r| r.bcr).collect();
        let optional_mean = |f: fn(&TransmissionRecord) -> Option<f64>| {
            let vals: Option<Vec<f64>> = records.iter().map(f).collect();
            vals.filter(|v| !v.is_empty()).map(|v| mean(v.into_iter()))
        };
        Self {
            num_images: records.len(),
            first_bcr: bcrs.first().copied().unwrap_or(f64::NAN),
            mean_bcr: mean(bcrs.iter().copied()),
            min_bcr: bcrs.iter().copied().fold(f64::INFINITY, f64::min),
            max_bcr: bcrs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_n_s: mean(records.iter().map(|r| r.n_s as f64)),
            mean_hits: mean(records.iter().map(|r| r.hits.len() as f64)),
            mean_index_symbols: mean(records.iter().map(|r| r.index_symbols)),
            mean_psnr_db: optional_mean(|r| r.psnr_db),
            mean_perceptual_distance: optional_mean(|r| r.perceptual_distance),
            moving_average_window: SUMMARY_WINDOW,
            moving_average_bcr: moving_average(&bcrs, SUMMARY_WINDOW),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub records: Vec<TransmissionRecord>,
    pub summary: Summary,
}

/// Stateful sequential simulator for one run.
pub struct Simulator {
    cfg: SimulationConfig,
    generator: Option<Arc<GeneratorModel>>,
    features: FeatureExtractor,
    thresholds: ThresholdProfile,
    channel: ChannelConfig,
    inversion_seed: u64,
    index_seed: u64,
    link: LinkState,
}

impl Simulator {
    pub fn new(cfg: SimulationConfig) -> Result<Self> {
        cfg.validate()?;
        let generator = cfg
            .build_generator(rng::sub_seed(cfg.master_seed, Stage::Generator))?
            .map(Arc::new);
        Self::with_generator(cfg, generator)
    }

    /// Uses `generator` instead of the one described by the config.
    pub fn with_generator(cfg: SimulationConfig, generator: Option<Arc<GeneratorModel>>) -> Result<Self> {
        cfg.validate()?;
        if let Some(g) = &generator {
            if g.latent_dims() != cfg.dims.latent() || g.image_dims() != cfg.dims.image() {
                return Err(Error::Config(vec!["generator: dims disagree with dims section".into()]));
            }
        }
        if cfg.mode == SimulationMode::FullInversion && generator.is_none() {
            return Err(Error::Config(vec!["generator.kind: full_inversion needs a generator".into()]));
        }
        let d = &cfg.dims;
        let load_cache = |path: &Option<std::path::PathBuf>| -> Result<CacheMemory> {
            match path {
                Some(p) => {
                    let c = CacheMemory::load(p)?;
                    if c.n_slots() != d.n_slots || c.slot_len() != d.slot_len || c.capacity() != d.cache_size {
                        return Err(Error::Config(vec![format!("cache: {} does not match dims", p.display())]));
                    }
                    Ok(c)
                }
                None => Ok(CacheMemory::new(d.n_slots, d.slot_len, d.cache_size)),
            }
        };
        let link = LinkState {
            tx: load_cache(&cfg.cache.tx_state)?,
            rx: load_cache(&cfg.cache.rx_state)?,
            transmissions: 0,
        };
        Ok(Self {
            thresholds: cfg.threshold_profile(),
            channel: ChannelConfig::new(cfg.channel.snr_db, rng::sub_seed(cfg.master_seed, Stage::Channel)),
            inversion_seed: rng::sub_seed(cfg.master_seed, Stage::Inversion),
            index_seed: rng::sub_seed(cfg.master_seed, Stage::IndexLink),
            features: cfg.inversion.features.clone(),
            generator,
            link,
            cfg,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.cfg
    }

    pub fn generator(&self) -> Option<&GeneratorModel> {
        self.generator.as_deref()
    }

    pub fn link(&self) -> &LinkState {
        &self.link
    }

    pub fn link_mut(&mut self) -> &mut LinkState {
        &mut self.link
    }

    /// Source items for this run, from the synthetic generator or a dataset.
    pub fn source_items(&self) -> Result<Vec<SourceItem>> {
        let n = self.cfg.num_images;
        let (latents, images) = match self.cfg.source.kind {
            SourceKind::Synthetic => {
                let seq = generate_source_sequence(
                    &self.cfg.source.synthetic(),
                    self.cfg.dims.latent(),
                    n,
                    rng::sub_seed(self.cfg.master_seed, Stage::Source),
                    self.generator(),
                )?;
                (seq.latents, seq.images)
            }
            SourceKind::Dataset => {
                let path = self.cfg.source.path.as_ref().expect("validated");
                let mut data = dataset::load_dataset(path)?;
                if data.len() < n {
                    return Err(Error::Config(vec![format!(
                        "num_images: {n} requested, dataset has {}",
                        data.len()
                    )]));
                }
                if let Some(z) = data.latents.first() {
                    if z.n_slots() != self.cfg.dims.n_slots || z.slot_len() != self.cfg.dims.slot_len {
                        return Err(Error::Config(vec!["source.path: dataset latent dims disagree with dims section".into()]));
                    }
                }
                data.latents.truncate(n);
                let images = match (data.images, self.generator()) {
                    (Some(mut imgs), _) => {
                        imgs.truncate(n);
                        if imgs[0].dims() != self.cfg.dims.image() {
                            return Err(Error::Config(vec!["source.path: dataset image dims disagree with dims section".into()]));
                        }
                        Some(imgs)
                    }
                    (None, Some(g)) => Some(render_images(g, &data.latents)?),
                    (None, None) => None,
                };
                (data.latents, images)
            }
        };
        let mut images = images.map(Vec::into_iter);
        Ok(latents
            .into_iter()
            .map(|latent| SourceItem {
                latent,
                image: images.as_mut().and_then(Iterator::next),
            })
            .collect())
    }

    fn semantic_latent(&self, item: &SourceItem, image_index: usize) -> Result<SemanticLatent> {
        match self.cfg.mode {
            SimulationMode::LatentOnly => item.latent.power_normalized(),
            SimulationMode::FullInversion => {
                let generator = self.generator().expect("validated");
                let image = item
                    .image
                    .as_ref()
                    .ok_or_else(|| Error::Config(vec!["source: full_inversion needs images".into()]))?;
                let mut inv = self.cfg.inversion.clone();
                inv.snr_db = self.cfg.channel.snr_db;
                let seed = rand::RngCore::next_u64(&mut rng::stream_rng(self.inversion_seed, image_index as u64));
                Ok(inversion::invert(generator, image, &inv, seed)?.latent)
            }
        }
    }

    pub fn transmit_image(&mut self, item: &SourceItem) -> Result<(Option<Image>, TransmissionRecord)> {
        self.transmit_image_with(item, |_| {})
    }

    /// Like [`transmit_image`](Self::transmit_image), with `tamper` applied to
    /// the index frame in flight.
    pub fn transmit_image_with(
        &mut self,
        item: &SourceItem,
        tamper: impl FnOnce(&mut IndexFrame),
    ) -> Result<(Option<Image>, TransmissionRecord)> {
        let image_index = self.link.transmissions as usize;
        let d = self.cfg.dims.clone();
        let z = self.semantic_latent(item, image_index)?;

        let mut plan = semcache::plan_transmission(&z, &self.link.tx, &self.thresholds)?;
        let (payload, scale) = power_normalize(&plan.payload())?;
        // The transmitter keeps exactly what a noiseless receiver would recover.
        for (_, v) in plan.kept.iter_mut() {
            for x in v.iter_mut() {
                *x = (*x * scale) / scale;
            }
        }
        semcache::tx_update(&mut self.link.tx, &plan)?;

        let block = pack_real_to_complex(&payload)?;
        let received = if block.is_empty() {
            block
        } else {
            channel::transmit(&block, &self.channel, self.link.transmissions)
        };

        let n_hits = plan.hits.len();
        let index_symbols = match self.cfg.side_channel.cost_mode {
            IndexCostMode::Expected => accounting::index_cost_symbols(n_hits, d.n_slots, d.cache_size, &self.cfg.side_channel),
            IndexCostMode::Sampled => accounting::sampled_index_cost_symbols(
                n_hits,
                d.n_slots,
                d.cache_size,
                &self.cfg.side_channel,
                &mut rng::stream_rng(self.index_seed, self.link.transmissions),
            ),
        };
        let mut frame = IndexFrame::seal(plan.index_refs());
        tamper(&mut frame);

        let refs = frame.open()?.to_vec();
        let values: Vec<f64> = unpack_complex_to_real(&received).into_iter().map(|x| x / scale).collect();
        let vectors: Vec<Vec<f64>> = values.chunks_exact(d.slot_len).map(<[f64]>::to_vec).collect();
        let z_hat = semcache::rx_reconstruct(&vectors, &refs, &mut self.link.rx)?;

        let x_hat = self.generator().map(|g| g.forward(&z_hat)).transpose()?;
        let (psnr_db, perceptual_distance) = match (&item.image, &x_hat) {
            (Some(x), Some(y)) => (
                Some(accounting::psnr(x, y)?),
                Some(accounting::perceptual_distance(&self.features, x, y)?),
            ),
            _ => (None, None),
        };
        let payload_symbols = accounting::payload_symbols(plan.n_s(), d.slot_len);
        let k_total = payload_symbols as f64 + index_symbols;
        let record = TransmissionRecord {
            image_index,
            snr_db: self.cfg.channel.snr_db,
            n_s: plan.n_s(),
            payload_symbols,
            index_symbols,
            k_total,
            bcr: accounting::bcr(k_total, d.image()),
            psnr_db,
            perceptual_distance,
            hits: plan.hits,
        };
        self.link.transmissions += 1;
        Ok((x_hat, record))
    }
}

/// Runs the configured sequence from cold (or loaded) caches.
pub fn run_sequence(cfg: &SimulationConfig) -> Result<SimulationOutput> {
    let mut sim = Simulator::new(cfg.clone())?;
    let items = sim.source_items()?;
    let mut records = Vec::with_capacity(items.len());
    for item in &items {
        records.push(sim.transmit_image(item)?.1);
    }
    let summary = Summary::from_records(&records);
    Ok(SimulationOutput { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GeneratorChoice;
    use crate::semcache::Threshold;

    #[test]
    fn moving_average_hand_computed() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(moving_average(&v, 1), v.to_vec());
        assert_eq!(moving_average(&v, 2), vec![1.0, 1.5, 2.5, 3.5, 4.5]);
        assert_eq!(moving_average(&v, 3), vec![1.0, 1.5, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn source_edge_cases() {
        let dims = LatentDims::new(3, 4);
        let same = SyntheticSourceSpec {
            prototypes_per_slot: 1,
            reuse_prob: 1.0,
            perturbation_std: 0.0,
        };
        let seq = generate_source_sequence(&same, dims, 5, 1, None).unwrap();
        assert!(seq.latents.windows(2).all(|w| w[0] == w[1]));

        let fresh = SyntheticSourceSpec {
            reuse_prob: 0.0,
            ..same
        };
        let seq = generate_source_sequence(&fresh, dims, 5, 1, None).unwrap();
        assert!(seq.reused.iter().flatten().all(|r| !r));
        assert!(seq.latents.windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn reuse_fraction_converges() {
        let spec = SyntheticSourceSpec {
            prototypes_per_slot: 4,
            reuse_prob: 0.7,
            perturbation_std: 0.01,
        };
        let seq = generate_source_sequence(&spec, LatentDims::new(1, 2), 1000, 9, None).unwrap();
        let frac = seq.reused.iter().flatten().filter(|r| **r).count() as f64 / 1000.0;
        assert!((frac - 0.7).abs() < 0.05, "{frac}");
    }

    #[test]
    fn single_image_summary_matches_record() {
        let cfg = SimulationConfig {
            num_images: 1,
            ..SimulationConfig::desk()
        };
        let out = run_sequence(&cfg).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.summary.mean_bcr, out.records[0].bcr);
        assert_eq!(out.records[0].n_s, 8);
        assert_eq!(out.records[0].index_symbols, 0.0);
    }

    #[test]
    fn accounting_only_run_has_no_quality_metrics() {
        let mut cfg = SimulationConfig::full_scale();
        cfg.num_images = 2;
        cfg.generator.kind = GeneratorChoice::None;
        let out = run_sequence(&cfg).unwrap();
        assert_eq!(out.records[0].bcr, 7168.0 / 786432.0);
        assert!(out.records[0].psnr_db.is_none());
        assert!(out.summary.mean_psnr_db.is_none());
    }

    #[test]
    fn disabled_caching_keeps_bcr_constant() {
        let cfg = SimulationConfig {
            num_images: 20,
            thresholds: crate::config::ThresholdSpec::Uniform(Threshold::NEVER),
            ..SimulationConfig::desk()
        };
        let out = run_sequence(&cfg).unwrap();
        assert!(out.records.iter().all(|r| r.bcr == out.records[0].bcr));
    }
}
