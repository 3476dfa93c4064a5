//! Bandwidth and quality accounting.
//!
//! Channel uses per image are `k = payload + index`, where the payload is
//! `n_s · slot_len / 2` complex symbols and each cache index costs
//! `B / (code_rate · bits_per_symbol · p)` expected channel uses with
//! `B = ⌈log₂ n_slots⌉ + ⌈log₂ capacity⌉` bits and `p` the per-block success
//! probability of the retransmitted digital link. The bandwidth compression
//! ratio is `k / (3 · H · W)`.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::FeatureExtractor;
use crate::latent::{Image, ImageDims};
use crate::semcache::CacheHit;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndexCostMode {
    /// Expected channel uses, `1/p` transmissions per index.
    #[default]
    Expected,
    /// Draw a geometric number of transmissions per index.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SideChannelModel {
    pub code_rate: f64,
    pub bits_per_symbol: u32,
    pub success_prob: f64,
    pub cost_mode: IndexCostMode,
}

impl Default for SideChannelModel {
    fn default() -> Self {
        Self {
            code_rate: 0.5,
            bits_per_symbol: 1,
            success_prob: 0.9,
            cost_mode: IndexCostMode::Expected,
        }
    }
}

impl SideChannelModel {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.code_rate > 0.0 && self.code_rate <= 1.0) {
            out.push(format!("{prefix}code_rate: must be in (0, 1]"));
        }
        if self.bits_per_symbol == 0 {
            out.push(format!("{prefix}bits_per_symbol: must be >= 1"));
        }
        if !(self.success_prob > 0.0 && self.success_prob <= 1.0) {
            out.push(format!("{prefix}success_prob: must be in (0, 1]"));
        }
        out
    }

    /// Channel uses for one delivery attempt of one index.
    pub fn symbols_per_attempt(&self, bits: u32) -> f64 {
        bits as f64 / (self.code_rate * self.bits_per_symbol as f64)
    }
}

/// `⌈log₂ n⌉`, with 0 for `n <= 1`.
pub fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Bits per cache index: `⌈log₂ n_slots⌉ + ⌈log₂ capacity⌉`.
pub fn index_bits(n_slots: usize, capacity: usize) -> u32 {
    ceil_log2(n_slots) + ceil_log2(capacity)
}

/// Expected channel uses to deliver `n_hits` indices.
pub fn index_cost_symbols(n_hits: usize, n_slots: usize, capacity: usize, sc: &SideChannelModel) -> f64 {
    n_hits as f64 * sc.symbols_per_attempt(index_bits(n_slots, capacity)) / sc.success_prob
}

/// One realization of the index cost: each index is resent until it gets through.
pub fn sampled_index_cost_symbols<R: Rng + ?Sized>(
    n_hits: usize,
    n_slots: usize,
    capacity: usize,
    sc: &SideChannelModel,
    rng: &mut R,
) -> f64 {
    let per_attempt = sc.symbols_per_attempt(index_bits(n_slots, capacity));
    let mut attempts = 0u64;
    for _ in 0..n_hits {
        loop {
            attempts += 1;
            if rng.random::<f64>() < sc.success_prob {
                break;
            }
        }
    }
    attempts as f64 * per_attempt
}

/// Complex channel uses for `n_s` vectors of `slot_len` reals.
pub fn payload_symbols(n_s: usize, slot_len: usize) -> usize {
    n_s * slot_len / 2
}

pub fn bcr(k_total: f64, image: ImageDims) -> f64 {
    k_total / image.num_values() as f64
}

fn check_dims(x: &Image, y: &Image) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::shape("image", format!("{:?}", x.dims()), format!("{:?}", y.dims())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio on the 0–255 scale, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &Image, y: &Image) -> Result<f64> {
    check_dims(x, y)?;
    let n = x.pixels().len() as f64;
    let mse = x
        .pixels()
        .iter()
        .zip(y.pixels())
        .map(|(a, b)| ((a - b) * 255.0).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB))
}

pub fn perceptual_distance(fe: &FeatureExtractor, x: &Image, y: &Image) -> Result<f64> {
    check_dims(x, y)?;
    Ok(fe.distance_from_features(&fe.extract(x), &fe.extract(y)))
}

/// Per-image accounting produced by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionRecord {
    pub image_index: usize,
    pub snr_db: f64,
    pub n_s: usize,
    pub payload_symbols: usize,
    pub index_symbols: f64,
    pub k_total: f64,
    pub bcr: f64,
    pub psnr_db: Option<f64>,
    pub perceptual_distance: Option<f64>,
    pub hits: Vec<CacheHit>,
}

impl TransmissionRecord {
    pub fn n_hits(&self) -> usize {
        self.hits.len()
    }
}

/// Flat CSV row for a [`TransmissionRecord`]; `hits` is `slot:index:sim` joined by `;`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub image_index: usize,
    pub snr_db: f64,
    pub n_s: usize,
    pub n_hits: usize,
    pub payload_symbols: usize,
    pub index_symbols: f64,
    pub k_total: f64,
    pub bcr: f64,
    pub psnr_db: Option<f64>,
    pub perceptual_distance: Option<f64>,
    pub hits: String,
}

pub const RECORD_COLUMNS: [&str; 11] = [
    "image_index",
    "snr_db",
    "n_s",
    "n_hits",
    "payload_symbols",
    "index_symbols",
    "k_total",
    "bcr",
    "psnr_db",
    "perceptual_distance",
    "hits",
];

impl From<&TransmissionRecord> for RecordRow {
    fn from(r: &TransmissionRecord) -> Self {
        let hits = r
            .hits
            .iter()
            .map(|h| format!("{}:{}:{}", h.slot, h.index, h.similarity))
            .collect::<Vec<_>>()
            .join(";");
        Self {
            image_index: r.image_index,
            snr_db: r.snr_db,
            n_s: r.n_s,
            n_hits: r.hits.len(),
            payload_symbols: r.payload_symbols,
            index_symbols: r.index_symbols,
            k_total: r.k_total,
            bcr: r.bcr,
            psnr_db: r.psnr_db,
            perceptual_distance: r.perceptual_distance,
            hits,
        }
    }
}

pub fn write_records_csv(path: &Path, records: &[TransmissionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(RECORD_COLUMNS)?;
    }
    for r in records {
        w.serialize(RecordRow::from(r))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_records_jsonl(path: &Path, records: &[TransmissionRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a records CSV, rejecting files whose header lacks a required column.
pub fn read_records_csv(path: &Path) -> Result<Vec<RecordRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    for col in RECORD_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::format(col, format!("column missing from {}", path.display())));
        }
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
