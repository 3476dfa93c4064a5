//! Latent sequence datasets: TOML manifest + `f32le` binary.
//!
//! The binary holds `count` latents (each `n_slots × slot_len`, row-major),
//! optionally followed by `count` images (each `3 × height × width`,
//! channel-major). Values are stored at `f32` precision.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{self, Dtype};
use crate::latent::{Image, ImageDims, SemanticLatent, IMAGE_CHANNELS};

pub const DATASET_FORMAT: &str = "semlink-dataset";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub latents: Vec<SemanticLatent>,
    pub images: Option<Vec<Image>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    format: String,
    version: u32,
    dtype: Dtype,
    count: usize,
    n_slots: usize,
    slot_len: usize,
    has_images: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_width: Option<usize>,
    values: usize,
    binary: String,
    checksum: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    /// Copy with every value rounded to `f32`, i.e. what a save/load cycle yields.
    pub fn at_storage_precision(&self) -> Result<Self> {
        let latents = self
            .latents
            .iter()
            .map(|z| {
                SemanticLatent::new(
                    z.n_slots(),
                    z.slot_len(),
                    z.as_slice().iter().map(|&v| format::to_f32_precision(v)).collect(),
                )
            })
            .collect::<Result<_>>()?;
        let images = self
            .images
            .as_ref()
            .map(|imgs| {
                imgs.iter()
                    .map(|im| {
                        Image::new(
                            im.dims(),
                            im.pixels().iter().map(|&v| format::to_f32_precision(v)).collect(),
                        )
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        Ok(Self { latents, images })
    }
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let first = data
        .latents
        .first()
        .ok_or_else(|| Error::format("count", "dataset is empty"))?;
    let (n_slots, slot_len) = (first.n_slots(), first.slot_len());
    if slot_len % 2 != 0 {
        return Err(Error::format("slot_len", format!("must be even, got {slot_len}")));
    }
    if data.latents.iter().any(|z| z.n_slots() != n_slots || z.slot_len() != slot_len) {
        return Err(Error::format("latents", "latents differ in shape"));
    }
    let mut values: Vec<f64> = data.latents.iter().flat_map(|z| z.as_slice().iter().copied()).collect();
    let mut image_dims = None;
    if let Some(images) = &data.images {
        if images.len() != data.latents.len() {
            return Err(Error::format("images", "one image per latent required"));
        }
        let dims = images[0].dims();
        if images.iter().any(|im| im.dims() != dims) {
            return Err(Error::format("images", "images differ in shape"));
        }
        image_dims = Some(dims);
        values.extend(images.iter().flat_map(|im| im.pixels().iter().copied()));
    }
    let bytes = format::encode(&values, Dtype::F32Le);
    let binary = format::companion_path(path);
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: 1,
        dtype: Dtype::F32Le,
        count: data.latents.len(),
        n_slots,
        slot_len,
        has_images: image_dims.is_some(),
        image_channels: image_dims.map(|_| IMAGE_CHANNELS),
        image_height: image_dims.map(|d| d.height),
        image_width: image_dims.map(|d| d.width),
        values: values.len(),
        binary: format::file_name(&binary),
        checksum: format::checksum(&bytes),
    };
    format::write_bytes(&binary, &bytes)?;
    format::write_manifest(path, &manifest)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let m: DatasetManifest = format::read_manifest(path)?;
    if m.format != DATASET_FORMAT {
        return Err(Error::format("format", format!("expected {DATASET_FORMAT}, got {}", m.format)));
    }
    if m.version != 1 {
        return Err(Error::format("version", format!("unsupported version {}", m.version)));
    }
    if m.count == 0 {
        return Err(Error::format("count", "must be >= 1"));
    }
    if m.n_slots == 0 {
        return Err(Error::format("n_slots", "must be >= 1"));
    }
    if m.slot_len == 0 || m.slot_len % 2 != 0 {
        return Err(Error::format("slot_len", format!("must be positive and even, got {}", m.slot_len)));
    }
    let image_dims = if m.has_images {
        let channels = m.image_channels.ok_or_else(|| Error::format("image_channels", "missing"))?;
        if channels != IMAGE_CHANNELS {
            return Err(Error::format("image_channels", format!("must be {IMAGE_CHANNELS}")));
        }
        let h = m.image_height.filter(|&h| h > 0).ok_or_else(|| Error::format("image_height", "missing or zero"))?;
        let w = m.image_width.filter(|&w| w > 0).ok_or_else(|| Error::format("image_width", "missing or zero"))?;
        Some(ImageDims::new(h, w))
    } else {
        None
    };
    let latent_values = m.count * m.n_slots * m.slot_len;
    let image_values = image_dims.map_or(0, |d| m.count * d.num_values());
    if m.values != latent_values + image_values {
        return Err(Error::format(
            "values",
            format!("shape implies {}, manifest says {}", latent_values + image_values, m.values),
        ));
    }
    let binary = format::resolve_binary(path, &m.binary);
    let values = format::read_values(&binary, m.dtype, m.values, &m.checksum)?;
    let (latent_part, image_part) = values.split_at(latent_values);
    let latents = latent_part
        .chunks_exact(m.n_slots * m.slot_len)
        .map(|c| SemanticLatent::new(m.n_slots, m.slot_len, c.to_vec()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::format("latents", e.to_string()))?;
    let images = image_dims
        .map(|d| {
            image_part
                .chunks_exact(d.num_values())
                .map(|c| Image::new(d, c.to_vec()))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::format("images", e.to_string()))
        })
        .transpose()?;
    Ok(Dataset { latents, images })
}
