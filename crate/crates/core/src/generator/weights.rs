//! Generator weight files: TOML manifest plus `f32le` parameters, layer by
//! layer, each layer's row-major weights followed by its bias.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DenseLayer, GeneratorKind, GeneratorModel, LatentDims};
use crate::error::{Error, Result};
use crate::format::{self, Dtype};
use crate::latent::ImageDims;

pub const WEIGHTS_FORMAT: &str = "semlink-generator";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsManifest {
    format: String,
    version: u32,
    kind: GeneratorKind,
    n_slots: usize,
    slot_len: usize,
    image_height: usize,
    image_width: usize,
    hidden: Vec<usize>,
    dtype: Dtype,
    values: usize,
    binary: String,
    checksum: String,
}

impl GeneratorModel {
    /// Writes `<path>` (manifest) and `<path stem>.bin`.
    ///
    /// Parameters are stored as `f32`; seeded models are already `f32`-exact.
    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        let values: Vec<f64> = self
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect();
        let bytes = format::encode(&values, Dtype::F32Le);
        let binary = format::companion_path(manifest_path);
        let manifest = WeightsManifest {
            format: WEIGHTS_FORMAT.to_string(),
            version: 1,
            kind: self.kind,
            n_slots: self.latent.n_slots,
            slot_len: self.latent.slot_len,
            image_height: self.image.height,
            image_width: self.image.width,
            hidden: self.hidden_widths(),
            dtype: Dtype::F32Le,
            values: values.len(),
            binary: format::file_name(&binary),
            checksum: format::checksum(&bytes),
        };
        format::write_bytes(&binary, &bytes)?;
        format::write_manifest(manifest_path, &manifest)
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let m: WeightsManifest = format::read_manifest(manifest_path)?;
        if m.format != WEIGHTS_FORMAT {
            return Err(Error::format("format", format!("expected {WEIGHTS_FORMAT}, got {}", m.format)));
        }
        if m.kind == GeneratorKind::Linear && !m.hidden.is_empty() {
            return Err(Error::format("hidden", "linear generators have no hidden layers"));
        }
        let latent = LatentDims::new(m.n_slots, m.slot_len);
        let image = ImageDims::new(m.image_height, m.image_width);
        let mut widths = vec![latent.num_values()];
        widths.extend_from_slice(&m.hidden);
        widths.push(image.num_values());
        let expected: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if expected != m.values {
            return Err(Error::format("values", format!("layer spec implies {expected}, manifest says {}", m.values)));
        }
        let binary = format::resolve_binary(manifest_path, &m.binary);
        let values = format::read_values(&binary, m.dtype, m.values, &m.checksum)?;
        let mut offset = 0;
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let (inputs, outputs) = (w[0], w[1]);
            let weights = values[offset..offset + inputs * outputs].to_vec();
            offset += inputs * outputs;
            let bias = values[offset..offset + outputs].to_vec();
            offset += outputs;
            layers.push(DenseLayer::new(inputs, outputs, weights, bias)?);
        }
        GeneratorModel::new(m.kind, latent, image, layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for model in [
            GeneratorModel::seeded_linear(LatentDims::new(2, 4), ImageDims::new(3, 2), 1),
            GeneratorModel::seeded_mlp(LatentDims::new(2, 4), ImageDims::new(3, 2), &[5, 7], 2),
        ] {
            let path = dir.path().join(format!("{:?}.toml", model.kind()));
            model.save(&path).unwrap();
            assert_eq!(GeneratorModel::load(&path).unwrap(), model);
        }
    }

    #[test]
    fn corrupted_weights_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.toml");
        GeneratorModel::seeded_linear(LatentDims::new(1, 2), ImageDims::new(1, 1), 1)
            .save(&path)
            .unwrap();
        let bin = dir.path().join("g.bin");
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&bin, &bytes).unwrap();
        match GeneratorModel::load(&path) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "checksum"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
