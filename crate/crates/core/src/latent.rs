//! Latent-variable containers, power normalization and real/complex packing.
//!
//! A transmit block of `2k` reals is carried by `k` complex channel uses.
//! Power normalization scales a block so that the packed symbols have unit
//! average power, `(1/k) Σ |s|² = 1`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of colour channels in every [`Image`].
pub const IMAGE_CHANNELS: usize = 3;

/// The `n_slots × slot_len` matrix of semantic vectors extracted from one image.
///
/// Row `i` is the semantic vector for slot `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticLatent {
    n_slots: usize,
    slot_len: usize,
    data: Vec<f64>,
}

impl SemanticLatent {
    pub fn new(n_slots: usize, slot_len: usize, data: Vec<f64>) -> Result<Self> {
        if n_slots == 0 || slot_len == 0 {
            return Err(Error::shape("latent", "positive dims", format!("{n_slots}x{slot_len}")));
        }
        if data.len() != n_slots * slot_len {
            return Err(Error::shape("latent", n_slots * slot_len, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLatent);
        }
        Ok(Self {
            n_slots,
            slot_len,
            data,
        })
    }

    pub fn zeros(n_slots: usize, slot_len: usize) -> Self {
        Self {
            n_slots,
            slot_len,
            data: vec![0.0; n_slots * slot_len],
        }
    }

    /// Builds a latent from its rows; all rows must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let slot_len = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * slot_len);
        for row in rows {
            let row = row.as_ref();
            if row.len() != slot_len {
                return Err(Error::LengthMismatch {
                    left: slot_len,
                    right: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), slot_len, data)
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn slot_len(&self) -> usize {
        self.slot_len
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.slot_len..(i + 1) * self.slot_len]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.slot_len)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// The same latent after whole-block power normalization.
    pub fn power_normalized(&self) -> Result<Self> {
        let (data, _) = power_normalize(&self.data)?;
        Self::new(self.n_slots, self.slot_len, data)
    }
}

/// Spatial size of an image; the channel count is always [`IMAGE_CHANNELS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDims {
    pub height: usize,
    pub width: usize,
}

impl ImageDims {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    /// `3 · height · width`, the source dimension used by the bandwidth ratio.
    pub fn num_values(&self) -> usize {
        IMAGE_CHANNELS * self.height * self.width
    }
}

/// An RGB image stored channel-major (`c, h, w`) with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    dims: ImageDims,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(dims: ImageDims, pixels: Vec<f64>) -> Result<Self> {
        if dims.height == 0 || dims.width == 0 {
            return Err(Error::shape("image", "positive dims", format!("{}x{}", dims.height, dims.width)));
        }
        if pixels.len() != dims.num_values() {
            return Err(Error::shape("image", dims.num_values(), pixels.len()));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::format("pixels", "pixel outside [0, 1]"));
        }
        Ok(Self { dims, pixels })
    }

    /// Clamps arbitrary generator output into a valid image. NaN maps to 0.
    pub fn from_clamped(dims: ImageDims, raw: &[f64]) -> Result<Self> {
        let pixels = raw
            .iter()
            .map(|&p| if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) })
            .collect();
        Self::new(dims, pixels)
    }

    pub fn filled(dims: ImageDims, value: f64) -> Result<Self> {
        Self::new(dims, vec![value; dims.num_values()])
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.dims.height * self.dims.width;
        &self.pixels[c * plane..(c + 1) * plane]
    }
}

/// A block of complex channel symbols.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComplexBlock {
    symbols: Vec<Complex64>,
}

impl ComplexBlock {
    pub fn new(symbols: Vec<Complex64>) -> Self {
        Self { symbols }
    }

    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }

    pub fn symbols_mut(&mut self) -> &mut [Complex64] {
        &mut self.symbols
    }

    /// Number of complex channel uses `k`.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// `(1/k) Σ |s|²`, or 0 for an empty block.
    pub fn average_power(&self) -> f64 {
        if self.symbols.is_empty() {
            return 0.0;
        }
        self.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.symbols.len() as f64
    }
}

/// Scales `v` so that the block packed from it has unit average complex power.
///
/// Returns the scaled vector and the applied scale `sqrt((len/2) / Σ v²)`.
/// An all-zero vector is returned unchanged with scale 1.
pub fn power_normalize(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteLatent);
    }
    let energy: f64 = v.iter().map(|x| x * x).sum();
    if energy == 0.0 {
        return Ok((v.to_vec(), 1.0));
    }
    let scale = (v.len() as f64 / 2.0 / energy).sqrt();
    Ok((v.iter().map(|x| x * scale).collect(), scale))
}

/// Interleaved packing: symbol `m` is `v[2m] + i·v[2m+1]`.
pub fn pack_real_to_complex(v: &[f64]) -> Result<ComplexBlock> {
    if v.len() % 2 != 0 {
        return Err(Error::OddSymbolCount { len: v.len() });
    }
    Ok(ComplexBlock::new(
        v.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect(),
    ))
}

/// Exact inverse of [`pack_real_to_complex`].
pub fn unpack_complex_to_real(block: &ComplexBlock) -> Vec<f64> {
    block.symbols.iter().flat_map(|s| [s.re, s.im]).collect()
}
