use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{Image, ImageDims, IMAGE_CHANNELS};

/// Features per spatial position: pooled value, horizontal and vertical
/// first differences, for each colour channel.
const FEATURES_PER_CHANNEL: usize = 3;

/// One layer of features, laid out `(h, w, feature)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub features: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn at(&self, h: usize, w: usize) -> &[f64] {
        let start = (h * self.width + w) * self.features;
        &self.data[start..start + self.features]
    }
}

/// Fixed multi-scale filter bank used as a perceptual feature extractor.
///
/// Layer `l` average-pools the image by `scales[l]` and emits, per channel,
/// the pooled value plus forward differences along width and height (zero on
/// the last column/row). Trailing rows/columns that do not fill a full pooling
/// window are dropped; scales larger than the image yield an empty layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    scales: Vec<usize>,
    weights: Vec<f64>,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self {
            scales: vec![1, 2, 4],
            weights: vec![1.0; 3],
        }
    }
}

impl FeatureExtractor {
    pub fn new(scales: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if scales.len() != weights.len() {
            return Err(Error::LengthMismatch {
                left: scales.len(),
                right: weights.len(),
            });
        }
        if scales.contains(&0) {
            return Err(Error::format("scales", "pooling factor must be positive"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::format("per_layer_weights", "need all >= 0 and at least one > 0"));
        }
        Ok(Self { scales, weights })
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Same extractor with every layer weight multiplied by `factor`.
    pub fn with_scaled_weights(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.scales.clone(),
            self.weights.iter().map(|w| w * factor).collect(),
        )
    }

    pub fn extract(&self, img: &Image) -> Vec<FeatureMap> {
        self.extract_raw(img.dims(), img.pixels())
    }

    /// Extraction on raw channel-major pixels (values need not lie in `[0, 1]`).
    pub fn extract_raw(&self, dims: ImageDims, pixels: &[f64]) -> Vec<FeatureMap> {
        self.scales
            .iter()
            .map(|&s| extract_layer(dims, pixels, s))
            .collect()
    }

    /// Layer-weighted, spatially normalized squared feature distance.
    pub fn distance_from_features(&self, a: &[FeatureMap], b: &[FeatureMap]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .filter(|(_, (fa, _))| fa.height * fa.width > 0)
            .map(|(w, (fa, fb))| {
                let sq: f64 = fa
                    .data
                    .iter()
                    .zip(&fb.data)
                    .map(|(x, y)| (w * (x - y)).powi(2))
                    .sum();
                sq / (fa.height * fa.width) as f64
            })
            .sum()
    }

    pub fn distance_raw(&self, dims: ImageDims, a: &[f64], b: &[f64]) -> f64 {
        self.distance_from_features(&self.extract_raw(dims, a), &self.extract_raw(dims, b))
    }

    /// Distance between `a` and `b` and its gradient with respect to `a`.
    pub fn distance_and_grad(&self, dims: ImageDims, a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; a.len()];
        let mut total = 0.0;
        for (&scale, &w) in self.scales.iter().zip(&self.weights) {
            let fa = extract_layer(dims, a, scale);
            let fb = extract_layer(dims, b, scale);
            let positions = fa.height * fa.width;
            if positions == 0 {
                continue;
            }
            let norm = w * w / positions as f64;
            let diff: Vec<f64> = fa.data.iter().zip(&fb.data).map(|(x, y)| x - y).collect();
            total += norm * diff.iter().map(|d| d * d).sum::<f64>();
            let upstream = FeatureMap {
                height: fa.height,
                width: fa.width,
                features: fa.features,
                data: diff.iter().map(|d| 2.0 * norm * d).collect(),
            };
            layer_adjoint(dims, scale, &upstream, &mut grad);
        }
        (total, grad)
    }
}

fn extract_layer(dims: ImageDims, pixels: &[f64], scale: usize) -> FeatureMap {
    let (hs, ws) = (dims.height / scale, dims.width / scale);
    let features = IMAGE_CHANNELS * FEATURES_PER_CHANNEL;
    let mut data = vec![0.0; hs * ws * features];
    let plane = dims.height * dims.width;
    let inv_area = 1.0 / (scale * scale) as f64;
    for c in 0..IMAGE_CHANNELS {
        let src = &pixels[c * plane..(c + 1) * plane];
        let mut pooled = vec![0.0; hs * ws];
        for h in 0..hs {
            for w in 0..ws {
                let mut acc = 0.0;
                for dh in 0..scale {
                    let row = (h * scale + dh) * dims.width;
                    for dw in 0..scale {
                        acc += src[row + w * scale + dw];
                    }
                }
                pooled[h * ws + w] = acc * inv_area;
            }
        }
        for h in 0..hs {
            for w in 0..ws {
                let p = pooled[h * ws + w];
                let dx = if w + 1 < ws { pooled[h * ws + w + 1] - p } else { 0.0 };
                let dy = if h + 1 < hs { pooled[(h + 1) * ws + w] - p } else { 0.0 };
                let base = (h * ws + w) * features + c * FEATURES_PER_CHANNEL;
                data[base] = p;
                data[base + 1] = dx;
                data[base + 2] = dy;
            }
        }
    }
    FeatureMap {
        height: hs,
        width: ws,
        features,
        data,
    }
}

/// Accumulates the adjoint of [`extract_layer`] applied to `upstream` into `grad`.
fn layer_adjoint(dims: ImageDims, scale: usize, upstream: &FeatureMap, grad: &mut [f64]) {
    let (hs, ws) = (upstream.height, upstream.width);
    let plane = dims.height * dims.width;
    let inv_area = 1.0 / (scale * scale) as f64;
    for c in 0..IMAGE_CHANNELS {
        let mut pooled_grad = vec![0.0; hs * ws];
        for h in 0..hs {
            for w in 0..ws {
                let base = (h * ws + w) * upstream.features + c * FEATURES_PER_CHANNEL;
                let (gp, gx, gy) = (upstream.data[base], upstream.data[base + 1], upstream.data[base + 2]);
                pooled_grad[h * ws + w] += gp;
                if w + 1 < ws {
                    pooled_grad[h * ws + w + 1] += gx;
                    pooled_grad[h * ws + w] -= gx;
                }
                if h + 1 < hs {
                    pooled_grad[(h + 1) * ws + w] += gy;
                    pooled_grad[h * ws + w] -= gy;
                }
            }
        }
        let dst = &mut grad[c * plane..(c + 1) * plane];
        for h in 0..hs {
            for w in 0..ws {
                let g = pooled_grad[h * ws + w] * inv_area;
                for dh in 0..scale {
                    let row = (h * scale + dh) * dims.width;
                    for dw in 0..scale {
                        dst[row + w * scale + dw] += g;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_image_has_zero_differences() {
        let img = Image::filled(ImageDims::new(4, 4), 0.3).unwrap();
        for map in FeatureExtractor::default().extract(&img) {
            for h in 0..map.height {
                for w in 0..map.width {
                    let f = map.at(h, w);
                    for c in 0..IMAGE_CHANNELS {
                        assert_eq!(f[c * 3 + 1], 0.0);
                        assert_eq!(f[c * 3 + 2], 0.0);
                        assert_abs_diff_eq!(f[c * 3], 0.3, epsilon = 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn checkerboard_pools_to_half() {
        let dims = ImageDims::new(4, 4);
        let pixels: Vec<f64> = (0..3 * 16)
            .map(|i| {
                let (h, w) = ((i % 16) / 4, i % 4);
                ((h + w) % 2) as f64
            })
            .collect();
        let img = Image::new(dims, pixels).unwrap();
        let fe = FeatureExtractor::new(vec![2], vec![1.0]).unwrap();
        let map = &fe.extract(&img)[0];
        assert_eq!((map.height, map.width), (2, 2));
        for h in 0..2 {
            for w in 0..2 {
                for c in 0..IMAGE_CHANNELS {
                    assert_eq!(map.at(h, w)[c * 3], 0.5);
                }
            }
        }
    }

    #[test]
    fn oversized_scale_gives_empty_layer() {
        let img = Image::filled(ImageDims::new(2, 2), 0.5).unwrap();
        let maps = FeatureExtractor::default().extract(&img);
        assert_eq!(maps[2].height * maps[2].width, 0);
        assert_eq!(FeatureExtractor::default().distance_from_features(&maps, &maps), 0.0);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(FeatureExtractor::new(vec![1], vec![0.0]).is_err());
        assert!(FeatureExtractor::new(vec![1, 2], vec![1.0]).is_err());
        assert!(FeatureExtractor::new(vec![0], vec![1.0]).is_err());
        assert!(FeatureExtractor::new(vec![1], vec![-1.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let dims = ImageDims::new(5, 6);
        let n = dims.num_values();
        let a: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64) / 11.0).collect();
        let b: Vec<f64> = (0..n).map(|i| ((i * 17 % 7) as f64) / 7.0).collect();
        let fe = FeatureExtractor::new(vec![1, 2, 4], vec![1.0, 0.5, 2.0]).unwrap();
        let (d, grad) = fe.distance_and_grad(dims, &a, &b);
        assert_abs_diff_eq!(d, fe.distance_raw(dims, &a, &b), epsilon = 1e-12);
        let h = 1e-5;
        for i in (0..n).step_by(7) {
            let mut ap = a.clone();
            ap[i] += h;
            let mut am = a.clone();
            am[i] -= h;
            let fd = (fe.distance_raw(dims, &ap, &b) - fe.distance_raw(dims, &am, &b)) / (2.0 * h);
            assert_abs_diff_eq!(grad[i], fd, epsilon = 1e-7);
        }
    }
}
