//! Differentiable generators mapping a semantic latent to an image.
//!
//! Two kinds are built in. `Linear` is a single affine map whose output is
//! left unsquashed (so least-squares inversion has a closed form); images are
//! clamped to `[0, 1]` only when exported through [`GeneratorModel::forward`].
//! `Mlp` uses `tanh` hidden layers and a logistic output layer.

mod features;
mod weights;

pub use features::{FeatureExtractor, FeatureMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::to_f32_precision;
use crate::latent::{Image, ImageDims, SemanticLatent};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentDims {
    pub n_slots: usize,
    pub slot_len: usize,
}

impl LatentDims {
    pub fn new(n_slots: usize, slot_len: usize) -> Self {
        Self { n_slots, slot_len }
    }

    pub fn num_values(&self) -> usize {
        self.n_slots * self.slot_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Linear,
    Mlp,
}

/// Fully connected layer, `out = W·in + b` with `W` row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs {
            return Err(Error::shape("layer weights", inputs * outputs, weights.len()));
        }
        if bias.len() != outputs {
            return Err(Error::shape("layer bias", outputs, bias.len()));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "generator parameters",
            });
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    /// Uniform `[-a, a]` weights with `a = sqrt(6 / (fan_in + fan_out))`, rounded
    /// to `f32` precision so they survive the weight file bit-exactly.
    fn seeded<R: Rng>(inputs: usize, outputs: usize, bias: f64, rng: &mut R) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| to_f32_precision(rng.random_range(-a..=a)))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![to_f32_precision(bias); outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    /// `Wᵀ·g`
    fn apply_transpose(&self, grad: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs];
        for (row, g) in self.weights.chunks_exact(self.inputs).zip(grad) {
            if *g == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * g;
            }
        }
        out
    }
}

/// Immutable generator `G`. Safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    kind: GeneratorKind,
    latent: LatentDims,
    image: ImageDims,
    layers: Vec<DenseLayer>,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GeneratorModel {
    pub fn linear(latent: LatentDims, image: ImageDims, layer: DenseLayer) -> Result<Self> {
        Self::new(GeneratorKind::Linear, latent, image, vec![layer])
    }

    pub fn mlp(latent: LatentDims, image: ImageDims, layers: Vec<DenseLayer>) -> Result<Self> {
        Self::new(GeneratorKind::Mlp, latent, image, layers)
    }

    pub fn new(kind: GeneratorKind, latent: LatentDims, image: ImageDims, layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("generator layers", "at least one", 0));
        }
        if kind == GeneratorKind::Linear && layers.len() != 1 {
            return Err(Error::shape("linear generator layers", 1, layers.len()));
        }
        if layers[0].inputs != latent.num_values() {
            return Err(Error::shape("generator input", latent.num_values(), layers[0].inputs));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::shape("hidden layer width", pair[0].outputs, pair[1].inputs));
            }
        }
        let last = layers.last().unwrap();
        if last.outputs != image.num_values() {
            return Err(Error::shape("generator output", image.num_values(), last.outputs));
        }
        Ok(Self {
            kind,
            latent,
            image,
            layers,
        })
    }

    /// Seeded affine generator with output bias 0.5 (mid-grey at the zero latent).
    pub fn seeded_linear(latent: LatentDims, image: ImageDims, seed: u64) -> Self {
        let mut rng = rng::stream_rng(seed, 0);
        let layer = DenseLayer::seeded(latent.num_values(), image.num_values(), 0.5, &mut rng);
        Self {
            kind: GeneratorKind::Linear,
            latent,
            image,
            layers: vec![layer],
        }
    }

    /// Seeded MLP with the given hidden widths and zero biases.
    pub fn seeded_mlp(latent: LatentDims, image: ImageDims, hidden: &[usize], seed: u64) -> Self {
        let mut rng = rng::stream_rng(seed, 0);
        let mut widths = vec![latent.num_values()];
        widths.extend_from_slice(hidden);
        widths.push(image.num_values());
        let layers = widths
            .windows(2)
            .map(|w| DenseLayer::seeded(w[0], w[1], 0.0, &mut rng))
            .collect();
        Self {
            kind: GeneratorKind::Mlp,
            latent,
            image,
            layers,
        }
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn latent_dims(&self) -> LatentDims {
        self.latent
    }

    pub fn image_dims(&self) -> ImageDims {
        self.image
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Hidden layer widths (empty for the linear kind).
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.outputs)
            .collect()
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.latent.num_values() {
            return Err(Error::shape("generator input", self.latent.num_values(), z.len()));
        }
        Ok(())
    }

    fn check_latent(&self, z: &SemanticLatent) -> Result<()> {
        if z.n_slots() != self.latent.n_slots || z.slot_len() != self.latent.slot_len {
            return Err(Error::shape(
                "latent",
                format!("{}x{}", self.latent.n_slots, self.latent.slot_len),
                format!("{}x{}", z.n_slots(), z.slot_len()),
            ));
        }
        Ok(())
    }

    /// Layer activations; the last entry is the raw image-shaped output.
    fn activations(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut current = z.to_vec();
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut out = layer.apply(&current);
            match self.kind {
                GeneratorKind::Linear => {}
                GeneratorKind::Mlp if idx == last => out.iter_mut().for_each(|v| *v = logistic(*v)),
                GeneratorKind::Mlp => out.iter_mut().for_each(|v| *v = v.tanh()),
            }
            acts.push(out.clone());
            current = out;
        }
        acts
    }

    /// Unclamped generator output on a flattened latent.
    pub fn forward_raw(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z)?;
        Ok(self.activations(z).pop().unwrap())
    }

    /// `G(z)` as an image; linear outputs are clamped into `[0, 1]` here.
    pub fn forward(&self, z: &SemanticLatent) -> Result<Image> {
        self.check_latent(z)?;
        let raw = self.forward_raw(z.as_slice())?;
        Image::from_clamped(self.image, &raw)
    }

    /// Vector-Jacobian product: `∂⟨upstream, G_raw(z)⟩ / ∂z`.
    pub fn backward(&self, z: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z)?;
        if upstream.len() != self.image.num_values() {
            return Err(Error::shape("upstream gradient", self.image.num_values(), upstream.len()));
        }
        let acts = self.activations(z);
        let last = self.layers.len() - 1;
        let mut grad = upstream.to_vec();
        for idx in (0..self.layers.len()).rev() {
            match self.kind {
                GeneratorKind::Linear => {}
                GeneratorKind::Mlp if idx == last => {
                    for (g, y) in grad.iter_mut().zip(&acts[idx]) {
                        *g *= y * (1.0 - y);
                    }
                }
                GeneratorKind::Mlp => {
                    for (g, y) in grad.iter_mut().zip(&acts[idx]) {
                        *g *= 1.0 - y * y;
                    }
                }
            }
            grad = self.layers[idx].apply_transpose(&grad);
        }
        Ok(grad)
    }
}
