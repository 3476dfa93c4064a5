//! Channel-aware latent inversion.
//!
//! Finds `y` minimizing
//!
//! ```text
//! λ1 · ‖G(PN(y) + n) − x‖₁  +  λ2 · D(G(PN(y) + n), x)
//! ```
//!
//! with Adam, where `PN` is whole-latent power normalization, `n` is latent-
//! space channel noise (each real component `N(0, σ²/2)` at the configured
//! SNR) and `D` is the layer-weighted feature distance of a
//! [`FeatureExtractor`]. The returned latent is `PN(y*)`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel;
use crate::error::{Error, Result};
use crate::generator::{FeatureExtractor, GeneratorModel};
use crate::latent::{power_normalize, Image, SemanticLatent};
use crate::rng;

const INIT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// New noise draw every iteration.
    #[default]
    FreshPerStep,
    /// One draw, reused for the whole run.
    Fixed,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Zeros,
    /// Gaussian with standard deviation 0.1.
    SeededGaussian,
}

/// Pixel reconstruction term. `L1` is the default; `L2` (sum of squares)
/// is the plain least-squares objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionLoss {
    #[default]
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub iterations: usize,
    pub step_size: f64,
    pub momentum_decay_1: f64,
    pub momentum_decay_2: f64,
    pub epsilon: f64,
    pub noise_mode: NoiseMode,
    pub init: InitMode,
    pub snr_db: f64,
    pub reconstruction: ReconstructionLoss,
    pub features: FeatureExtractor,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.1,
            iterations: 300,
            step_size: 0.05,
            momentum_decay_1: 0.9,
            momentum_decay_2: 0.999,
            epsilon: 1e-8,
            noise_mode: NoiseMode::FreshPerStep,
            init: InitMode::Zeros,
            snr_db: 5.0,
            reconstruction: ReconstructionLoss::L1,
            features: FeatureExtractor::default(),
        }
    }
}

impl InversionConfig {
    /// Every violated constraint, prefixed with `prefix`.
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut bad = |field: &str, msg: &str| out.push(format!("{prefix}{field}: {msg}"));
        if !(self.lambda1 >= 0.0) {
            bad("lambda1", "must be >= 0");
        }
        if !(self.lambda2 >= 0.0) {
            bad("lambda2", "must be >= 0");
        }
        if !(self.lambda1 + self.lambda2 > 0.0) {
            bad("lambda1", "lambda1 + lambda2 must be > 0");
        }
        if self.iterations == 0 {
            bad("iterations", "must be >= 1");
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            bad("step_size", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum_decay_1) {
            bad("momentum_decay_1", "must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.momentum_decay_2) {
            bad("momentum_decay_2", "must be in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            bad("epsilon", "must be > 0");
        }
        if self.snr_db.is_nan() {
            bad("snr_db", "must not be NaN");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations("");
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Optimizer state for one inversion run.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionState {
    pub y: Vec<f64>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    /// Objective before each step, plus one final evaluation after the last step.
    pub loss_trace: Vec<f64>,
}

impl InversionState {
    pub fn new(y: Vec<f64>) -> Self {
        let n = y.len();
        Self {
            y,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
            loss_trace: Vec::new(),
        }
    }

    /// One bias-corrected adaptive-moment step.
    pub fn adam_step(&mut self, grad: &[f64], cfg: &InversionConfig) {
        self.step_count += 1;
        let (b1, b2) = (cfg.momentum_decay_1, cfg.momentum_decay_2);
        let t = self.step_count as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((y, m), v), g) in self
            .y
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
            .zip(grad)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *y -= cfg.step_size * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }

    pub fn write_loss_trace_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "loss"])?;
        for (i, loss) in self.loss_trace.iter().enumerate() {
            w.write_record([i.to_string(), format!("{loss:e}")])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub latent: SemanticLatent,
    pub state: InversionState,
}

/// Objective value and gradient with respect to `y`, holding `noise` fixed.
///
/// At `y = 0` normalization is the identity, so its Jacobian is taken as `I`.
pub fn loss_and_grad(
    model: &GeneratorModel,
    target: &[f64],
    y: &[f64],
    noise: &[f64],
    cfg: &InversionConfig,
) -> Result<(f64, Vec<f64>)> {
    let image = model.image_dims();
    if target.len() != image.num_values() {
        return Err(Error::shape("inversion target", image.num_values(), target.len()));
    }
    if noise.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: noise.len(),
        });
    }
    let (w, scale) = power_normalize(y).map_err(|_| Error::NonFinite {
        context: "inversion variable",
    })?;
    let u: Vec<f64> = w.iter().zip(noise).map(|(a, b)| a + b).collect();
    let out = model.forward_raw(&u)?;

    let mut loss = 0.0;
    let mut out_grad = vec![0.0; out.len()];
    if cfg.lambda1 > 0.0 {
        for ((g, o), x) in out_grad.iter_mut().zip(&out).zip(target) {
            let r = o - x;
            match cfg.reconstruction {
                ReconstructionLoss::L1 => {
                    loss += cfg.lambda1 * r.abs();
                    *g = if r > 0.0 {
                        cfg.lambda1
                    } else if r < 0.0 {
                        -cfg.lambda1
                    } else {
                        0.0
                    };
                }
                ReconstructionLoss::L2 => {
                    loss += cfg.lambda1 * r * r;
                    *g = 2.0 * cfg.lambda1 * r;
                }
            }
        }
    }
    if cfg.lambda2 > 0.0 {
        let (d, dg) = cfg.features.distance_and_grad(image, &out, target);
        loss += cfg.lambda2 * d;
        for (g, extra) in out_grad.iter_mut().zip(dg) {
            *g += cfg.lambda2 * extra;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { context: "inversion loss" });
    }

    let grad_w = model.backward(&u, &out_grad)?;
    let energy: f64 = y.iter().map(|v| v * v).sum();
    let grad_y = if energy == 0.0 {
        grad_w
    } else {
        // d/dy of y·s(y), s = sqrt(c/‖y‖²): s·(I − y yᵀ/‖y‖²)
        let proj = y.iter().zip(&grad_w).map(|(a, b)| a * b).sum::<f64>() / energy;
        grad_w
            .iter()
            .zip(y)
            .map(|(g, yi)| scale * (g - yi * proj))
            .collect()
    };
    if grad_y.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { context: "inversion gradient" });
    }
    Ok((loss, grad_y))
}

fn draw_noise<R: Rng>(rng: &mut R, len: usize, cfg: &InversionConfig) -> Vec<f64> {
    let mut n = vec![0.0; len];
    if cfg.noise_mode != NoiseMode::Off {
        channel::add_real_noise(&mut n, cfg.snr_db, rng);
    }
    n
}

/// Inverts an image.
pub fn invert(model: &GeneratorModel, x: &Image, cfg: &InversionConfig, seed: u64) -> Result<InversionResult> {
    if x.dims() != model.image_dims() {
        return Err(Error::shape(
            "image",
            format!("{:?}", model.image_dims()),
            format!("{:?}", x.dims()),
        ));
    }
    invert_raw(model, x.pixels(), cfg, seed)
}

/// Inverts an arbitrary image-shaped target (values need not lie in `[0, 1]`).
pub fn invert_raw(model: &GeneratorModel, target: &[f64], cfg: &InversionConfig, seed: u64) -> Result<InversionResult> {
    cfg.validate()?;
    let dims = model.latent_dims();
    let len = dims.num_values();
    let y0 = match cfg.init {
        InitMode::Zeros => vec![0.0; len],
        InitMode::SeededGaussian => rng::gaussian_vec(&mut rng::stream_rng(seed, INIT_STREAM), len, 0.1),
    };
    let mut state = InversionState::new(y0);
    let mut noise_rng = rng::stream_rng(seed, NOISE_STREAM);
    let mut noise = draw_noise(&mut noise_rng, len, cfg);

    let diverged = |iteration: usize, e: Error| match e {
        Error::NonFinite { .. } => Error::Divergence {
            iteration,
            loss: f64::NAN,
        },
        other => other,
    };

    for iteration in 0..cfg.iterations {
        if iteration > 0 && cfg.noise_mode == NoiseMode::FreshPerStep {
            noise = draw_noise(&mut noise_rng, len, cfg);
        }
        let (loss, grad) = loss_and_grad(model, target, &state.y, &noise, cfg).map_err(|e| diverged(iteration, e))?;
        state.loss_trace.push(loss);
        state.adam_step(&grad, cfg);
        if state.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration, loss });
        }
    }
    let (final_loss, _) =
        loss_and_grad(model, target, &state.y, &noise, cfg).map_err(|e| diverged(cfg.iterations, e))?;
    state.loss_trace.push(final_loss);

    let (z, _) = power_normalize(&state.y)?;
    let latent = SemanticLatent::new(dims.n_slots, dims.slot_len, z)?;
    Ok(InversionResult { latent, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::LatentDims;
    use crate::latent::{pack_real_to_complex, ImageDims};
    use approx::assert_abs_diff_eq;

    fn model() -> GeneratorModel {
        GeneratorModel::seeded_mlp(LatentDims::new(2, 4), ImageDims::new(3, 3), &[6], 17)
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let m = model();
        let y: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) / 4.0).collect();
        let noise = vec![0.01; 8];
        let (w, _) = power_normalize(&y).unwrap();
        let u: Vec<f64> = w.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let target = m.forward_raw(&u).unwrap();
        let (loss, grad) = loss_and_grad(&m, &target, &y, &noise, &InversionConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn single_pixel_l1_deviation() {
        let m = model();
        let y = vec![0.2; 8];
        let noise = vec![0.0; 8];
        let (w, _) = power_normalize(&y).unwrap();
        let mut target = m.forward_raw(&w).unwrap();
        target[4] -= 0.125;
        let cfg = InversionConfig {
            lambda2: 0.0,
            ..Default::default()
        };
        let (loss, _) = loss_and_grad(&m, &target, &y, &noise, &cfg).unwrap();
        assert_abs_diff_eq!(loss, 0.125, epsilon = 1e-12);
    }

    #[test]
    fn returned_latent_has_unit_power_and_is_deterministic() {
        let m = model();
        let target = m.forward_raw(&[0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.0, 0.6]).unwrap();
        let cfg = InversionConfig {
            iterations: 40,
            init: InitMode::SeededGaussian,
            ..Default::default()
        };
        let a = invert_raw(&m, &target, &cfg, 3).unwrap();
        let b = invert_raw(&m, &target, &cfg, 3).unwrap();
        assert_eq!(a.latent, b.latent);
        assert_eq!(a.state.loss_trace.len(), 41);
        let p = pack_real_to_complex(a.latent.as_slice()).unwrap().average_power();
        assert!((p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_config_lists_every_field() {
        let cfg = InversionConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            iterations: 0,
            step_size: -1.0,
            ..Default::default()
        };
        let v = cfg.violations("inversion.");
        assert!(v.iter().any(|s| s.starts_with("inversion.iterations")));
        assert!(v.iter().any(|s| s.starts_with("inversion.step_size")));
        assert!(v.iter().any(|s| s.starts_with("inversion.lambda1")));
    }

    #[test]
    fn divergence_reports_iteration() {
        let m = model();
        let target = vec![f64::INFINITY; 27];
        let cfg = InversionConfig {
            iterations: 5,
            ..Default::default()
        };
        match invert_raw(&m, &target, &cfg, 0) {
            Err(Error::Divergence { iteration, .. }) => assert_eq!(iteration, 0),
            other => panic!("unexpected {other:?}"),
        }
    }
}
