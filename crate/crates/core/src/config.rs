//! Simulation configuration, loaded from TOML and patched with dotted overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::accounting::SideChannelModel;
use crate::error::{Error, Result};
use crate::generator::{GeneratorModel, LatentDims};
use crate::inversion::InversionConfig;
use crate::latent::ImageDims;
use crate::semcache::{Threshold, ThresholdProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    /// Transmit ground-truth latents (after normalization); no inversion.
    #[default]
    LatentOnly,
    /// Invert every source image before transmission.
    FullInversion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimsConfig {
    pub n_slots: usize,
    pub slot_len: usize,
    pub cache_size: usize,
    pub image_height: usize,
    pub image_width: usize,
}

impl Default for DimsConfig {
    fn default() -> Self {
        Self {
            n_slots: 8,
            slot_len: 32,
            cache_size: 16,
            image_height: 32,
            image_width: 32,
        }
    }
}

impl DimsConfig {
    pub fn latent(&self) -> LatentDims {
        LatentDims::new(self.n_slots, self.slot_len)
    }

    pub fn image(&self) -> ImageDims {
        ImageDims::new(self.image_height, self.image_width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorChoice {
    Linear,
    Mlp,
    /// No generator: accounting only, no images or quality metrics.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorChoice,
    pub hidden: Vec<usize>,
    /// Seed for synthetic weights; derived from the master seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Weight manifest; overrides `kind`, `hidden` and `seed` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            kind: GeneratorChoice::Linear,
            hidden: vec![64],
            seed: None,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub snr_db: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self { snr_db: 5.0 }
    }
}

/// Either one threshold for every slot or one per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSpec {
    Uniform(Threshold),
    PerSlot(Vec<Threshold>),
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        ThresholdSpec::Uniform(Threshold::At(0.9))
    }
}

impl ThresholdSpec {
    pub fn profile(&self, n_slots: usize) -> ThresholdProfile {
        match self {
            ThresholdSpec::Uniform(t) => ThresholdProfile::new(vec![*t; n_slots]),
            ThresholdSpec::PerSlot(v) => ThresholdProfile::new(v.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Synthetic,
    Dataset,
}

/// Clustered synthetic latents: each slot reuses one of `prototypes_per_slot`
/// stored prototypes with probability `reuse_prob`, otherwise draws a fresh
/// vector; Gaussian perturbation is then added.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSourceSpec {
    pub prototypes_per_slot: usize,
    pub reuse_prob: f64,
    pub perturbation_std: f64,
}

impl Default for SyntheticSourceSpec {
    fn default() -> Self {
        Self {
            prototypes_per_slot: 4,
            reuse_prob: 0.7,
            perturbation_std: 0.01,
        }
    }
}

impl SyntheticSourceSpec {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.prototypes_per_slot == 0 {
            out.push(format!("{prefix}prototypes_per_slot: must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.reuse_prob) {
            out.push(format!("{prefix}reuse_prob: must be in [0, 1]"));
        }
        if !(self.perturbation_std >= 0.0) || !self.perturbation_std.is_finite() {
            out.push(format!("{prefix}perturbation_std: must be >= 0"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub kind: SourceKind,
    pub prototypes_per_slot: usize,
    pub reuse_prob: f64,
    pub perturbation_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for SourceSection {
    fn default() -> Self {
        let s = SyntheticSourceSpec::default();
        Self {
            kind: SourceKind::Synthetic,
            prototypes_per_slot: s.prototypes_per_slot,
            reuse_prob: s.reuse_prob,
            perturbation_std: s.perturbation_std,
            path: None,
        }
    }
}

impl SourceSection {
    pub fn synthetic(&self) -> SyntheticSourceSpec {
        SyntheticSourceSpec {
            prototypes_per_slot: self.prototypes_per_slot,
            reuse_prob: self.reuse_prob,
            perturbation_std: self.perturbation_std,
        }
    }
}

/// Optional cache dumps to resume from; runs start cold otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tx_state: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rx_state: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub mode: SimulationMode,
    pub num_images: usize,
    pub master_seed: u64,
    pub thresholds: ThresholdSpec,
    pub dims: DimsConfig,
    pub generator: GeneratorSpec,
    pub channel: ChannelSection,
    pub side_channel: SideChannelModel,
    pub inversion: InversionConfig,
    pub source: SourceSection,
    pub cache: CacheSection,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            mode: SimulationMode::LatentOnly,
            num_images: 100,
            master_seed: 0,
            thresholds: ThresholdSpec::default(),
            dims: DimsConfig::default(),
            generator: GeneratorSpec::default(),
            channel: ChannelSection::default(),
            side_channel: SideChannelModel::default(),
            inversion: InversionConfig::default(),
            source: SourceSection::default(),
            cache: CacheSection::default(),
        }
    }
}

impl SimulationConfig {
    /// Desk-scale profile: 8 slots × 32, 16-entry caches, 32×32 images, γ = 0.9.
    pub fn desk() -> Self {
        Self::default()
    }

    /// Face-latent scale (28 × 512, 50-entry caches, 512×512 images) for
    /// accounting-only runs; no generator is instantiated.
    pub fn full_scale() -> Self {
        Self {
            thresholds: ThresholdSpec::PerSlot(ThresholdProfile::face_default(28).as_slice().to_vec()),
            dims: DimsConfig {
                n_slots: 28,
                slot_len: 512,
                cache_size: 50,
                image_height: 512,
                image_width: 512,
            },
            generator: GeneratorSpec {
                kind: GeneratorChoice::None,
                ..Default::default()
            },
            ..Self::default()
        }
    }

    pub fn threshold_profile(&self) -> ThresholdProfile {
        self.thresholds.profile(self.dims.n_slots)
    }

    /// Every violated constraint at once.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let d = &self.dims;
        for (name, v) in [
            ("n_slots", d.n_slots),
            ("slot_len", d.slot_len),
            ("cache_size", d.cache_size),
            ("image_height", d.image_height),
            ("image_width", d.image_width),
        ] {
            if v == 0 {
                out.push(format!("dims.{name}: must be >= 1"));
            }
        }
        if d.slot_len % 2 != 0 {
            out.push(format!("dims.slot_len: must be even, got {}", d.slot_len));
        }
        if self.num_images == 0 {
            out.push("num_images: must be >= 1".into());
        }
        match &self.thresholds {
            ThresholdSpec::Uniform(t) if !t.is_valid() => out.push("thresholds: must be in [-1, 1] or \"never\"".into()),
            ThresholdSpec::PerSlot(v) => {
                if v.len() != d.n_slots {
                    out.push(format!("thresholds: {} values for {} slots", v.len(), d.n_slots));
                }
                if v.iter().any(|t| !t.is_valid()) {
                    out.push("thresholds: must be in [-1, 1] or \"never\"".into());
                }
            }
            _ => {}
        }
        if self.channel.snr_db.is_nan() {
            out.push("channel.snr_db: must not be NaN".into());
        }
        if self.generator.kind == GeneratorChoice::None
            && self.generator.weights.is_none()
            && self.mode == SimulationMode::FullInversion
        {
            out.push("generator.kind: full_inversion needs a generator".into());
        }
        if self.generator.hidden.contains(&0) {
            out.push("generator.hidden: widths must be >= 1".into());
        }
        out.extend(self.side_channel.violations("side_channel."));
        out.extend(self.inversion.violations("inversion."));
        match self.source.kind {
            SourceKind::Synthetic => out.extend(self.source.synthetic().violations("source.")),
            SourceKind::Dataset if self.source.path.is_none() => {
                out.push("source.path: required for dataset sources".into())
            }
            SourceKind::Dataset => {}
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Builds the configured generator, or `None` for accounting-only runs.
    pub fn build_generator(&self, default_seed: u64) -> Result<Option<GeneratorModel>> {
        if let Some(path) = &self.generator.weights {
            let model = GeneratorModel::load(path)?;
            if model.latent_dims() != self.dims.latent() || model.image_dims() != self.dims.image() {
                return Err(Error::Config(vec![format!(
                    "generator.weights: model dims {:?}/{:?} disagree with dims section",
                    model.latent_dims(),
                    model.image_dims()
                )]));
            }
            return Ok(Some(model));
        }
        let seed = self.generator.seed.unwrap_or(default_seed);
        Ok(match self.generator.kind {
            GeneratorChoice::None => None,
            GeneratorChoice::Linear => Some(GeneratorModel::seeded_linear(self.dims.latent(), self.dims.image(), seed)),
            GeneratorChoice::Mlp => Some(GeneratorModel::seeded_mlp(
                self.dims.latent(),
                self.dims.image(),
                &self.generator.hidden,
                seed,
            )),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::format("config", e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_value(parse_table(text)?)
    }

    pub fn from_value(value: toml::Table) -> Result<Self> {
        let cfg: SimulationConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        Ok(cfg)
    }

    /// Reads a config file and applies `key=value` overrides, then validates.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                parse_table(&text)?
            }
            None => toml::Table::new(),
        };
        let mut errors = Vec::new();
        for o in overrides {
            if let Err(e) = apply_override(&mut table, o) {
                errors.push(e);
            }
        }
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let cfg = Self::from_value(table)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(vec![format!("config parse error: {}", e.message())]))
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `a.b.c=value` to `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> std::result::Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override `{spec}`: expected key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override `{spec}`: empty key segment"));
    }
    let mut current = table;
    for part in &parts[..parts.len() - 1] {
        let entry = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry
            .as_table_mut()
            .ok_or_else(|| format!("override `{spec}`: `{part}` is not a table"))?;
    }
    current.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}
