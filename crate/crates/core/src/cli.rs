//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime or protocol error.
//! Failures print a JSON object `{"error": {"kind", "messages"}}` on stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::accounting::{self, RecordRow};
use crate::config::SimulationConfig;
use crate::dataset::{self, Dataset};
use crate::error::{Error, Result};
use crate::inversion;
use crate::pipeline::{self, moving_average, Simulator, Summary};
use crate::rng::{self, Stage};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SEMLINK_OUT";

#[derive(Debug, Parser)]
#[command(name = "semlink", version, about = "Cache-enabled semantic communication simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted `key=value` override, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, env = OUT_ENV, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl CommonArgs {
    fn load(&self) -> Result<SimulationConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("master_seed={seed}"));
        }
        SimulationConfig::load_with_overrides(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one image sequence; writes records.csv, records.jsonl and summary.json.
    Simulate(CommonArgs),
    /// Invert source images with the configured generator.
    Invert {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset with images to invert; the configured source is used otherwise.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Write the configured source sequence (and generator weights) to disk.
    GenDataset(CommonArgs),
    /// Aggregate records CSVs into plot-ready curves.
    Report {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long, env = OUT_ENV, default_value = "out")]
        out: PathBuf,
        /// Moving-average window over image index.
        #[arg(long, default_value_t = 10)]
        window: usize,
    },
    /// Cartesian sweep over `--axis key=v1,v2,...`, one simulation per cell.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "axis", value_name = "KEY=V1,V2", required = true)]
        axes: Vec<String>,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_json(&e));
            code
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

pub fn error_json(e: &Error) -> serde_json::Value {
    let (kind, messages) = match e {
        Error::Config(v) => ("config", v.clone()),
        Error::ProtocolDesync(_) => ("protocol_desync", vec![e.to_string()]),
        _ => ("runtime", vec![e.to_string()]),
    };
    json!({ "error": { "kind": kind, "messages": messages } })
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Simulate(common) => {
            let cfg = common.load()?;
            simulate_into(&cfg, &common.out)?;
            Ok(EXIT_OK)
        }
        Command::Invert { common, dataset } => {
            let cfg = common.load()?;
            invert_into(&cfg, dataset.as_deref(), &common.out)?;
            Ok(EXIT_OK)
        }
        Command::GenDataset(common) => {
            let cfg = common.load()?;
            gen_dataset_into(&cfg, &common.out)?;
            Ok(EXIT_OK)
        }
        Command::Report { records, out, window } => {
            report_into(&records, &out, window)?;
            Ok(EXIT_OK)
        }
        Command::Sweep { common, axes, jobs } => {
            let ok = sweep_into(&common, &axes, jobs)?;
            Ok(if ok { EXIT_OK } else { EXIT_RUNTIME })
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
    pub version: &'static str,
}

impl Provenance {
    pub fn of(cfg: &SimulationConfig) -> Result<Self> {
        let text = cfg.to_toml()?;
        Ok(Self {
            config_hash: format!("sha256:{}", hex::encode(Sha256::digest(text.as_bytes()))),
            master_seed: cfg.master_seed,
            version: env!("CARGO_PKG_VERSION"),
        })
    }
}

#[derive(Debug, Serialize)]
struct SummaryFile<'a> {
    provenance: Provenance,
    #[serde(flatten)]
    summary: &'a Summary,
}

/// `simulate` without argument parsing. Returns the run summary.
pub fn simulate_into(cfg: &SimulationConfig, out: &Path) -> Result<Summary> {
    create_dir(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?).map_err(|e| Error::io(out, e))?;
    let result = pipeline::run_sequence(cfg)?;
    accounting::write_records_csv(&out.join("records.csv"), &result.records)?;
    accounting::write_records_jsonl(&out.join("records.jsonl"), &result.records)?;
    write_json(
        &out.join("summary.json"),
        &SummaryFile {
            provenance: Provenance::of(cfg)?,
            summary: &result.summary,
        },
    )?;
    Ok(result.summary)
}

/// `invert`: writes `latents.toml` (+ `.bin`), per-image loss traces and a summary.
pub fn invert_into(cfg: &SimulationConfig, dataset_path: Option<&Path>, out: &Path) -> Result<()> {
    let sim = Simulator::new(cfg.clone())?;
    let generator = sim
        .generator()
        .ok_or_else(|| Error::Config(vec!["generator.kind: invert needs a generator".into()]))?;
    let images = match dataset_path {
        Some(p) => dataset::load_dataset(p)?
            .images
            .ok_or_else(|| Error::Config(vec![format!("dataset {} has no images", p.display())]))?,
        None => sim
            .source_items()?
            .into_iter()
            .filter_map(|item| item.image)
            .collect(),
    };
    let images: Vec<_> = images.into_iter().take(cfg.num_images).collect();
    create_dir(out)?;
    let seed = rng::sub_seed(cfg.master_seed, Stage::Inversion);
    let mut latents = Vec::with_capacity(images.len());
    let mut rows = Vec::with_capacity(images.len());
    for (i, image) in images.iter().enumerate() {
        let result = inversion::invert(generator, image, &cfg.inversion, seed.wrapping_add(i as u64))?;
        result
            .state
            .write_loss_trace_csv(&out.join(format!("loss_trace_{i:04}.csv")))?;
        let x_hat = generator.forward(&result.latent)?;
        rows.push(json!({
            "image_index": i,
            "initial_loss": result.state.loss_trace.first(),
            "final_loss": result.state.loss_trace.last(),
            "psnr_db": accounting::psnr(image, &x_hat)?,
        }));
        latents.push(result.latent);
    }
    dataset::save_dataset(
        &out.join("latents.toml"),
        &Dataset {
            latents,
            images: Some(images),
        },
    )?;
    write_json(
        &out.join("summary.json"),
        &json!({ "provenance": Provenance::of(cfg)?, "images": rows }),
    )
}

/// `gen-dataset`: writes `dataset.toml` (+ `.bin`) and, when a generator is
/// configured, `generator.toml` (+ `.bin`).
pub fn gen_dataset_into(cfg: &SimulationConfig, out: &Path) -> Result<()> {
    let sim = Simulator::new(cfg.clone())?;
    let items = sim.source_items()?;
    create_dir(out)?;
    let images: Option<Vec<_>> = items.iter().map(|i| i.image.clone()).collect();
    let data = Dataset {
        latents: items.into_iter().map(|i| i.latent).collect(),
        images,
    };
    dataset::save_dataset(&out.join("dataset.toml"), &data)?;
    if let Some(g) = sim.generator() {
        g.save(&out.join("generator.toml"))?;
    }
    write_json(&out.join("summary.json"), &json!({ "provenance": Provenance::of(cfg)?, "count": data.len() }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub image_index: usize,
    pub mean_bcr: f64,
    pub moving_avg_bcr: f64,
    pub files: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnrPoint {
    pub snr_db: f64,
    pub mean_psnr_db: Option<f64>,
    pub mean_perceptual_distance: Option<f64>,
    pub records: usize,
}

/// Per-index mean BCR across files, then a trailing moving average.
pub fn bcr_curve(files: &[Vec<RecordRow>], window: usize) -> Vec<CurvePoint> {
    let mut by_index: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for rows in files {
        for r in rows {
            let e = by_index.entry(r.image_index).or_default();
            e.0 += r.bcr;
            e.1 += 1;
        }
    }
    let means: Vec<f64> = by_index.values().map(|(s, n)| s / *n as f64).collect();
    let ma = moving_average(&means, window);
    by_index
        .iter()
        .zip(means.iter().zip(ma))
        .map(|((&image_index, &(_, files)), (&mean_bcr, moving_avg_bcr))| CurvePoint {
            image_index,
            mean_bcr,
            moving_avg_bcr,
            files,
        })
        .collect()
}

pub fn psnr_vs_snr(files: &[Vec<RecordRow>]) -> Vec<SnrPoint> {
    let mut groups: Vec<(f64, Vec<&RecordRow>)> = Vec::new();
    for r in files.iter().flatten() {
        match groups.iter_mut().find(|(s, _)| s.total_cmp(&r.snr_db).is_eq()) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.snr_db, vec![r])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    let avg = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    groups
        .into_iter()
        .map(|(snr_db, rows)| SnrPoint {
            snr_db,
            mean_psnr_db: avg(rows.iter().filter_map(|r| r.psnr_db).collect()),
            mean_perceptual_distance: avg(rows.iter().filter_map(|r| r.perceptual_distance).collect()),
            records: rows.len(),
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `report`: writes `bcr_curve.csv` and `psnr_vs_snr.csv`.
pub fn report_into(records: &[PathBuf], out: &Path, window: usize) -> Result<()> {
    let files = records
        .iter()
        .map(|p| accounting::read_records_csv(p))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    write_csv(&out.join("bcr_curve.csv"), &bcr_curve(&files, window))?;
    write_csv(&out.join("psnr_vs_snr.csv"), &psnr_vs_snr(&files))
}

/// Expands `key=v1,v2` axes into the cartesian product of override lists.
pub fn expand_axes(axes: &[String]) -> Result<Vec<Vec<String>>> {
    let mut cells: Vec<Vec<String>> = vec![Vec::new()];
    let mut errors = Vec::new();
    for axis in axes {
        let Some((key, values)) = axis.split_once('=') else {
            errors.push(format!("axis `{axis}`: expected key=v1,v2"));
            continue;
        };
        let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            errors.push(format!("axis `{axis}`: no values"));
            continue;
        }
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                values.iter().map(move |v| {
                    let mut c = cell.clone();
                    c.push(format!("{}={v}", key.trim()));
                    c
                })
            })
            .collect();
    }
    if errors.is_empty() {
        Ok(cells)
    } else {
        Err(Error::Config(errors))
    }
}

#[derive(Debug, Serialize)]
struct CellIndex {
    dir: String,
    overrides: Vec<String>,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_bcr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_psnr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<serde_json::Value>,
}

/// `sweep`: validates every cell first, then runs them in a worker pool.
/// Returns whether all cells succeeded.
pub fn sweep_into(common: &CommonArgs, axes: &[String], jobs: usize) -> Result<bool> {
    let cells = expand_axes(axes)?;
    let configs = cells
        .iter()
        .map(|extra| {
            let mut args = common.clone();
            args.overrides.extend(extra.iter().cloned());
            args.load()
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(&common.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(vec![format!("jobs: {e}")]))?;
    let index: Vec<CellIndex> = pool.install(|| {
        configs
            .par_iter()
            .zip(cells.par_iter())
            .enumerate()
            .map(|(i, (cfg, overrides))| {
                let dir = format!("cell_{i:03}");
                match simulate_into(cfg, &common.out.join(&dir)) {
                    Ok(s) => CellIndex {
                        dir,
                        overrides: overrides.clone(),
                        ok: true,
                        mean_bcr: Some(s.mean_bcr),
                        mean_psnr_db: s.mean_psnr_db,
                        error: None,
                    },
                    Err(e) => CellIndex {
                        dir,
                        overrides: overrides.clone(),
                        ok: false,
                        mean_bcr: None,
                        mean_psnr_db: None,
                        error: Some(error_json(&e)),
                    },
                }
            })
            .collect()
    });
    let ok = index.iter().all(|c| c.ok);
    write_json(&common.out.join("sweep_index.json"), &json!({ "cells": index }))?;
    Ok(ok)
}
