//! TOML run configuration.
//!
//! ```toml
//! preset = "feature-recognition"    # or "species-classification"
//! image_size = 64
//! widths = [16, 32, 64, 128]
//! init_checkpoint = "runs/pre/checkpoint/model.sylv"   # optional
//!
//! [train]                            # any TrainConfig field
//! epochs = 30
//! hessian = "gauss-newton"
//!
//! [split]                            # any SplitSpec field
//! test = { count = 480 }
//! labelled_fraction = 0.1
//! ```
//!
//! The preset (and mode) fill every `[train]` and `[split]` value first; keys
//! in the file override them, and command-line flags override the file.
//! Unknown keys are errors.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sylva_core::data::SplitSpec;
use sylva_core::trainer::{Preset, TrainConfig, TrainMode};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "default_preset")]
    preset: Preset,
    #[serde(default = "default_image_size")]
    image_size: usize,
    #[serde(default = "default_widths")]
    widths: Vec<usize>,
    #[serde(default)]
    init_checkpoint: Option<PathBuf>,
    #[serde(default)]
    train: toml::Table,
    #[serde(default)]
    split: toml::Table,
}

fn default_preset() -> Preset {
    Preset::FeatureRecognition
}

fn default_image_size() -> usize {
    64
}

fn default_widths() -> Vec<usize> {
    vec![16, 32, 64, 128]
}

/// Flags that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub mode: Option<TrainMode>,
    pub seed: Option<u64>,
    pub labelled_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub image_size: usize,
    pub widths: Vec<usize>,
    pub init_checkpoint: Option<PathBuf>,
    pub train: TrainConfig,
    pub split: SplitSpec,
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn layered<T>(base: &T, over: &toml::Table, what: &str) -> Result<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut table = toml::Table::try_from(base).with_context(|| format!("serialising default {what}"))?;
    merge(&mut table, over);
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| anyhow::Error::new(sylva_core::Error::Config(format!("[{what}]: {e}"))))
}

impl RunConfig {
    /// `default_split` gives the split used when the file has none.
    pub fn load(path: Option<&Path>, overrides: &Overrides, default_split: fn(f64, u64) -> SplitSpec) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| sylva_core::Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })
                .map_err(anyhow::Error::new)?,
            None => String::new(),
        };
        Self::parse(&text, overrides, default_split)
    }

    pub fn parse(text: &str, overrides: &Overrides, default_split: fn(f64, u64) -> SplitSpec) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)
            .map_err(|e| anyhow::Error::new(sylva_core::Error::Config(format!("config: {e}"))))?;
        let preset = overrides.preset.unwrap_or(raw.preset);
        let file_mode = match raw.train.get("mode") {
            Some(toml::Value::String(m)) => Some(m.parse::<TrainMode>()?),
            Some(other) => bail!(sylva_core::Error::Config(format!("[train] mode must be a string, got {other}"))),
            None => None,
        };
        let mode = overrides.mode.or(file_mode).unwrap_or(TrainMode::SslInfluence);
        let mut train: TrainConfig = layered(&TrainConfig::preset(preset, mode), &raw.train, "train")?;
        train.mode = mode;
        let mut split: SplitSpec = layered(&default_split(0.1, 0), &raw.split, "split")?;
        if let Some(seed) = overrides.seed {
            train.seed = seed;
            split.seed = seed;
        }
        if let Some(f) = overrides.labelled_fraction {
            split.labelled_fraction = f;
        }
        train.validate()?;
        if raw.image_size == 0 || raw.widths.contains(&0) {
            bail!(sylva_core::Error::Config("image_size and widths must be positive".into()));
        }
        Ok(RunConfig {
            preset,
            image_size: raw.image_size,
            widths: raw.widths,
            init_checkpoint: raw.init_checkpoint,
            train,
            split,
        })
    }
}
