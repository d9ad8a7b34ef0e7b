//! Flat TOML run configuration with named presets.
//!
//! A config file is a set of top-level keys layered over a preset (`desk`
//! unless the file sets `preset = "paper"`). Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decoder::AttentionVariant;
use crate::mdc::DilationSchedule;
use crate::model::ModelConfig;
use crate::tensor::Precision;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Config(format!("unknown preset {s:?} (expected desk or paper)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    /// Directory holding `train.jsonl`, `dev.jsonl` and `test.jsonl`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    pub vocab_cap: usize,
    pub max_len: usize,
    pub precision: Precision,
    pub embed: usize,
    pub hidden: usize,
    pub attention_variant: AttentionVariant,
    pub kernel_size: usize,
    pub dilation_rates: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hier: Option<usize>,
    pub init_scale: f64,
    pub mask_emitted: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub clip: f64,
    /// Band F1 cut-offs (number of most frequent labels excluded) reported
    /// on the test split.
    pub bands: Vec<usize>,
}

impl RunConfig {
    /// Small models that train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            preset: Preset::Desk,
            seed: 1,
            data_dir: None,
            vocab_cap: 2000,
            max_len: 500,
            precision: Precision::F32,
            embed: 32,
            hidden: 32,
            attention_variant: AttentionVariant::Hybrid,
            kernel_size: 3,
            dilation_rates: vec![1, 2, 3],
            hier: None,
            init_scale: 0.3,
            mask_emitted: true,
            batch_size: 16,
            epochs: 10,
            lr: 0.005,
            lr_decay: 0.85,
            clip: 10.0,
            bands: vec![],
        }
    }

    /// Full-size settings: 512 units, lr 3e-4 halved every epoch, batch 64.
    pub fn paper() -> Self {
        Self {
            preset: Preset::Paper,
            vocab_cap: 50_000,
            embed: 512,
            hidden: 512,
            init_scale: 0.08,
            batch_size: 64,
            lr: 3e-4,
            lr_decay: 0.5,
            ..Self::desk()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let preset = match table.get("preset") {
            Some(v) => v
                .as_str()
                .ok_or_else(|| Error::Config("preset must be a string".into()))?
                .parse()?,
            None => Preset::Desk,
        };
        let mut merged = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        merged.extend(table);
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn schedule(&self) -> Result<DilationSchedule> {
        Ok(DilationSchedule::new(self.kernel_size, &self.dilation_rates)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            lr_decay: self.lr_decay,
            clip: self.clip,
        }
    }

    pub fn model_config(&self, vocab_size: usize, labels: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            labels,
            embed: self.embed,
            hidden: self.hidden,
            variant: self.attention_variant,
            kernel_size: self.kernel_size,
            dilation_rates: self.dilation_rates.clone(),
            hier: self.hier,
            init_scale: self.init_scale,
            mask_emitted: self.mask_emitted,
        }
    }

    /// Checks everything that can be checked before touching data.
    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        self.train_config().validate()?;
        self.model_config(6, 1).validate()?;
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        if let Some(dir) = &self.data_dir {
            for split in ["train.jsonl", "dev.jsonl"] {
                let p = dir.join(split);
                if !p.is_file() {
                    return Err(Error::Config(format!("missing corpus file {}", p.display())));
                }
            }
        }
        Ok(())
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Parses a comma-separated list of unsigned integers.
pub fn parse_csv(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{x:?} in {s:?} is not a non-negative integer")))
        })
        .collect()
}
