//! Run configuration: one TOML file drives every command. Unknown keys are
//! rejected, and every field has a default, so an empty file is a complete,
//! runnable configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use wricnet_core::data::Tier;
use wricnet_core::model::{ModelConfig, Variant};
use wricnet_core::train::{AdamConfig, TrainConfig, WeightMode, LOSS_LAMBDAS};

use crate::{at_path, CliError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub training: TrainingSection,
    pub data: DataSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: String,
    pub width_scale: f64,
    /// Channel groups per rich-scale block.
    pub scale_groups: usize,
    /// Inception branches.
    pub branches: usize,
    /// The single seed every random draw flows from.
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            variant: Variant::Proposed.as_str().to_string(),
            width_scale: 1.0,
            scale_groups: 4,
            branches: 4,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: u32,
    /// Only batch size 1 is supported; the field exists so configs state it.
    pub batch: u32,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Weights on the five loss terms, in head order ri/wri/ed/wed/fu.
    pub lambdas: [f64; 5],
    /// "per-tile" or "dataset".
    pub class_weights: String,
    pub augment: bool,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    /// Also write `<checkpoint>.epochN` every N epochs; 0 disables.
    pub checkpoint_every: u32,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs: 200,
            batch: 1,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            lambdas: LOSS_LAMBDAS,
            class_weights: "per-tile".to_string(),
            augment: true,
            checkpoint: PathBuf::from("out/model.ckpt"),
            loss_log: PathBuf::from("out/loss.csv"),
            checkpoint_every: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Source pairs: `<source>/{A,B,label}/<name>.png`.
    pub source: PathBuf,
    /// Where prepared tiles land / are read from.
    pub prepared: PathBuf,
    /// Tile side length in pixels.
    pub window: usize,
    pub tiers: Vec<String>,
    /// Source names used for training; empty means all.
    pub train_sources: Vec<String>,
    /// Source names used for evaluation; empty means all.
    pub eval_sources: Vec<String>,
    /// When > 0, `prepare` generates this many synthetic pairs instead of
    /// reading `source`.
    pub synth_pairs: usize,
    pub synth_size: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: PathBuf::from("data/raw"),
            prepared: PathBuf::from("out/tiles"),
            window: 256,
            tiers: Tier::ALL.iter().map(|t| t.as_str().to_string()).collect(),
            train_sources: Vec::new(),
            eval_sources: Vec::new(),
            synth_pairs: 0,
            synth_size: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Best-tile fractions for locally ordered scores.
    pub fractions: Vec<f64>,
    pub out: PathBuf,
    /// Write per-tile prediction masks and disagreement overlays.
    pub write_images: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            fractions: vec![0.05, 0.10],
            out: PathBuf::from("out/eval"),
            write_images: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = at_path(std::fs::read_to_string(path), "reading config", path)?;
        at_path(RunConfig::from_toml_str(&text), "parsing config", path)
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn variant(&self) -> Result<Variant> {
        Variant::parse(&self.model.variant).map_err(CliError::Validation)
    }

    pub fn tiers(&self) -> Result<Vec<Tier>> {
        if self.data.tiers.is_empty() {
            return Err(CliError::validation("data.tiers must not be empty"));
        }
        self.data
            .tiers
            .iter()
            .map(|s| Tier::parse(s).map_err(CliError::Validation))
            .collect()
    }

    pub fn weight_mode(&self) -> Result<WeightMode> {
        match self.training.class_weights.as_str() {
            "per-tile" => Ok(WeightMode::PerTile),
            "dataset" => Ok(WeightMode::Dataset),
            other => Err(CliError::validation(format!(
                "training.class_weights must be \"per-tile\" or \"dataset\", got \"{other}\""
            ))),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            variant: self.variant()?,
            width_scale: self.model.width_scale,
            img_channels: 3,
            scale_groups: self.model.scale_groups,
            branches: self.model.branches,
            metric_depth: 3,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.training.epochs,
            adam: AdamConfig {
                lr: self.training.lr,
                beta1: self.training.beta1,
                beta2: self.training.beta2,
                ..AdamConfig::default()
            },
            lambdas: self.training.lambdas,
            seed: self.model.seed,
            weight_mode: self.weight_mode()?,
            augment: self.training.augment,
        })
    }

    /// Checks every field that later stages would otherwise trip over.
    pub fn validate(&self) -> Result<()> {
        self.model_config()?;
        self.train_config()?;
        self.tiers()?;
        let t = &self.training;
        if t.batch != 1 {
            return Err(CliError::validation(format!(
                "training.batch must be 1 (got {}); larger batches are not supported",
                t.batch
            )));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(CliError::validation(format!(
                "training.lr must be positive, got {}",
                t.lr
            )));
        }
        for (name, beta) in [("beta1", t.beta1), ("beta2", t.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(CliError::validation(format!(
                    "training.{name} must be in [0, 1), got {beta}"
                )));
            }
        }
        if t.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(CliError::validation(format!(
                "training.lambdas must be non-negative and finite, got {:?}",
                t.lambdas
            )));
        }
        let d = &self.data;
        if d.window == 0 || d.window % 16 != 0 {
            return Err(CliError::validation(format!(
                "data.window must be a positive multiple of 16, got {}",
                d.window
            )));
        }
        if d.synth_pairs > 0 && d.synth_size / 4 < d.window {
            return Err(CliError::validation(format!(
                "data.synth_size {} is too small: the quarter-resolution tier needs at least one {}-pixel window",
                d.synth_size, d.window
            )));
        }
        for f in &self.eval.fractions {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(CliError::validation(format!(
                    "eval.fractions entries must be in (0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }
}
