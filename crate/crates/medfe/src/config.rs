//! Run configuration: defaults per preset, overridden by a flat JSON
//! config file, overridden again by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use medfe_core::loss::LossWeights;
use medfe_core::model::GeneratorConfig;
use medfe_core::trainer::TrainConfig;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Preset {
    Desk,
    Full,
}

impl Preset {
    pub fn parse(s: &str) -> CliResult<Preset> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(CliError::Contract(format!(
                "unknown preset '{other}' (expected desk or full)"
            ))),
        }
    }

    pub fn generator_config(self) -> GeneratorConfig {
        match self {
            Preset::Desk => GeneratorConfig::desk(),
            Preset::Full => GeneratorConfig::full(),
        }
    }

    fn default_image_size(self) -> usize {
        match self {
            Preset::Desk => 64,
            Preset::Full => 256,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub preset: Preset,
    pub image_size: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub seed: u64,
    pub lambda_r: f64,
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub lambda_adv: f64,
    pub lambda_st: f64,
    pub lambda_te: f64,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub checkpoint_every: u64,
    pub extractor_weights: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        RunConfig {
            preset: Preset::Desk,
            image_size: 64,
            batch_size: 4,
            steps: 2000,
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            seed: 0,
            lambda_r: w.lambda_r,
            lambda_p: w.lambda_p,
            lambda_s: w.lambda_s,
            lambda_adv: w.lambda_adv,
            lambda_st: w.lambda_st,
            lambda_te: w.lambda_te,
            manifest: None,
            checkpoint: None,
            out_dir: PathBuf::from("out"),
            checkpoint_every: 500,
            extractor_weights: None,
        }
    }
}

/// The JSON file mirrors `RunConfig` field names; every field optional.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    preset: Option<String>,
    image_size: Option<usize>,
    batch_size: Option<usize>,
    steps: Option<u64>,
    learning_rate: Option<f64>,
    adam_beta1: Option<f64>,
    adam_beta2: Option<f64>,
    seed: Option<u64>,
    lambda_r: Option<f64>,
    lambda_p: Option<f64>,
    lambda_s: Option<f64>,
    lambda_adv: Option<f64>,
    lambda_st: Option<f64>,
    lambda_te: Option<f64>,
    manifest: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    checkpoint_every: Option<u64>,
    extractor_weights: Option<PathBuf>,
}

/// Flag-level overrides; identical shape to the file, filled by clap.
#[derive(Default, Clone)]
pub struct Overrides {
    pub preset: Option<String>,
    pub image_size: Option<usize>,
    pub batch_size: Option<usize>,
    pub steps: Option<u64>,
    pub learning_rate: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub seed: Option<u64>,
    pub lambda_r: Option<f64>,
    pub lambda_p: Option<f64>,
    pub lambda_s: Option<f64>,
    pub lambda_adv: Option<f64>,
    pub lambda_st: Option<f64>,
    pub lambda_te: Option<f64>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint_every: Option<u64>,
    pub extractor_weights: Option<PathBuf>,
}

impl RunConfig {
    /// defaults ← config file ← flags, then validation.
    pub fn resolve(config_path: Option<&Path>, flags: &Overrides) -> CliResult<RunConfig> {
        let file: FileConfig = match config_path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };

        // preset first: it sets the size default
        let preset_name = flags
            .preset
            .clone()
            .or(file.preset)
            .unwrap_or_else(|| "desk".into());
        let preset = Preset::parse(&preset_name)?;

        let mut cfg = RunConfig {
            preset,
            image_size: preset.default_image_size(),
            ..RunConfig::default()
        };
        macro_rules! merge {
            ($($field:ident),+) => {
                $(
                    if let Some(v) = file.$field.clone() {
                        cfg.$field = v;
                    }
                    if let Some(v) = flags.$field.clone() {
                        cfg.$field = v;
                    }
                )+
            };
        }
        merge!(
            image_size,
            batch_size,
            steps,
            learning_rate,
            adam_beta1,
            adam_beta2,
            seed,
            lambda_r,
            lambda_p,
            lambda_s,
            lambda_adv,
            lambda_st,
            lambda_te,
            checkpoint_every
        );
        if let Some(v) = file.manifest {
            cfg.manifest = Some(v);
        }
        if let Some(v) = flags.manifest.clone() {
            cfg.manifest = Some(v);
        }
        if let Some(v) = file.checkpoint {
            cfg.checkpoint = Some(v);
        }
        if let Some(v) = flags.checkpoint.clone() {
            cfg.checkpoint = Some(v);
        }
        if let Some(v) = file.out_dir {
            cfg.out_dir = v;
        }
        if let Some(v) = flags.out_dir.clone() {
            cfg.out_dir = v;
        }
        if let Some(v) = file.extractor_weights {
            cfg.extractor_weights = Some(v);
        }
        if let Some(v) = flags.extractor_weights.clone() {
            cfg.extractor_weights = Some(v);
        }

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.learning_rate <= 0.0 {
            return Err(CliError::Contract(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.image_size % 32 != 0 || self.image_size == 0 {
            return Err(CliError::Contract(format!(
                "image size must be a positive multiple of 32, got {}",
                self.image_size
            )));
        }
        if self.batch_size == 0 {
            return Err(CliError::Contract("batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_r: self.lambda_r,
            lambda_p: self.lambda_p,
            lambda_s: self.lambda_s,
            lambda_adv: self.lambda_adv,
            lambda_st: self.lambda_st,
            lambda_te: self.lambda_te,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            adam_betas: (self.adam_beta1, self.adam_beta2),
            seed: self.seed,
            weights: self.loss_weights(),
        }
    }
}

/// MEDFE_THREADS caps the crate's only parallel region (dataset
/// generation workers); the numeric kernels are single-threaded.
pub fn max_threads() -> usize {
    std::env::var("MEDFE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}
