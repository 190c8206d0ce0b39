//! Run configuration: defaults, overlaid by an optional JSON file, overlaid
//! by command-line flags. The resolved value is fully explicit and is
//! echoed into every run directory; feeding the echo back as `--config`
//! reproduces the run.

use std::path::{Path, PathBuf};

use robofi_core::models::{ModelConfig, ModelKind};
use robofi_core::preprocess::SubcarrierMask;
use robofi_core::synth::SynthSpec;
use robofi_core::train::{SplitSpec, TrainConfig};
use robofi_core::types::SUPPORTED_RATES;
use robofi_core::{Location, Velocity};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{read_json_file, ContainerError};
use crate::protocols::{Experiment, LocationSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    File(#[from] ContainerError),
    #[error("unknown model preset `{0}` (known: paper, tiny)")]
    UnknownPreset(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: Vec<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// Worker threads; `None` uses every logical core. Never affects results.
    pub workers: Option<usize>,
    pub rate_hz: u32,
    /// Restricts the loaded samples to one velocity tier.
    pub velocity: Option<Velocity>,
    /// Restricts the loaded samples to one placement.
    pub location: Option<Location>,
    pub model_preset: String,
    pub model: ModelConfig,
    pub kind: ModelKind,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub synth: SynthSpec,
    pub location_counts: LocationSpec,
    pub sweep_rates: Vec<u32>,
    pub adapter: String,
    /// Subcarrier mask used by the capture importer; `None` keeps the
    /// default 80 MHz mask.
    pub mask: Option<SubcarrierMask>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: Vec::new(),
            out: PathBuf::from("runs"),
            seed: 0,
            workers: None,
            rate_hz: 30,
            velocity: None,
            location: None,
            model_preset: "paper".into(),
            model: ModelConfig::paper(),
            kind: ModelKind::Bivtc,
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            synth: SynthSpec::default(),
            location_counts: LocationSpec::default(),
            sweep_rates: SUPPORTED_RATES.to_vec(),
            adapter: "identity".into(),
            mask: None,
            checkpoint: None,
        }
    }
}

/// Partial configuration as read from a file; absent keys keep the
/// default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub dataset: Option<Vec<PathBuf>>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub rate_hz: Option<u32>,
    pub velocity: Option<Velocity>,
    pub location: Option<Location>,
    pub model_preset: Option<String>,
    pub model: Option<ModelConfig>,
    pub kind: Option<ModelKind>,
    pub train: Option<TrainConfig>,
    pub split: Option<SplitSpec>,
    pub synth: Option<SynthSpec>,
    pub location_counts: Option<LocationSpec>,
    pub sweep_rates: Option<Vec<u32>>,
    pub adapter: Option<String>,
    pub mask: Option<SubcarrierMask>,
    pub checkpoint: Option<PathBuf>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        Ok(read_json_file(path)?)
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub dataset: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub rate_hz: Option<u32>,
    pub velocity: Option<Velocity>,
    pub location: Option<Location>,
    pub model_preset: Option<String>,
    pub kind: Option<ModelKind>,
    pub adapter: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub max_epochs: Option<usize>,
}

fn preset(name: &str) -> Result<ModelConfig, ConfigError> {
    ModelConfig::preset(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))
}

impl RunConfig {
    /// Defaults, then `file`, then `flags`. A preset named by a flag
    /// replaces any model given in the file; a preset named only in the
    /// file applies when the file gives no explicit model.
    pub fn resolve(file: Option<ConfigFile>, flags: &Overrides) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        if let Some(f) = file {
            macro_rules! take {
                ($($field:ident),*) => { $(if let Some(v) = f.$field { c.$field = v; })* };
            }
            take!(dataset, out, seed, rate_hz, model_preset, kind, train, split, synth, location_counts, sweep_rates, adapter);
            c.workers = f.workers.or(c.workers);
            c.velocity = f.velocity.or(c.velocity);
            c.location = f.location.or(c.location);
            c.mask = f.mask.or(c.mask);
            c.checkpoint = f.checkpoint.or(c.checkpoint);
            c.model = match f.model {
                Some(m) => m,
                None => preset(&c.model_preset)?,
            };
        }
        if !flags.dataset.is_empty() {
            c.dataset = flags.dataset.clone();
        }
        if let Some(p) = &flags.model_preset {
            c.model = preset(p)?;
            c.model_preset = p.clone();
        }
        macro_rules! flag {
            ($($field:ident),*) => { $(if let Some(v) = flags.$field.clone() { c.$field = v; })* };
        }
        flag!(out, seed, rate_hz, kind, adapter);
        c.workers = flags.workers.or(c.workers);
        c.velocity = flags.velocity.or(c.velocity);
        c.location = flags.location.or(c.location);
        c.checkpoint = flags.checkpoint.clone().or(c.checkpoint);
        if let Some(e) = flags.max_epochs {
            c.train.max_epochs = e;
        }
        // one seed drives every stream of the run
        c.train.seed = c.seed;
        c.synth.seed = c.seed;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.model.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        self.split.validate().map_err(|e| invalid(&e))?;
        self.synth.validate().map_err(|e| invalid(&e))?;
        if !SUPPORTED_RATES.contains(&self.rate_hz) {
            return Err(ConfigError::Invalid(format!("unsupported rate {} Hz", self.rate_hz)));
        }
        if let Some(r) = self.sweep_rates.iter().find(|r| !SUPPORTED_RATES.contains(r)) {
            return Err(ConfigError::Invalid(format!("unsupported sweep rate {r} Hz")));
        }
        if self.workers == Some(0) {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if let Some(m) = &self.mask {
            SubcarrierMask::new(m.keep().to_vec()).map_err(|e| invalid(&e))?;
        }
        Ok(())
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            model: self.model.clone(),
            kind: self.kind,
            train: self.train.clone(),
            split: self.split.clone(),
            rate_hz: self.rate_hz,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = ConfigFile { seed: Some(7), rate_hz: Some(20), out: Some("a".into()), ..ConfigFile::default() };
        let flags = Overrides { seed: Some(9), ..Overrides::default() };
        let c = RunConfig::resolve(Some(file), &flags).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.rate_hz, 20);
        assert_eq!(c.out, PathBuf::from("a"));
        assert_eq!(c.split, SplitSpec::default());
    }

    #[test]
    fn presets_resolve_and_echo_round_trips() {
        let file = ConfigFile { model_preset: Some("tiny".into()), ..ConfigFile::default() };
        let c = RunConfig::resolve(Some(file), &Overrides::default()).unwrap();
        assert_eq!(c.model, ModelConfig::tiny());
        let flags = Overrides { model_preset: Some("paper".into()), ..Overrides::default() };
        let c = RunConfig::resolve(None, &flags).unwrap();
        assert_eq!(c.model, ModelConfig::paper());

        let echo: ConfigFile = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(RunConfig::resolve(Some(echo), &Overrides::default()).unwrap(), c);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let zero = Overrides { max_epochs: Some(0), ..Overrides::default() };
        assert!(matches!(RunConfig::resolve(None, &zero), Err(ConfigError::Invalid(_))));
        let bad = Overrides { model_preset: Some("huge".into()), ..Overrides::default() };
        assert!(matches!(RunConfig::resolve(None, &bad), Err(ConfigError::UnknownPreset(_))));
        let rate = Overrides { rate_hz: Some(12), ..Overrides::default() };
        assert!(RunConfig::resolve(None, &rate).is_err());
    }
}
