//! Run configuration: a TOML file layered over a dataset preset, then
//! overridden by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use contrack::contrastive::LossWeights;
use contrack::metrics::EvalConfig;
use contrack::simulator::SimulatorConfig;
use contrack::tracker::TrackerConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    #[default]
    Mot17,
    Bdd100k,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mot17" => Ok(Preset::Mot17),
            "bdd100k" => Ok(Preset::Bdd100k),
            other => Err(format!("unknown preset {other:?} (expected mot17 or bdd100k)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Mot17 => "mot17",
            Preset::Bdd100k => "bdd100k",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerParams {
    /// Videos per tracking batch.
    pub videos: usize,
    /// Frames per video in a tracking batch.
    pub frames: usize,
    /// Images per pre-training batch (each contributes two views).
    pub images: usize,
    pub seed: u64,
}

impl SamplerParams {
    pub fn mot17() -> Self {
        Self {
            videos: 2,
            frames: 8,
            images: 8,
            seed: 0,
        }
    }

    pub fn bdd100k() -> Self {
        Self {
            videos: 4,
            frames: 10,
            ..Self::mot17()
        }
    }
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self::mot17()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub gt: Option<PathBuf>,
    pub dets: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tracker: TrackerConfig,
    pub eval: EvalConfig,
    pub loss: LossWeights,
    pub sampler: SamplerParams,
    pub simulator: SimulatorConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Mot17)
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let (tracker, loss, sampler) = match p {
            Preset::Mot17 => (TrackerConfig::mot17(), LossWeights::mot17(), SamplerParams::mot17()),
            Preset::Bdd100k => (TrackerConfig::bdd100k(), LossWeights::bdd100k(), SamplerParams::bdd100k()),
        };
        Self {
            tracker,
            eval: EvalConfig::default(),
            loss,
            sampler,
            simulator: SimulatorConfig::default(),
            paths: Paths::default(),
        }
    }

    /// Preset defaults overlaid with the keys present in `text`.
    pub fn from_toml(text: &str, preset: Preset) -> Result<Self, CliError> {
        let file: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Invalid(format!("config: {e}")))?;
        let mut base = toml::Table::try_from(Self::preset(preset))
            .map_err(|e| CliError::Invalid(format!("config: {e}")))?;
        merge(&mut base, file);
        let cfg: RunConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, preset: Preset) -> Result<Self, CliError> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text, preset)
            }
            None => Ok(Self::preset(preset)),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.tracker.validate()?;
        self.loss.validate()?;
        self.simulator.validate()?;
        let t = self.eval.iou_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(CliError::Invalid(format!("eval.iou_threshold {t} outside (0, 1]")));
        }
        if self.sampler.videos == 0 || self.sampler.frames == 0 || self.sampler.images == 0 {
            return Err(CliError::Invalid("sampler sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
