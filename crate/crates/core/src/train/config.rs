use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offload::{validate_chunk_bytes, DEFAULT_CHUNK_BYTES};
use crate::optim::{Hyperparams, DEFAULT_MAX_DEFER};
use crate::render::RenderConfig;
use crate::scene::SynthConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Single arena, dense Adam over every Gaussian each step.
    DenseOracle,
    OffloadSerial,
    OffloadPipelined,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSource {
    Synth(SynthConfig),
    /// Directory with `cameras.json` and `points.ply`.
    Dataset(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    pub enabled: bool,
    pub interval: u64,
    /// First and last iteration (exclusive) at which densification may run.
    pub start: u64,
    pub stop: u64,
    /// Mean screen-space positional gradient, in normalized device units.
    pub grad_threshold: f64,
    /// Gaussians larger than this fraction of the scene extent are split,
    /// smaller ones cloned.
    pub percent_dense: f64,
    pub prune_opacity: f64,
    /// Split children get the parent's scale divided by this factor.
    pub split_factor: f64,
    /// No new Gaussians are added once the count reaches this bound.
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            interval: 100,
            start: 500,
            stop: 15_000,
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            split_factor: 1.6,
            max_gaussians: 1 << 22,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub scene: SceneSource,
    pub iterations: u64,
    /// SH degree of the trained Gaussians.
    pub sh_degree: u8,
    pub hp: Hyperparams,
    /// Defer limit of the host tier.
    pub defer_max: u8,
    /// Defer limit of the device tier.
    pub device_defer_max: u8,
    /// Views seeing more than this fraction of the Gaussians are split; 1
    /// disables splitting.
    pub mem_limit: f64,
    pub chunk_bytes: usize,
    pub densify: DensifyConfig,
    pub seed: u64,
    pub mode: Mode,
    /// Run everything in 64-bit precision with invariant checks.
    pub verify_f64: bool,
    pub render: RenderConfig,
    /// Every `holdout_every`-th view is held out for evaluation.
    pub holdout_every: usize,
    /// Record per-stage timings.
    pub timeline: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scene: SceneSource::Synth(SynthConfig::default()),
            iterations: 2000,
            sh_degree: 1,
            hp: Hyperparams::default(),
            defer_max: DEFAULT_MAX_DEFER,
            device_defer_max: 0,
            mem_limit: crate::split::DEFAULT_MEM_LIMIT,
            chunk_bytes: DEFAULT_CHUNK_BYTES,
            densify: DensifyConfig::default(),
            seed: 0,
            mode: Mode::OffloadPipelined,
            verify_f64: false,
            render: RenderConfig::default(),
            holdout_every: 8,
            timeline: false,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        validate_chunk_bytes(self.chunk_bytes)?;
        if self.sh_degree > crate::scene::MAX_SH_DEGREE {
            return Err(Error::Config(format!("sh_degree {} is above 3", self.sh_degree)));
        }
        if !(self.mem_limit > 0.0) {
            return Err(Error::Config(format!("mem_limit must be positive, got {}", self.mem_limit)));
        }
        if self.holdout_every < 2 {
            return Err(Error::Config("holdout_every must be at least 2".into()));
        }
        let d = &self.densify;
        if d.interval == 0
            || !(d.grad_threshold > 0.0)
            || !(d.percent_dense > 0.0)
            || !(d.prune_opacity > 0.0)
            || !(d.split_factor > 0.0)
        {
            return Err(Error::Config("densification thresholds and interval must be positive".into()));
        }
        let r = &self.render;
        if r.bands == 0 || !(r.cull_sigma > 0.0) || !(r.alpha_max > 0.0 && r.alpha_max < 1.0) {
            return Err(Error::Config("render config out of range".into()));
        }
        if let SceneSource::Synth(s) = &self.scene {
            if s.cameras < 2 || s.width == 0 || s.height == 0 {
                return Err(Error::Config("synthetic scene needs at least two cameras and a nonempty image".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: TrainConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back.mode, c.mode);
        assert_eq!(back.densify, c.densify);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"iterations": 5, "mode": "dense_oracle"}"#).unwrap();
        assert_eq!(c.iterations, 5);
        assert_eq!(c.mode, Mode::DenseOracle);
        assert_eq!(c.densify.interval, 100);
    }

    #[test]
    fn bad_thresholds_are_rejected() {
        let mut c = TrainConfig::default();
        c.densify.grad_threshold = 0.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = TrainConfig::default();
        c.chunk_bytes = 1000;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.mem_limit = -1.0;
        assert!(c.validate().is_err());
    }
}
