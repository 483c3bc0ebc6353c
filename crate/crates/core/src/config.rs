//! Run configuration: one JSON document that pins every knob of a run.
//!
//! The two ablation toggles select the four experiment arms: with both
//! off, training sees clean bicubic pairs and evaluation adds no
//! conditioning noise, which is the plain conditional-diffusion baseline.

use crate::data::ScaleProfile;
use crate::degrade::DegradeConfig;
use crate::diffusion::NcaConfig;
use crate::error::{Error, Result};
use crate::metrics::FeatureExtractor;
use crate::nn::{TrainConfig, UNetConfig};
use crate::schedule::{DiffusionStepPlan, NoiseSchedule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileChoice {
    Named(String),
    Explicit(ScaleProfile),
}

impl ProfileChoice {
    pub fn resolve(&self) -> Result<ScaleProfile> {
        let profile = match self {
            ProfileChoice::Named(name) => ScaleProfile::named(name)
                .ok_or_else(|| Error::invalid(format!("unknown scale profile '{name}'")))?,
            ProfileChoice::Explicit(p) => *p,
        };
        profile.validate()?;
        Ok(profile)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub steps: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self { steps: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub scale_profile: ProfileChoice,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerSpec,
    pub nca: NcaConfig,
    pub unet: UNetConfig,
    pub train: TrainConfig,
    #[serde(default = "DegradeConfig::default")]
    pub degrade: DegradeConfig,
    #[serde(default = "FeatureExtractor::default")]
    pub extractor: FeatureExtractor,
    pub use_degradations: bool,
    pub use_nca: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            scale_profile: ProfileChoice::Named("desk".to_string()),
            schedule: NoiseSchedule::default(),
            sampler: SamplerSpec::default(),
            nca: NcaConfig::default(),
            unet: UNetConfig::default(),
            train: TrainConfig::default(),
            degrade: DegradeConfig::default(),
            extractor: FeatureExtractor::default(),
            use_degradations: true,
            use_nca: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported config schema {}",
                self.schema_version
            )));
        }
        let profile = self.scale_profile.resolve()?;
        self.unet.validate()?;
        self.train.validate()?;
        NcaConfig::new(self.nca.tau_max, self.nca.t_eval)?;
        if self.sampler.steps == 0 {
            return Err(Error::invalid("sampler.steps must be positive"));
        }
        let div = self.unet.spatial_divisor();
        if profile.model_crop % div != 0 {
            return Err(Error::invalid(format!(
                "model_crop {} must be divisible by the UNet spatial divisor {div}",
                profile.model_crop
            )));
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<ScaleProfile> {
        self.scale_profile.resolve()
    }

    pub fn plan(&self) -> Result<DiffusionStepPlan> {
        DiffusionStepPlan::new(self.sampler.steps)
    }

    /// τ_max actually used in training: 0 when NCA is ablated.
    pub fn effective_tau_max(&self) -> f64 {
        if self.use_nca {
            self.nca.tau_max
        } else {
            0.0
        }
    }

    /// t_eval actually used at test time: 0 when NCA is ablated.
    pub fn effective_t_eval(&self) -> f64 {
        if self.use_nca {
            self.nca.t_eval
        } else {
            0.0
        }
    }

    /// The degradation config for training-pair synthesis, or None when
    /// the higher-order degradations are ablated (plain bicubic pairs).
    pub fn train_degrade(&self) -> Option<DegradeConfig> {
        self.use_degradations.then_some(self.degrade)
    }

    /// Short hash of the canonical JSON; distinct per ablation arm.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        format!("{:x}", h.finalize())[..16].to_string()
    }
}

pub fn read_run_config(path: &Path) -> Result<RunConfig> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let cfg: RunConfig = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_run_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    let json = serde_json::to_string_pretty(cfg).expect("config serializes");
    fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        write_run_config(&p, &cfg).unwrap();
        let back = read_run_config(&p).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn four_ablation_arms_have_distinct_hashes() {
        let mut hashes = Vec::new();
        for (deg, nca) in [(true, true), (true, false), (false, true), (false, false)] {
            let cfg = RunConfig {
                use_degradations: deg,
                use_nca: nca,
                ..Default::default()
            };
            hashes.push(cfg.hash());
        }
        hashes.sort();
        hashes.dedup();
        assert_eq!(hashes.len(), 4);
    }

    #[test]
    fn sr3_arm_disables_both_augmentations() {
        let cfg = RunConfig {
            use_degradations: false,
            use_nca: false,
            ..Default::default()
        };
        assert_eq!(cfg.effective_tau_max(), 0.0);
        assert_eq!(cfg.effective_t_eval(), 0.0);
        assert!(cfg.train_degrade().is_none());
    }

    #[test]
    fn named_profile_resolves() {
        let cfg = RunConfig {
            scale_profile: ProfileChoice::Named("tiny".to_string()),
            ..Default::default()
        };
        assert_eq!(cfg.profile().unwrap(), ScaleProfile::tiny());
        let bad = RunConfig {
            scale_profile: ProfileChoice::Named("giant".to_string()),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn schedule_spec_shape_in_json() {
        let cfg = RunConfig::default();
        let json = serde_json::to_value(&cfg).unwrap();
        assert_eq!(json["schedule"]["kind"], "cosine_logsnr");
        assert_eq!(json["schedule"]["clamp"][0], -20.0);
        assert_eq!(json["sampler"]["steps"], 256);
    }
}
