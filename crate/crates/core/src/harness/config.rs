use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::clip::Backbone;
use crate::data::Dialect;
use crate::error::{Error, Result};
use crate::vqa::{BanConfig, CdaeConfig};

/// Training schedule family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Mevf,
    Qcr,
}

impl Profile {
    pub fn schedule(self) -> Schedule {
        match self {
            Profile::Mevf => Schedule {
                epochs: 20,
                batch_size: 32,
                learning_rate: 2e-3,
            },
            Profile::Qcr => Schedule {
                epochs: 200,
                batch_size: 16,
                learning_rate: 1e-3,
            },
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Mevf => "mevf",
            Profile::Qcr => "qcr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

/// Visual encoder choice for the VQA model. The meta-learned baseline encoder
/// is named so configurations can refer to it, but it is not implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualBackbone {
    MamlStubExcluded,
    #[serde(rename = "vit_b32")]
    VitB32,
    #[default]
    Rn50,
    Rn50x4,
}

impl VisualBackbone {
    pub fn encoder(self) -> Result<Backbone> {
        match self {
            VisualBackbone::MamlStubExcluded => Err(Error::ConfigInvalid(
                "the maml_stub_excluded backbone is a placeholder and cannot be trained".into(),
            )),
            VisualBackbone::VitB32 => Ok(Backbone::VitB32),
            VisualBackbone::Rn50 => Ok(Backbone::Rn50),
            VisualBackbone::Rn50x4 => Ok(Backbone::Rn50x4),
        }
    }
}

/// Sizes of the VQA model components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub hidden: usize,
    pub max_tokens: usize,
    pub ban: BanConfig,
    pub cdae: CdaeConfig,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            hidden: 1024,
            max_tokens: 12,
            ban: BanConfig::default(),
            cdae: CdaeConfig::default(),
        }
    }
}

impl ModelSettings {
    /// Small widths for CPU smoke runs.
    pub fn tiny() -> Self {
        Self {
            hidden: 32,
            max_tokens: 12,
            ban: BanConfig {
                glimpses: 2,
                joint_dim: 32,
            },
            cdae: CdaeConfig::tiny(),
        }
    }
}

/// A VQA experiment. `epochs`, `batch_size` and `learning_rate` fall back to
/// the profile's schedule when unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub backbone: VisualBackbone,
    /// Contrastive checkpoint providing the visual tower.
    pub checkpoint_in: Option<PathBuf>,
    pub dataset: Dialect,
    pub repetitions: usize,
    pub seed_base: u64,
    pub deterministic: bool,
    pub model: ModelSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Mevf,
            epochs: None,
            batch_size: None,
            learning_rate: None,
            backbone: VisualBackbone::Rn50,
            checkpoint_in: None,
            dataset: Dialect::Rad,
            repetitions: 10,
            seed_base: 0,
            deterministic: false,
            model: ModelSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn schedule(&self) -> Schedule {
        let base = self.profile.schedule();
        Schedule {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.schedule();
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if s.epochs < 1 {
            return bad("vqa epochs must be at least 1");
        }
        if s.batch_size < 1 {
            return bad("vqa batch_size must be at least 1");
        }
        if !(s.learning_rate > 0.0 && s.learning_rate.is_finite()) {
            return bad("vqa learning_rate must be positive");
        }
        if self.repetitions < 1 {
            return bad("vqa repetitions must be at least 1");
        }
        if self.model.hidden == 0 || self.model.max_tokens == 0 {
            return bad("vqa model hidden and max_tokens must be positive");
        }
        self.model.cdae.validate()?;
        self.backbone.encoder()?;
        Ok(())
    }

    /// Seed of repetition `run`.
    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed_base.wrapping_add(run as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_defaults() {
        let mevf = ExperimentConfig::default().schedule();
        assert_eq!((mevf.epochs, mevf.batch_size, mevf.learning_rate), (20, 32, 2e-3));
        let qcr = ExperimentConfig {
            profile: Profile::Qcr,
            ..Default::default()
        }
        .schedule();
        assert_eq!((qcr.epochs, qcr.batch_size, qcr.learning_rate), (200, 16, 1e-3));
        let over = ExperimentConfig {
            profile: Profile::Qcr,
            epochs: Some(3),
            ..Default::default()
        }
        .schedule();
        assert_eq!((over.epochs, over.batch_size), (3, 16));
    }

    #[test]
    fn stub_backbone_rejected() {
        let c = ExperimentConfig {
            backbone: VisualBackbone::MamlStubExcluded,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));
        let c = ExperimentConfig {
            epochs: Some(0),
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));
        assert_eq!(
            ExperimentConfig {
                seed_base: 7,
                ..Default::default()
            }
            .run_seed(3),
            10
        );
    }

    #[test]
    fn serde_names() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"profile":"qcr","backbone":"vit_b32","dataset":"slake"}"#).unwrap();
        assert_eq!(
            (c.profile, c.backbone, c.dataset),
            (Profile::Qcr, VisualBackbone::VitB32, Dialect::Slake)
        );
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"epoch":3}"#).is_err());
    }
}
