//! JSON run configuration: a model preset with optional field overrides,
//! plus training, data and path settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::ViTConfig;
use crate::error::{Error, Result};
use crate::trainkit::{ToyDatasetConfig, TrainConfig};

/// Environment variable that replaces `train.seed`.
pub const SEED_ENV: &str = "SIMVOS_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Toy,
    #[default]
    Base,
    Large,
}

impl Preset {
    pub fn config(self) -> ViTConfig {
        match self {
            Preset::Toy => ViTConfig::toy(),
            Preset::Base => ViTConfig::base(),
            Preset::Large => ViTConfig::large(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub num_layers: Option<usize>,
    pub embed_dim: Option<usize>,
    pub num_heads: Option<usize>,
    pub patch_size: Option<usize>,
    pub within_frame_layers: Option<usize>,
    pub token_refinement: Option<bool>,
    pub fg_prototypes: Option<usize>,
    pub bg_prototypes: Option<usize>,
    pub mlp_ratio: Option<usize>,
}

impl ModelOverrides {
    pub fn apply(&self, mut c: ViTConfig) -> ViTConfig {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(
            num_layers,
            embed_dim,
            num_heads,
            patch_size,
            within_frame_layers,
            token_refinement,
            fg_prototypes,
            bg_prototypes,
            mlp_ratio
        );
        c
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Weights used by `infer` when no checkpoint flag is given.
    pub checkpoint: Option<PathBuf>,
    /// Loss curve written by `train-toy`; defaults next to the checkpoint.
    pub loss_csv: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub model: ModelOverrides,
    pub train: TrainConfig,
    pub data: ToyDatasetConfig,
    pub paths: Paths,
}

impl RunConfig {
    /// Toy preset with the trainer defaults.
    pub fn toy() -> Self {
        Self { preset: Preset::Toy, ..Self::default() }
    }

    pub fn vit(&self) -> Result<ViTConfig> {
        let c = self.model.apply(self.preset.config());
        c.validate()?;
        Ok(c)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.vit()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Apply `SIMVOS_SEED` when it is set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.train.seed = v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an integer")))?;
        }
        Ok(self)
    }
}
