use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::blocks::BlockConfig;
use crate::data::{DatasetSpec, PhantomSpec};
use crate::model::{Mode, ModelConfig};

/// Dataset, model and schedule bundled under one name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preset {
    pub data: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Feature width of the desk-scale networks.
pub const DESK_CHANNELS: usize = 8;

impl Default for Preset {
    fn default() -> Self {
        Self::desk()
    }
}

impl Preset {
    /// 64x64 phantoms, 30 epochs, small enough for a single CPU core.
    pub fn desk() -> Self {
        Self {
            data: DatasetSpec::default(),
            model: ModelConfig::full(Mode::Dual, BlockConfig::with_channels(DESK_CHANNELS)),
            train: TrainConfig {
                train_limit: Some(32),
                val_limit: Some(8),
                ..TrainConfig::default()
            },
        }
    }

    /// Shorter schedule shared by every row of the placement ablation.
    pub fn ablation() -> Self {
        let desk = Self::desk();
        Self {
            train: TrainConfig {
                epochs: 8,
                lr_decay_every: 6,
                train_limit: Some(16),
                val_limit: Some(4),
                ..desk.train
            },
            ..desk
        }
    }

    /// Full-width network with the long schedule; far beyond desk compute.
    pub fn full() -> Self {
        Self {
            data: DatasetSpec::default(),
            model: ModelConfig::full(Mode::DualWithReference, BlockConfig::with_channels(54)),
            train: TrainConfig {
                epochs: 100,
                lr_decay_every: 60,
                ..TrainConfig::default()
            },
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "ablation" => Some(Self::ablation()),
            "full" => Some(Self::full()),
            _ => None,
        }
    }

    pub fn phantom(&self) -> &PhantomSpec {
        &self.data.phantom
    }
}
