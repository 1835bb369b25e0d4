use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::blocks::{BlockConfig, Domain};
use crate::error::{param_err, Result};
use crate::fourier::DcWeight;

pub const MODEL_CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ImageOnly,
    Dual,
    DualWithReference,
}

/// Which domain's block runs first inside a dual recurrence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    #[default]
    KspaceFirst,
    ImageFirst,
}

fn default_version() -> u32 {
    MODEL_CONFIG_VERSION
}

fn default_recurrences() -> usize {
    2
}

fn default_beta() -> f64 {
    0.01
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub mode: Mode,
    #[serde(default = "default_recurrences")]
    pub recurrences: usize,
    #[serde(default)]
    pub lambda: DcWeight,
    #[serde(default)]
    pub block: BlockConfig,
    #[serde(default)]
    pub glim_domains: BTreeSet<Domain>,
    #[serde(default)]
    pub plde_domains: BTreeSet<Domain>,
    /// One set of weights per domain shared by every recurrence.
    #[serde(default = "default_true")]
    pub tied_weights: bool,
    #[serde(default)]
    pub order: Order,
    /// Weight of the k-space term in the training loss.
    #[serde(default = "default_beta")]
    pub kspace_loss_weight: f64,
}

impl ModelConfig {
    pub fn new(mode: Mode, block: BlockConfig) -> Self {
        Self {
            version: MODEL_CONFIG_VERSION,
            mode,
            recurrences: 2,
            lambda: DcWeight::Hard,
            block,
            glim_domains: BTreeSet::new(),
            plde_domains: BTreeSet::new(),
            tied_weights: true,
            order: Order::KspaceFirst,
            kspace_loss_weight: default_beta(),
        }
    }

    /// Attention on k-space, local branch on the image.
    pub fn full(mode: Mode, block: BlockConfig) -> Self {
        let mut c = Self::new(mode, block);
        c.glim_domains.insert(Domain::Kspace);
        c.plde_domains.insert(Domain::Image);
        c
    }

    pub fn uses_kspace(&self) -> bool {
        self.mode != Mode::ImageOnly
    }

    pub fn uses_reference(&self) -> bool {
        self.mode == Mode::DualWithReference
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_CONFIG_VERSION {
            return param_err(format!(
                "model config version {} (supported: {MODEL_CONFIG_VERSION})",
                self.version
            ));
        }
        if self.recurrences == 0 {
            return param_err("recurrences must be at least 1");
        }
        self.lambda.validate()?;
        self.block.validate()?;
        if !self.kspace_loss_weight.is_finite() || self.kspace_loss_weight < 0.0 {
            return param_err(format!(
                "kspace_loss_weight must be finite and >= 0, got {}",
                self.kspace_loss_weight
            ));
        }
        if !self.uses_kspace()
            && (self.glim_domains.contains(&Domain::Kspace)
                || self.plde_domains.contains(&Domain::Kspace))
        {
            return param_err("image_only mode admits only image-domain module placement");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_defaults() {
        let c = ModelConfig::full(Mode::Dual, BlockConfig::with_channels(8));
        let back = ModelConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        let minimal = ModelConfig::from_json(r#"{"mode": "image_only"}"#).unwrap();
        assert_eq!(minimal.recurrences, 2);
        assert_eq!(minimal.lambda, DcWeight::Hard);
        assert!(minimal.tied_weights);
        let soft = ModelConfig::from_json(r#"{"mode": "dual", "lambda": 0.5}"#).unwrap();
        assert_eq!(soft.lambda, DcWeight::Soft(0.5));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ModelConfig::from_json(r#"{"mode": "dual", "extra": 1}"#).is_err());
        assert!(ModelConfig::from_json(r#"{"mode": "dual", "recurrences": 0}"#).is_err());
        assert!(ModelConfig::from_json(r#"{"mode": "dual", "version": 7}"#).is_err());
        assert!(
            ModelConfig::from_json(r#"{"mode": "image_only", "glim_domains": ["kspace"]}"#)
                .is_err()
        );
        assert!(
            ModelConfig::from_json(r#"{"mode": "image_only", "plde_domains": ["image"]}"#).is_ok()
        );
        assert!(ModelConfig::from_json(r#"{"mode": "dual", "lambda": -1}"#).is_err());
    }
}
