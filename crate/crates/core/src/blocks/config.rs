use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

/// Which signal a block operates on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Image,
    Kspace,
}

impl Domain {
    pub fn tag(self) -> &'static str {
        match self {
            Domain::Image => "img",
            Domain::Kspace => "ksp",
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::Image => "image",
            Domain::Kspace => "kspace",
        })
    }
}

impl std::str::FromStr for Domain {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "image" | "img" => Ok(Domain::Image),
            "kspace" | "k" | "ksp" => Ok(Domain::Kspace),
            other => param_err(format!(
                "unknown domain `{other}` (expected image or kspace)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub channels: usize,
    /// Channels added by each dense layer.
    pub growth: usize,
    pub stage_count: usize,
    pub heads: usize,
    /// Projected width per attention head.
    pub head_dim: usize,
    /// One entry per dense layer.
    pub dilations: Vec<usize>,
    pub plde_hidden: usize,
    /// Side of the square windows used by the local embedding.
    pub window: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self::with_channels(32)
    }
}

impl BlockConfig {
    /// Defaults scaled to `channels`: growth C/2, four stages, two heads,
    /// dilations [1, 2, 4, 1].
    pub fn with_channels(channels: usize) -> Self {
        let heads = if channels % 2 == 0 { 2 } else { 1 };
        Self {
            channels,
            growth: (channels / 2).max(1),
            stage_count: 4,
            heads,
            head_dim: channels / heads,
            dilations: vec![1, 2, 4, 1],
            plde_hidden: channels,
            window: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("growth", self.growth),
            ("stage_count", self.stage_count),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("plde_hidden", self.plde_hidden),
            ("window", self.window),
        ];
        for (name, v) in positive {
            if v == 0 {
                return param_err(format!("block.{name} must be at least 1"));
            }
        }
        if self.channels % self.heads != 0 {
            return param_err(format!(
                "block.channels {} not divisible by heads {}",
                self.channels, self.heads
            ));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return param_err(format!(
                "block.dilations must be non-empty and positive, got {:?}",
                self.dilations
            ));
        }
        Ok(())
    }
}
