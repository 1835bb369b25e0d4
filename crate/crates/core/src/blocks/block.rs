use rand::Rng;

use super::attention::ChannelMsa;
use super::config::{BlockConfig, Domain};
use super::dense::{Drdb, Plde};
use super::layers::{Conv, ConvSpec};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{shape_err, Result};

/// Two 3x3 convolutions with ReLU.
#[derive(Clone, Debug)]
pub struct Sfe {
    pub first: Conv,
    pub second: Conv,
}

impl Sfe {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            first: Conv::register(
                store,
                &format!("{name}.0"),
                ConvSpec::new(cin, channels, 3),
                rng,
            )?,
            second: Conv::register(
                store,
                &format!("{name}.1"),
                ConvSpec::new(channels, channels, 3),
                rng,
            )?,
        })
    }

    /// `(F_-1, F_0^C)`.
    pub fn apply(&self, t: &Tape, s: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let c = t.shape(x).get(1).copied().unwrap_or(0);
        if c != self.first.cin {
            return shape_err(format!(
                "feature extractor expects {} input channels, got {c}",
                self.first.cin
            ));
        }
        let f_minus1 = self.first.apply_relu(t, s, x)?;
        let f0c = self.second.apply_relu(t, s, f_minus1)?;
        Ok((f_minus1, f0c))
    }
}

/// One building block: dense branch plus the optional local branch.
#[derive(Clone, Debug)]
pub struct Stage {
    pub drdb: Drdb,
    pub plde: Option<Plde>,
}

impl Stage {
    pub fn apply(&self, t: &Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let y = self.drdb.apply(t, s, x)?;
        match &self.plde {
            Some(p) => t.add(y, p.apply(t, s, x)?),
            None => Ok(y),
        }
    }
}

/// Concatenation, 1x1 fusion, 3x3 convolution.
#[derive(Clone, Debug)]
pub struct Gff {
    pub fuse: Conv,
    pub conv: Conv,
    pub stages: usize,
}

impl Gff {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        stages: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            fuse: Conv::register(
                store,
                &format!("{name}.fuse"),
                ConvSpec::new(stages * channels, channels, 1),
                rng,
            )?,
            conv: Conv::register(
                store,
                &format!("{name}.conv"),
                ConvSpec::new(channels, channels, 3),
                rng,
            )?,
            stages,
        })
    }

    pub fn apply(&self, t: &Tape, s: &ParamStore, feats: &[Var]) -> Result<Var> {
        if feats.len() != self.stages {
            return shape_err(format!(
                "fusion built for {} stages, got {}",
                self.stages,
                feats.len()
            ));
        }
        let cat = t.concat_channels(feats)?;
        let y = self.fuse.apply(t, s, cat)?;
        self.conv.apply(t, s, y)
    }
}

/// Two 3x3 convolutions on `F_-1 + fused`; the last maps to (re, im) and
/// starts at zero.
#[derive(Clone, Debug)]
pub struct Gfr {
    pub first: Conv,
    pub last: Conv,
}

impl Gfr {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            first: Conv::register(
                store,
                &format!("{name}.0"),
                ConvSpec::new(channels, channels, 3),
                rng,
            )?,
            last: Conv::register(
                store,
                &format!("{name}.1"),
                ConvSpec::new(channels, 2, 3).zeroed(),
                rng,
            )?,
        })
    }

    pub fn apply(&self, t: &Tape, s: &ParamStore, f_minus1: Var, fused: Var) -> Result<Var> {
        let x = t.add(f_minus1, fused)?;
        let y = self.first.apply_relu(t, s, x)?;
        self.last.apply(t, s, y)
    }
}

/// Intermediate features of one block pass.
#[derive(Clone, Debug)]
pub struct FeatureMaps {
    pub f_minus1: Var,
    pub f0_c: Var,
    pub f0: Var,
    pub stages: Vec<Var>,
    pub fused: Var,
    pub refined: Var,
}

/// A domain-specific recurrent block mapping a 2-channel signal (optionally
/// with 2 guidance channels) to a refined 2-channel signal.
#[derive(Clone, Debug)]
pub struct RecurrentBlock {
    pub domain: Domain,
    pub sfe: Sfe,
    pub glim: Option<ChannelMsa>,
    pub stages: Vec<Stage>,
    pub gff: Gff,
    pub gfr: Gfr,
}

pub struct BlockOptions {
    pub in_channels: usize,
    pub glim: bool,
    pub plde: bool,
}

impl RecurrentBlock {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        cfg: &BlockConfig,
        domain: Domain,
        opts: BlockOptions,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let sfe = Sfe::register(store, &format!("{name}.sfe"), opts.in_channels, c, rng)?;
        let glim = if opts.glim {
            Some(ChannelMsa::register(
                store,
                &format!("{name}.glim"),
                c,
                cfg.heads,
                cfg.head_dim,
                rng,
            )?)
        } else {
            None
        };
        let mut stages = Vec::with_capacity(cfg.stage_count);
        for i in 0..cfg.stage_count {
            let prefix = format!("{name}.stage{i}");
            let drdb = Drdb::register(
                store,
                &format!("{prefix}.drdb"),
                c,
                cfg.growth,
                &cfg.dilations,
                rng,
            )?;
            let plde = if opts.plde {
                Some(Plde::register(
                    store,
                    &format!("{prefix}.plde"),
                    c,
                    cfg.plde_hidden,
                    cfg.window,
                    rng,
                )?)
            } else {
                None
            };
            stages.push(Stage { drdb, plde });
        }
        Ok(Self {
            domain,
            sfe,
            glim,
            gff: Gff::register(store, &format!("{name}.gff"), c, cfg.stage_count, rng)?,
            gfr: Gfr::register(store, &format!("{name}.gfr"), c, rng)?,
            stages,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.sfe.first.cin
    }

    /// Returns `base + x_r`, where `x_r` is the refinement computed from
    /// `input` and `base` is the current 2-channel estimate.
    pub fn apply(&self, t: &Tape, s: &ParamStore, input: Var, base: Var) -> Result<Var> {
        let maps = self.trace(t, s, input)?;
        t.add(base, maps.refined)
    }

    pub fn trace(&self, t: &Tape, s: &ParamStore, input: Var) -> Result<FeatureMaps> {
        let (f_minus1, f0_c) = self.sfe.apply(t, s, input)?;
        let f0 = match &self.glim {
            Some(m) => m.apply(t, s, f0_c)?,
            None => f0_c,
        };
        let mut stages = Vec::with_capacity(self.stages.len());
        let mut f = f0;
        for stage in &self.stages {
            f = stage.apply(t, s, f)?;
            stages.push(f);
        }
        let fused = self.gff.apply(t, s, &stages)?;
        let refined = self.gfr.apply(t, s, f_minus1, fused)?;
        Ok(FeatureMaps {
            f_minus1,
            f0_c,
            f0,
            stages,
            fused,
            refined,
        })
    }
}
