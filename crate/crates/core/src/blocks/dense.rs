use rand::Rng;

use super::layers::{Conv, ConvSpec};
use crate::autodiff::{Init, ParamId, ParamStore, Tape, Var};
use crate::error::{shape_err, Result};

/// Dilated residual dense block.
#[derive(Clone, Debug)]
pub struct Drdb {
    pub layers: Vec<Conv>,
    pub fusion: Conv,
}

impl Drdb {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        growth: usize,
        dilations: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(dilations.len());
        for (i, &d) in dilations.iter().enumerate() {
            let cin = channels + i * growth;
            layers.push(Conv::register(
                store,
                &format!("{name}.dense{i}"),
                ConvSpec::new(cin, growth, 3).dilation(d),
                rng,
            )?);
        }
        let total = channels + dilations.len() * growth;
        let fusion = Conv::register(
            store,
            &format!("{name}.fusion"),
            ConvSpec::new(total, channels, 1),
            rng,
        )?;
        Ok(Self { layers, fusion })
    }

    /// Input width of every dense layer, then of the fusion layer.
    pub fn widths(&self) -> Vec<usize> {
        self.layers
            .iter()
            .chain([&self.fusion])
            .map(|c| c.cin)
            .collect()
    }

    pub fn apply(&self, t: &Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let mut feats = vec![x];
        for layer in &self.layers {
            let input = if feats.len() == 1 {
                x
            } else {
                t.concat_channels(&feats)?
            };
            feats.push(layer.apply_relu(t, s, input)?);
        }
        let fused = self.fusion.apply(t, s, t.concat_channels(&feats)?)?;
        t.add(fused, x)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv::param_count).sum::<usize>() + self.fusion.param_count()
    }
}

/// Local detail branch: 1x1 projection, three depthwise 3x3 convolutions
/// with SiLU, a shared per-window linear embedding, and a zero-initialised
/// 1x1 projection back.
#[derive(Clone, Debug)]
pub struct Plde {
    pub proj: Conv,
    pub depthwise: [Conv; 3],
    /// `(s*s, s*s)` matrix applied to every flattened window.
    pub embed: ParamId,
    pub window: usize,
    pub out: Conv,
}

impl Plde {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        hidden: usize,
        window: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let proj = Conv::register(
            store,
            &format!("{name}.proj"),
            ConvSpec::new(channels, hidden, 1),
            rng,
        )?;
        let mut dw = Vec::with_capacity(3);
        for i in 0..3 {
            dw.push(Conv::register(
                store,
                &format!("{name}.dw{i}"),
                ConvSpec::new(hidden, hidden, 3).depthwise(),
                rng,
            )?);
        }
        let n = window * window;
        let embed = store.register(&format!("{name}.embed"), &[n, n], Init::Identity, rng)?;
        let out = Conv::register(
            store,
            &format!("{name}.out"),
            ConvSpec::new(hidden, channels, 1).zeroed(),
            rng,
        )?;
        Ok(Self {
            proj,
            depthwise: dw.try_into().expect("three layers"),
            embed,
            window,
            out,
        })
    }

    pub fn apply(&self, t: &Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let shape = t.shape(x);
        if shape.len() != 4 || shape[2] % self.window != 0 || shape[3] % self.window != 0 {
            return shape_err(format!(
                "local branch needs planes divisible by window {}, got {shape:?}",
                self.window
            ));
        }
        let mut y = self.proj.apply(t, s, x)?;
        for dw in &self.depthwise {
            y = t.silu(dw.apply(t, s, y)?);
        }
        let y = t.window_embed(y, t.param(s, self.embed), self.window)?;
        self.out.apply(t, s, y)
    }

    pub fn param_count(&self) -> usize {
        self.proj.param_count()
            + self.depthwise.iter().map(Conv::param_count).sum::<usize>()
            + self.window.pow(4)
            + self.out.param_count()
    }
}
