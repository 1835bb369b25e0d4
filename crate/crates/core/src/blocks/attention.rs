//! Channel-wise multi-head self-attention.
//!
//! Tokens are the channel vectors (length `h*w`), so each head builds a
//! `d x d` attention map between channels. Cost is linear in the pixel count.

use rand::Rng;

use super::layers::{Conv, ConvSpec};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{shape_err, Result};

#[derive(Clone, Debug)]
pub struct ChannelMsa {
    pub q: Conv,
    pub k: Conv,
    pub v: Conv,
    /// Zero-initialised, so the block starts as the identity.
    pub out: Conv,
    pub heads: usize,
    pub head_dim: usize,
}

impl ChannelMsa {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        heads: usize,
        head_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return shape_err(format!(
                "{name}: channels {channels} not divisible by heads {heads}"
            ));
        }
        let inner = heads * head_dim;
        Ok(Self {
            q: Conv::register(
                store,
                &format!("{name}.q"),
                ConvSpec::new(channels, inner, 1),
                rng,
            )?,
            k: Conv::register(
                store,
                &format!("{name}.k"),
                ConvSpec::new(channels, inner, 1),
                rng,
            )?,
            v: Conv::register(
                store,
                &format!("{name}.v"),
                ConvSpec::new(channels, inner, 1),
                rng,
            )?,
            out: Conv::register(
                store,
                &format!("{name}.out"),
                ConvSpec::new(inner, channels, 1).zeroed(),
                rng,
            )?,
            heads,
            head_dim,
        })
    }

    pub fn apply(&self, t: &Tape, s: &ParamStore, x: Var) -> Result<Var> {
        Ok(self.apply_with_attention(t, s, x)?.0)
    }

    /// Output and the `(B*heads, d, d)` attention map.
    pub fn apply_with_attention(&self, t: &Tape, s: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let shape = t.shape(x);
        let &[b, c, h, w] = &shape[..] else {
            return shape_err(format!("channel attention expects NCHW, got {shape:?}"));
        };
        if c != self.q.cin {
            return shape_err(format!(
                "channel attention built for {} channels, got {c}",
                self.q.cin
            ));
        }
        let tokens = [b * self.heads, self.head_dim, h * w];
        let q = t.reshape(self.q.apply(t, s, x)?, &tokens)?;
        let k = t.reshape(self.k.apply(t, s, x)?, &tokens)?;
        let v = t.reshape(self.v.apply(t, s, x)?, &tokens)?;
        let logits = t.scale(t.matmul(q, k, true)?, 1.0 / (self.head_dim as f64).sqrt());
        let attn = t.softmax_last(logits)?;
        let z = t.reshape(
            t.matmul(attn, v, false)?,
            &[b, self.heads * self.head_dim, h, w],
        )?;
        let y = self.out.apply(t, s, z)?;
        Ok((t.add(x, y)?, attn))
    }

    pub fn param_count(&self) -> usize {
        self.q.param_count() + self.k.param_count() + self.v.param_count() + self.out.param_count()
    }
}
