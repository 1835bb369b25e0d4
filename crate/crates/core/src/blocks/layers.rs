use rand::Rng;

use crate::autodiff::{Init, ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// A convolution whose weight and bias live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
}

pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
    pub zero: bool,
}

impl ConvSpec {
    pub fn new(cin: usize, cout: usize, kernel: usize) -> Self {
        Self {
            cin,
            cout,
            kernel,
            dilation: 1,
            groups: 1,
            zero: false,
        }
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn depthwise(mut self) -> Self {
        self.groups = self.cin;
        self
    }

    /// Zero weights, so the layer starts as the zero map.
    pub fn zeroed(mut self) -> Self {
        self.zero = true;
        self
    }
}

impl Conv {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        spec: ConvSpec,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let cin_g = spec.cin / spec.groups.max(1);
        let init = if spec.zero {
            Init::Zeros
        } else {
            Init::Kaiming {
                fan_in: cin_g * spec.kernel * spec.kernel,
            }
        };
        let weight = store.register(
            &format!("{name}.weight"),
            &[spec.cout, cin_g, spec.kernel, spec.kernel],
            init,
            rng,
        )?;
        let bias = store.register(&format!("{name}.bias"), &[spec.cout], Init::Zeros, rng)?;
        Ok(Self {
            weight,
            bias,
            cin: spec.cin,
            cout: spec.cout,
            kernel: spec.kernel,
            dilation: spec.dilation,
            groups: spec.groups,
        })
    }

    pub fn apply(&self, t: &Tape, s: &ParamStore, x: Var) -> Result<Var> {
        t.conv2d(
            x,
            t.param(s, self.weight),
            Some(t.param(s, self.bias)),
            self.dilation,
            self.groups,
        )
    }

    pub fn apply_relu(&self, t: &Tape, s: &ParamStore, x: Var) -> Result<Var> {
        Ok(t.relu(self.apply(t, s, x)?))
    }

    pub fn param_count(&self) -> usize {
        self.cout * (self.cin / self.groups) * self.kernel * self.kernel + self.cout
    }
}
