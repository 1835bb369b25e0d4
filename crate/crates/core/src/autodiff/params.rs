use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{param_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a freshly registered parameter is filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    Kaiming {
        fan_in: usize,
    },
    Zeros,
    Identity,
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    value: Arc<Tensor>,
    grad: Tensor,
    frozen: bool,
}

impl Parameter {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }
}

/// Named, ordered parameter collection. Names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
    name_seed: Option<u64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store whose random initializations ignore the caller's generator and
    /// draw from a stream keyed by `seed` and the parameter name, so a
    /// parameter starts the same regardless of what else is registered.
    pub fn with_name_seeds(seed: u64) -> Self {
        Self {
            name_seed: Some(seed),
            ..Self::default()
        }
    }

    pub fn register(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return param_err(format!("duplicate parameter name `{name}`"));
        }
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Kaiming { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                match self.name_seed {
                    Some(seed) => {
                        let mut own = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name));
                        (0..n).map(|_| own.gen_range(-bound..bound)).collect()
                    }
                    None => (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
                }
            }
            Init::Identity => {
                let (&rows, rest) = shape.split_first().unwrap_or((&0, &[]));
                let cols: usize = rest.iter().product();
                let mut d = vec![0.0; n];
                for i in 0..rows.min(cols) {
                    d[i * cols + i] = 1.0;
                }
                d
            }
        };
        let value = Tensor::new(shape.to_vec(), data)?;
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            grad: Tensor::zeros(shape),
            value: Arc::new(value),
            frozen: false,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub(crate) fn value_arc(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.params[id.0].value)
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set_value(&mut self, id: ParamId, t: Tensor) -> Result<()> {
        if t.shape() != self.params[id.0].value.shape() {
            return param_err(format!(
                "shape mismatch for `{}`: {:?} vs {:?}",
                self.params[id.0].name,
                t.shape(),
                self.params[id.0].value.shape()
            ));
        }
        self.params[id.0].value = Arc::new(t);
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Frozen parameters enter the tape as constants.
    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// First parameter (in order) with a non-finite gradient.
    pub fn first_non_finite_grad(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|p| !p.grad.is_finite())
            .map(|p| p.name.as_str())
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}
