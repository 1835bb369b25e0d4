//! Recurrent reconstruction networks in image-only, dual-domain and
//! reference-guided dual-domain form.

mod config;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{Mode, ModelConfig, Order, MODEL_CONFIG_VERSION};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::blocks::{BlockOptions, Domain, RecurrentBlock};
use crate::error::{param_err, shape_err, Error, Result};
use crate::fourier::{fft2c, ifft2c, undersample, ComplexTensor, Fft2, SamplingMask};

/// Undersampled measurements for a batch of `(N, H, W)` images.
#[derive(Clone, Debug)]
pub struct ReconInput {
    pub k_u: ComplexTensor,
    pub mask: SamplingMask,
    /// Fully sampled image of the guiding contrast, same shape as the target.
    pub reference: Option<ComplexTensor>,
}

impl ReconInput {
    /// Simulates acquisition of `target` (shape `(H, W)` or `(N, H, W)`).
    pub fn from_target(
        target: &ComplexTensor,
        mask: &SamplingMask,
        reference: Option<&ComplexTensor>,
    ) -> Result<Self> {
        if let Some(r) = reference {
            if !r.same_shape(target) {
                return shape_err(format!(
                    "reference {:?} vs target {:?}",
                    r.shape(),
                    target.shape()
                ));
            }
        }
        Ok(Self {
            k_u: undersample(&fft2c(target)?, mask)?,
            mask: mask.clone(),
            reference: reference.cloned(),
        })
    }

    pub fn zero_filled(&self) -> Result<ComplexTensor> {
        ifft2c(&self.k_u)
    }
}

#[derive(Clone, Debug)]
pub struct ReconResult {
    pub image: ComplexTensor,
    pub kspace: ComplexTensor,
    /// Image after each recurrence (the last equals `image`).
    pub per_recurrence: Vec<ComplexTensor>,
    /// k-space after the closing data consistency of each recurrence.
    pub per_recurrence_kspace: Vec<ComplexTensor>,
}

/// Tape handles for one forward pass; all are `(N, 2, H, W)`.
#[derive(Clone, Debug)]
pub struct TapeOutput {
    pub image: Var,
    pub kspace: Var,
    pub per_recurrence: Vec<(Var, Var)>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    pub store: ParamStore,
    image_blocks: Vec<RecurrentBlock>,
    kspace_blocks: Vec<RecurrentBlock>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::with_name_seeds(seed);
        let copies = if config.tied_weights {
            1
        } else {
            config.recurrences
        };
        let in_channels = if config.uses_reference() { 4 } else { 2 };
        let mut build = |domain: Domain, store: &mut ParamStore| -> Result<Vec<RecurrentBlock>> {
            (0..copies)
                .map(|r| {
                    let name = if config.tied_weights {
                        domain.tag().to_string()
                    } else {
                        format!("{}.r{r}", domain.tag())
                    };
                    let opts = BlockOptions {
                        in_channels,
                        glim: config.glim_domains.contains(&domain),
                        plde: config.plde_domains.contains(&domain),
                    };
                    RecurrentBlock::register(store, &name, &config.block, domain, opts, &mut rng)
                })
                .collect()
        };
        let kspace_blocks = if config.uses_kspace() {
            build(Domain::Kspace, &mut store)?
        } else {
            Vec::new()
        };
        let image_blocks = build(Domain::Image, &mut store)?;
        Ok(Self {
            config,
            store,
            image_blocks,
            kspace_blocks,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    pub fn image_block(&self, r: usize) -> &RecurrentBlock {
        &self.image_blocks[if self.config.tied_weights { 0 } else { r }]
    }

    pub fn kspace_block(&self, r: usize) -> Option<&RecurrentBlock> {
        self.kspace_blocks
            .get(if self.config.tied_weights { 0 } else { r })
    }

    /// Records the full recurrence on `t` using the weights in `store`.
    pub fn build(&self, t: &Tape, store: &ParamStore, input: &ReconInput) -> Result<TapeOutput> {
        let k_u = Arc::new(Tensor::from_complex(&input.k_u)?);
        let (_, _, h, w) = k_u.dims4()?;
        if input.mask.height() != h {
            return shape_err(format!(
                "mask has {} lines, k-space has {h} rows",
                input.mask.height()
            ));
        }
        let reference = match (&input.reference, self.config.uses_reference()) {
            (Some(r), true) => {
                let r = Tensor::from_complex(r)?;
                if r.shape() != k_u.shape() {
                    return shape_err(format!(
                        "reference {:?} vs measurements {:?}",
                        r.shape(),
                        k_u.shape()
                    ));
                }
                Some(r)
            }
            (None, true) => return param_err("reference-guided mode needs a reference image"),
            (_, false) => None,
        };
        let fft = Arc::new(Fft2::new(h, w));
        let lines = Arc::new(input.mask.lines().to_vec());
        let lambda = self.config.lambda;
        let dc = |x: Var| t.data_consistency(x, &k_u, &lines, lambda);
        let (ref_i, ref_k) = match reference {
            Some(r) => {
                let ri = t.constant(r);
                (Some(ri), Some(t.fft2c(ri, &fft)?))
            }
            None => (None, None),
        };
        let guided = |x: Var, r: Option<Var>| match r {
            Some(r) => t.concat_channels(&[x, r]),
            None => Ok(x),
        };

        let mut k = t.constant((*k_u).clone());
        let mut i = t.ifft2c(k, &fft)?;
        let mut per_recurrence = Vec::with_capacity(self.config.recurrences);
        for r in 0..self.config.recurrences {
            let ib = self.image_block(r);
            match (self.kspace_block(r), self.config.order) {
                (None, _) => {
                    let i2 = ib.apply(t, store, i, i)?;
                    k = dc(t.fft2c(i2, &fft)?)?;
                }
                (Some(kb), Order::KspaceFirst) => {
                    let k2 = dc(kb.apply(t, store, guided(k, ref_k)?, k)?)?;
                    let i1 = t.ifft2c(k2, &fft)?;
                    let i2 = ib.apply(t, store, guided(i1, ref_i)?, i1)?;
                    k = dc(t.fft2c(i2, &fft)?)?;
                }
                (Some(kb), Order::ImageFirst) => {
                    let i2 = ib.apply(t, store, guided(i, ref_i)?, i)?;
                    let k1 = dc(t.fft2c(i2, &fft)?)?;
                    k = dc(kb.apply(t, store, guided(k1, ref_k)?, k1)?)?;
                }
            }
            i = t.ifft2c(k, &fft)?;
            per_recurrence.push((i, k));
        }
        Ok(TapeOutput {
            image: i,
            kspace: k,
            per_recurrence,
        })
    }

    /// Forward pass with the model's own weights, dispatched on the mode.
    pub fn forward(&self, input: &ReconInput) -> Result<ReconResult> {
        let t = Tape::new();
        let out = self.build(&t, &self.store, input)?;
        t.check_finite()?;
        let cx = |v: Var| t.value(v).to_complex();
        Ok(ReconResult {
            image: cx(out.image)?,
            kspace: cx(out.kspace)?,
            per_recurrence: out
                .per_recurrence
                .iter()
                .map(|&(i, _)| cx(i))
                .collect::<Result<_>>()?,
            per_recurrence_kspace: out
                .per_recurrence
                .iter()
                .map(|&(_, k)| cx(k))
                .collect::<Result<_>>()?,
        })
    }

    pub fn forward_image_only(&self, input: &ReconInput) -> Result<ReconResult> {
        self.expect_mode(&[Mode::ImageOnly])?;
        self.forward(input)
    }

    pub fn forward_dual(&self, input: &ReconInput) -> Result<ReconResult> {
        self.expect_mode(&[Mode::Dual, Mode::DualWithReference])?;
        self.forward(input)
    }

    pub fn forward_with_reference(&self, input: &ReconInput) -> Result<ReconResult> {
        self.expect_mode(&[Mode::DualWithReference])?;
        if input.reference.is_none() {
            return param_err("reference-guided reconstruction called without a reference image");
        }
        self.forward(input)
    }

    fn expect_mode(&self, allowed: &[Mode]) -> Result<()> {
        if allowed.contains(&self.config.mode) {
            Ok(())
        } else {
            param_err(format!(
                "model is configured as {:?}, expected one of {allowed:?}",
                self.config.mode
            ))
        }
    }

    /// Training objective on the tape: mean |·| L1 of the image magnitude
    /// plus `kspace_loss_weight` times the mean L1 of the (re, im) k-space.
    pub fn loss_on_tape(&self, t: &Tape, out: &TapeOutput, target: &LossTarget) -> Result<Var> {
        let mag = t.magnitude(out.image)?;
        let image_term = t.l1_mean(mag, &target.magnitude)?;
        let beta = self.config.kspace_loss_weight;
        if beta == 0.0 {
            return Ok(image_term);
        }
        let k_term = t.l1_mean(out.kspace, &target.kspace)?;
        t.add(image_term, t.scale(k_term, beta))
    }

    /// Runs forward and backward on one batch, adding gradients into the
    /// store. Returns the loss. A non-finite loss or gradient is an error
    /// naming the first parameter whose gradient went bad.
    pub fn accumulate_gradients(&mut self, input: &ReconInput, target: &LossTarget) -> Result<f64> {
        let t = Tape::new();
        let out = self.build(&t, &self.store, input)?;
        let loss_var = self.loss_on_tape(&t, &out, target)?;
        let grads = t.backward(loss_var, None)?;
        grads.accumulate_into(&mut self.store);
        let loss = t.value(loss_var).data()[0];
        let bad_grad = self.store.first_non_finite_grad();
        if loss.is_finite() && bad_grad.is_none() {
            return Ok(loss);
        }
        let forward = match t.first_non_finite() {
            Some((i, op)) => format!("first non-finite forward value at node {i} ({op})"),
            None => "forward pass finite".to_string(),
        };
        Err(Error::NonFinite {
            op: "training step".into(),
            detail: format!(
                "loss {loss}; first non-finite parameter gradient: {}; {forward}",
                bad_grad.unwrap_or("none")
            ),
        })
    }

    /// Loss of the current weights on one batch, without gradients.
    pub fn evaluate_loss(&self, input: &ReconInput, target: &LossTarget) -> Result<f64> {
        let t = Tape::new();
        let out = self.build(&t, &self.store, input)?;
        let loss = self.loss_on_tape(&t, &out, target)?;
        t.check_finite()?;
        Ok(t.value(loss).data()[0])
    }
}

/// Precomputed targets for the training loss.
#[derive(Clone, Debug)]
pub struct LossTarget {
    /// `(N, 1, H, W)` magnitude of the fully sampled image.
    pub magnitude: Tensor,
    /// `(N, 2, H, W)` fully sampled k-space.
    pub kspace: Tensor,
}

impl LossTarget {
    pub fn new(target: &ComplexTensor) -> Result<Self> {
        let (h, w) = target.plane();
        let n = target.planes();
        Ok(Self {
            magnitude: Tensor::new(vec![n, 1, h, w], target.magnitude())?,
            kspace: Tensor::from_complex(&fft2c(target)?)?,
        })
    }
}

/// `mean|(|x| - |x_f|)| + beta * mean|k - k_f|` over (re, im) entries.
pub fn loss(
    result: &ReconResult,
    i_f: &ComplexTensor,
    k_f: &ComplexTensor,
    beta: f64,
) -> Result<f64> {
    if !result.image.same_shape(i_f) || !result.kspace.same_shape(k_f) {
        return shape_err("loss: reconstruction and target shapes differ");
    }
    let mag = result
        .image
        .data()
        .iter()
        .zip(i_f.data())
        .map(|(a, b)| (a.norm() - b.norm()).abs())
        .sum::<f64>()
        / i_f.len() as f64;
    let k = result
        .kspace
        .data()
        .iter()
        .zip(k_f.data())
        .map(|(a, b)| (a.re - b.re).abs() + (a.im - b.im).abs())
        .sum::<f64>()
        / (2 * k_f.len()) as f64;
    Ok(mag + beta * k)
}

/// Exact trainable-parameter count of a configuration.
pub fn count_parameters(config: &ModelConfig) -> Result<usize> {
    Ok(Model::new(config.clone(), 0)?.param_count())
}
