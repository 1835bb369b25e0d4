//! Optimizer, training loop with checkpoint/resume, and the module
//! placement ablation.

mod ablation;
mod adam;
mod presets;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ablation::{run_ablation, AblationMatrix, AblationRow, Placement};
pub use adam::Adam;
pub use presets::Preset;

use crate::autodiff::{Checkpoint, ParamStore};
use crate::data::{normalized_pair, psnr, Dataset};
use crate::error::{param_err, Error, Result};
use crate::fourier::{make_cartesian_mask, ComplexTensor, SamplingMask};
use crate::model::{loss, LossTarget, Model, ModelConfig, ReconInput};

pub const TRAIN_CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub version: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// The learning rate is multiplied by `lr_decay` every `lr_decay_every`
    /// epochs.
    pub lr_decay_every: usize,
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seeds the weights, the batch order and the sampling mask.
    pub seed: u64,
    pub accel: f64,
    pub acs: f64,
    /// Use only the first `n` images of the training split.
    pub train_limit: Option<usize>,
    pub val_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            version: TRAIN_CONFIG_VERSION,
            epochs: 30,
            batch_size: 4,
            lr: 1e-3,
            lr_decay_every: 20,
            lr_decay: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            accel: 4.0,
            acs: 0.125,
            train_limit: None,
            val_limit: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != TRAIN_CONFIG_VERSION {
            return param_err(format!(
                "train config version {}, expected {TRAIN_CONFIG_VERSION}",
                self.version
            ));
        }
        if self.batch_size == 0 || self.lr_decay_every == 0 {
            return param_err("batch_size and lr_decay_every must be positive");
        }
        let positive = [self.lr, self.lr_decay, self.eps];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return param_err("lr, lr_decay and eps must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return param_err("Adam betas must lie in [0, 1)");
        }
        Ok(())
    }

    /// Learning rate for 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr
            * self
                .lr_decay
                .powi((epoch.saturating_sub(1) / self.lr_decay_every) as i32)
    }

    pub fn mask(&self, height: usize) -> Result<SamplingMask> {
        make_cartesian_mask(height, self.accel, self.acs, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_psnr: f64,
}

pub fn log_csv(log: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,lr,train_loss,val_loss,val_psnr\n");
    for r in log {
        s.push_str(&format!(
            "{},{:e},{:.9},{:.9},{:.6}\n",
            r.epoch, r.lr, r.train_loss, r.val_loss, r.val_psnr
        ));
    }
    s
}

/// Stacked inputs and loss targets for the images at `idx`.
pub fn batch(
    ds: &Dataset,
    idx: &[usize],
    mask: &SamplingMask,
    with_reference: bool,
) -> Result<(ReconInput, ComplexTensor)> {
    let pick = |v: &[ComplexTensor]| {
        ComplexTensor::stack(&idx.iter().map(|&i| v[i].clone()).collect::<Vec<_>>())
    };
    let target = pick(&ds.targets)?;
    let reference = match (&ds.references, with_reference) {
        (Some(r), true) => Some(pick(r)?),
        (None, true) => {
            return param_err("reference-guided model needs a dataset with paired references")
        }
        _ => None,
    };
    Ok((
        ReconInput::from_target(&target, mask, reference.as_ref())?,
        target,
    ))
}

/// Mean loss and mean PSNR of `model` over a dataset.
pub fn validate(
    model: &Model,
    ds: &Dataset,
    mask: &SamplingMask,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let beta = model.config().kspace_loss_weight;
    let (mut loss_sum, mut psnr_sum) = (0.0, 0.0);
    let order: Vec<usize> = (0..ds.len()).collect();
    for idx in order.chunks(batch_size.max(1)) {
        let (input, target) = batch(ds, idx, mask, model.config().uses_reference())?;
        let out = model.forward(&input)?;
        let k_f = crate::fourier::fft2c(&target)?;
        loss_sum += loss(&out, &target, &k_f, beta)? * idx.len() as f64;
        for j in 0..idx.len() {
            let (x, r) = normalized_pair(&out.image.plane_at(j), &target.plane_at(j))?;
            psnr_sum += psnr(&x, &r, 1.0)?;
        }
    }
    let n = ds.len() as f64;
    Ok((loss_sum / n, psnr_sum / n))
}

/// Progress of a run, restorable from a checkpoint.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epochs_done: usize,
    pub adam: Adam,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    kind: String,
    model_config: ModelConfig,
    train_config: TrainConfig,
    epochs_done: usize,
    adam_step: u64,
    best_epoch: Option<usize>,
    /// Bit pattern, so the comparison survives the round trip exactly.
    best_val_loss_bits: u64,
    log: Vec<EpochRecord>,
}

/// A model together with its optimizer state and run configuration.
pub struct Session {
    pub model: Model,
    pub config: TrainConfig,
    pub state: TrainState,
    pub best: Option<ParamStore>,
    mask: SamplingMask,
}

impl Session {
    /// Fresh run on `height`-line images. Initial weights are rounded to
    /// f32 like every later update.
    pub fn new(model_config: ModelConfig, config: TrainConfig, height: usize) -> Result<Self> {
        config.validate()?;
        let mut model = Model::new(model_config, config.seed)?;
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            adam::round_f32(model.store.value_mut(id));
        }
        let adam = Adam::new(&model.store, config.beta1, config.beta2, config.eps);
        Ok(Self {
            mask: config.mask(height)?,
            model,
            config,
            state: TrainState {
                epochs_done: 0,
                adam,
                log: Vec::new(),
                best_epoch: None,
                best_val_loss: f64::INFINITY,
            },
            best: None,
        })
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    fn meta(&self, kind: &str) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(CheckpointMeta {
            kind: kind.into(),
            model_config: self.model.config().clone(),
            train_config: self.config.clone(),
            epochs_done: self.state.epochs_done,
            adam_step: self.state.adam.step,
            best_epoch: self.state.best_epoch,
            best_val_loss_bits: self.state.best_val_loss.to_bits(),
            log: self.state.log.clone(),
        })?)
    }

    /// Weights, optimizer moments and progress.
    pub fn state_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(self.meta("train_state")?);
        ck.push_params(&self.model.store);
        for (k, (_, p)) in self.model.store.iter().enumerate() {
            ck.push(&format!("adam.m.{}", p.name), &self.state.adam.m[k]);
            ck.push(&format!("adam.v.{}", p.name), &self.state.adam.v[k]);
        }
        Ok(ck)
    }

    /// Best-validation weights (current ones when no epoch has finished).
    pub fn best_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(self.meta("model")?);
        ck.push_params(self.best.as_ref().unwrap_or(&self.model.store));
        Ok(ck)
    }

    /// Rebuilds a session from [`Session::state_checkpoint`] output and,
    /// optionally, the matching best-validation checkpoint.
    pub fn resume(ck: &Checkpoint, best: Option<&Checkpoint>, height: usize) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_value(ck.meta.clone())?;
        if meta.kind != "train_state" {
            return Err(Error::Format(format!(
                "expected a training-state checkpoint, got `{}`",
                meta.kind
            )));
        }
        let mut s = Self::new(meta.model_config, meta.train_config, height)?;
        ck.load_params(&mut s.model.store)?;
        let names: Vec<String> = s.model.store.iter().map(|(_, p)| p.name.clone()).collect();
        for (k, name) in names.iter().enumerate() {
            for (slot, prefix) in [(&mut s.state.adam.m[k], "m"), (&mut s.state.adam.v[k], "v")] {
                let key = format!("adam.{prefix}.{name}");
                *slot = ck
                    .get(&key)
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks `{key}`")))?;
            }
        }
        s.state.adam.step = meta.adam_step;
        s.state.epochs_done = meta.epochs_done;
        s.state.log = meta.log;
        s.state.best_epoch = meta.best_epoch;
        s.state.best_val_loss = f64::from_bits(meta.best_val_loss_bits);
        if let Some(b) = best {
            let mut store = s.model.store.clone();
            b.load_params(&mut store)?;
            s.best = Some(store);
        }
        Ok(s)
    }

    /// One pass over the (shuffled) training set followed by validation.
    pub fn run_epoch(&mut self, train: &Dataset, val: &Dataset) -> Result<EpochRecord> {
        if train.is_empty() {
            return param_err("training split is empty");
        }
        let epoch = self.state.epochs_done + 1;
        let lr = self.config.lr_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let with_ref = self.model.config().uses_reference();
        let mut total = 0.0;
        for idx in order.chunks(self.config.batch_size) {
            let (input, target) = batch(train, idx, &self.mask, with_ref)?;
            self.model.store.zero_grads();
            let l = self
                .model
                .accumulate_gradients(&input, &LossTarget::new(&target)?)?;
            self.state.adam.update(&mut self.model.store, lr)?;
            total += l * idx.len() as f64;
        }
        let (val_loss, val_psnr) = validate(&self.model, val, &self.mask, self.config.batch_size)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: total / train.len() as f64,
            val_loss,
            val_psnr,
        };
        self.state.epochs_done = epoch;
        self.state.log.push(record.clone());
        if val_loss < self.state.best_val_loss || self.state.best_epoch.is_none() {
            self.state.best_val_loss = val_loss;
            self.state.best_epoch = Some(epoch);
            self.best = Some(self.model.store.clone());
        }
        Ok(record)
    }

    /// Runs the remaining epochs. With `out`, rewrites `log.csv`,
    /// `last.ckpt` and (on improvement) `best.ckpt` after every epoch.
    pub fn run(
        &mut self,
        train: &Dataset,
        val: &Dataset,
        out: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<()> {
        let train = train
            .clone()
            .truncated(self.config.train_limit.unwrap_or(usize::MAX));
        let val = val
            .clone()
            .truncated(self.config.val_limit.unwrap_or(usize::MAX));
        if let Some(dir) = out {
            std::fs::create_dir_all(dir)?;
        }
        while self.state.epochs_done < self.config.epochs {
            let record = self.run_epoch(&train, &val)?;
            if let Some(dir) = out {
                crate::io::write_atomic(dir.join("log.csv"), log_csv(&self.state.log).as_bytes())?;
                self.state_checkpoint()?.write(dir.join("last.ckpt"))?;
                if self.state.best_epoch == Some(record.epoch) {
                    self.best_checkpoint()?.write(dir.join("best.ckpt"))?;
                }
            }
            on_epoch(&record);
        }
        Ok(())
    }

    /// Replaces the live weights with the best-validation ones.
    pub fn into_best_model(mut self) -> Model {
        if let Some(best) = self.best.take() {
            self.model.store = best;
        }
        self.model
    }
}

/// Loads a model checkpoint (either kind) with its configurations.
pub fn load_model(ck: &Checkpoint) -> Result<(Model, TrainConfig)> {
    let meta: CheckpointMeta = serde_json::from_value(ck.meta.clone())?;
    let mut model = Model::new(meta.model_config, meta.train_config.seed)?;
    ck.load_params(&mut model.store)?;
    Ok((model, meta.train_config))
}
