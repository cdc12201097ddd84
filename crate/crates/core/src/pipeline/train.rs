//! The optimization loop.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{cosine_lr, Checkpoint, Sample, CHECKPOINT_VERSION, FAKE, REAL};
use crate::apa::{init_model, CentreGrads, Detector, ModelConfig};
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tensor};
use crate::objectives::{BatchObjective, LossConfig, LossValues, MemoryBank};
use crate::rng::named_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// `p ← p − lr·g`.
    Sgd,
    /// Bias-corrected Adam with β = (0.9, 0.999), ε = 1e-8, no weight decay.
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Stored image features joining the contrast set; `None` disables the bank.
    pub bank_capacity: Option<usize>,
    pub seed: u64,
    /// Side length images are resized to before cropping.
    pub resize: usize,
    /// Side length of the centre crop fed to the encoder.
    pub crop: usize,
    pub optimizer: Optimizer,
    pub model: ModelConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 4e-4,
            batch_size: 32,
            bank_capacity: Some(968),
            seed: 0,
            resize: 32,
            crop: 32,
            optimizer: Optimizer::Sgd,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.bank_capacity == Some(0) {
            return Err(Error::Config("memory bank capacity must be positive".into()));
        }
        if self.crop == 0 || self.crop > self.resize {
            return Err(Error::Config(format!(
                "crop {} must lie in 1..={}",
                self.crop, self.resize
            )));
        }
        if self.crop != self.model.encoder.image.image_size {
            return Err(Error::Config(format!(
                "crop {} differs from encoder image size {}",
                self.crop, self.model.encoder.image.image_size
            )));
        }
        self.model.validate()?;
        self.loss.validate()
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }
}

/// Batch-averaged losses of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Rate used by the epoch's last step.
    pub lr: f64,
    pub loss_cls: f64,
    pub loss_sc: f64,
    pub loss_align: f64,
    pub loss_total: f64,
}

#[derive(Clone, Debug)]
struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

/// Step-level training state.
#[derive(Clone, Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    detector: Detector,
    params: ParamStore,
    bank: Option<MemoryBank>,
    step: usize,
    total_steps: usize,
    adam: Option<AdamState>,
    last_lr: f64,
}

impl Trainer {
    /// Fresh parameters from `cfg.seed`, scheduled for `samples` per epoch.
    pub fn new(cfg: &TrainConfig, samples: usize) -> Result<Self> {
        cfg.validate()?;
        if samples == 0 {
            return Err(Error::EmptyInput("training set"));
        }
        let bank = cfg
            .bank_capacity
            .map(|c| MemoryBank::new(c, cfg.model.encoder.width))
            .transpose()?;
        Ok(Self {
            cfg: cfg.clone(),
            detector: Detector::new(&cfg.model)?,
            params: init_model(&cfg.model, cfg.seed)?,
            bank,
            step: 0,
            total_steps: cfg.epochs * cfg.steps_per_epoch(samples),
            adam: (cfg.optimizer == Optimizer::Adam).then(|| AdamState {
                m: BTreeMap::new(),
                v: BTreeMap::new(),
            }),
            last_lr: 0.0,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            seed: self.cfg.seed,
            step: self.step as u64,
            params: self.params.clone(),
        }
    }

    /// Sample order for `epoch`, a function of the seed and epoch only.
    pub fn epoch_order(&self, epoch: usize, samples: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..samples).collect();
        order.shuffle(&mut named_rng(self.cfg.seed, &format!("shuffle.{epoch}")));
        order
    }

    fn forward_batch(&self, batch: &[&Sample]) -> Result<Forwards> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        let anchors = self.detector.anchors(&self.params)?;
        let mut fwds = Vec::with_capacity(batch.len());
        for s in batch {
            if s.label != REAL && s.label != FAKE {
                return Err(Error::InvalidTensor(format!("sample `{}` has label {}", s.id, s.label)));
            }
            fwds.push(self.detector.forward(&s.image, &self.params, &anchors)?);
        }
        let d = self.cfg.model.encoder.width;
        let stack = |f: &dyn Fn(&crate::apa::Centres) -> &Tensor| {
            let data = fwds.iter().flat_map(|w| f(&w.centres).data().iter().copied()).collect();
            Tensor::new(&[fwds.len(), d], data)
        };
        Ok(Forwards {
            z: stack(&|c| &c.z)?,
            t_r: stack(&|c| &c.t_r)?,
            t_f: stack(&|c| &c.t_f)?,
            labels: batch.iter().map(|s| s.label).collect(),
            anchors,
            fwds,
        })
    }

    /// Loss of `batch` under the current parameters, without the bank and
    /// without updating anything.
    pub fn batch_loss(&self, batch: &[&Sample]) -> Result<LossValues> {
        let f = self.forward_batch(batch)?;
        let obj = BatchObjective::new(&f.labels, self.cfg.model.encoder.width, None, &self.cfg.loss)?;
        Ok(obj.run(&f.z, &f.t_r, &f.t_f, self.step)?.0)
    }

    /// One optimizer step on `batch`; returns the losses before the update.
    pub fn step(&mut self, batch: &[&Sample]) -> Result<LossValues> {
        let f = self.forward_batch(batch)?;
        let d = self.cfg.model.encoder.width;
        let obj = BatchObjective::new(&f.labels, d, self.bank.as_ref(), &self.cfg.loss)?;
        let (losses, g) = obj.run(&f.z, &f.t_r, &f.t_f, self.step)?;
        let row = |t: &Tensor, i: usize| Tensor::vector(t.row(i).to_vec());
        let seeds: Vec<CentreGrads> = (0..f.labels.len())
            .map(|i| CentreGrads {
                z: row(&g.z, i),
                t_r: row(&g.t_r, i),
                t_f: row(&g.t_f, i),
            })
            .collect();
        let grads = self.detector.backward(&self.params, &f.anchors, &f.fwds, &seeds)?;
        let lr = cosine_lr(self.step.min(self.total_steps), self.total_steps.max(1), self.cfg.lr)?;
        match &mut self.adam {
            None => self.params.sgd_step(&grads, lr)?,
            Some(state) => adam_step(&mut self.params, state, &grads, lr, self.step + 1)?,
        }
        if let Some(bank) = &mut self.bank {
            bank.push(&f.z, &f.labels)?;
        }
        self.step += 1;
        self.last_lr = lr;
        Ok(losses)
    }

    /// Runs one epoch over `data` in the epoch's shuffled order.
    pub fn epoch(&mut self, epoch: usize, data: &[Sample]) -> Result<EpochLog> {
        let order = self.epoch_order(epoch, data.len());
        let mut sums = LossValues::default();
        let mut batches = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let l = self.step(&batch)?;
            sums.cls += l.cls;
            sums.sc += l.sc;
            sums.align += l.align;
            sums.total += l.total;
            batches += 1;
        }
        let n = batches as f64;
        Ok(EpochLog {
            epoch: epoch + 1,
            step: self.step,
            lr: self.last_lr,
            loss_cls: sums.cls / n,
            loss_sc: sums.sc / n,
            loss_align: sums.align / n,
            loss_total: sums.total / n,
        })
    }
}

struct Forwards {
    z: Tensor,
    t_r: Tensor,
    t_f: Tensor,
    labels: Vec<u8>,
    anchors: crate::apa::Anchors,
    fwds: Vec<crate::apa::SampleForward>,
}

fn adam_step(
    params: &mut ParamStore,
    state: &mut AdamState,
    grads: &BTreeMap<String, Tensor>,
    lr: f64,
    t: usize,
) -> Result<()> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let c1 = 1.0 - libm::pow(B1, t as f64);
    let c2 = 1.0 - libm::pow(B2, t as f64);
    let mut updates = BTreeMap::new();
    for (name, g) in grads {
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let mut step = Tensor::zeros(g.shape());
        for (((mi, vi), &gi), si) in m
            .data_mut()
            .iter_mut()
            .zip(v.data_mut().iter_mut())
            .zip(g.data())
            .zip(step.data_mut())
        {
            *mi = B1 * *mi + (1.0 - B1) * gi;
            *vi = B2 * *vi + (1.0 - B2) * gi * gi;
            *si = (*mi / c1) / (libm::sqrt(*vi / c2) + EPS);
        }
        updates.insert(name.clone(), step);
    }
    params.sgd_step(&updates, lr)
}

/// Trains from scratch on `data`, reporting each finished epoch.
pub fn train(cfg: &TrainConfig, data: &[Sample], mut on_epoch: impl FnMut(&EpochLog)) -> Result<Checkpoint> {
    let has = |y| data.iter().any(|s| s.label == y);
    if !has(REAL) || !has(FAKE) {
        return Err(Error::Config("training needs at least one real and one fake sample".into()));
    }
    let mut trainer = Trainer::new(cfg, data.len())?;
    for epoch in 0..cfg.epochs {
        let log = trainer.epoch(epoch, data)?;
        on_epoch(&log);
    }
    Ok(trainer.checkpoint())
}
