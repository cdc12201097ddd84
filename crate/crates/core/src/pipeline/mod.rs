//! Training, inference and evaluation.

pub mod gradcheck;
mod metrics;
mod schedule;
mod train;

use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::apa::{init_model, Anchors, Centres, Detector, ModelConfig};
use crate::error::Result;
use crate::numcore::{ParamStore, Tensor};

pub use metrics::{average_precision, evaluate, EvalReport, Subset, SubsetReport};
pub use schedule::cosine_lr;
pub use train::{train, EpochLog, Optimizer, TrainConfig, Trainer};

/// Label of real images.
pub const REAL: u8 = 0;
/// Label of fake images.
pub const FAKE: u8 = 1;

pub const CHECKPOINT_VERSION: u32 = 1;

/// One preprocessed image with its label.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub label: u8,
}

/// Everything needed to resume inference: configuration, seed, step count
/// and the full tensor table.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub seed: u64,
    pub step: u64,
    pub params: ParamStore,
}

impl Checkpoint {
    /// Untrained checkpoint for `config`.
    pub fn init(config: &TrainConfig) -> Result<Self> {
        Ok(Self {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            seed: config.seed,
            step: 0,
            params: init_model(&config.model, config.seed)?,
        })
    }

    /// Whether the frozen tensors are exactly those drawn from the recorded seed.
    pub fn frozen_matches_seed(&self) -> Result<bool> {
        let fresh = init_model(&self.config.model, self.seed)?;
        Ok(fresh.frozen_fingerprint() == self.params.frozen_fingerprint())
    }
}

/// Outcome of the two-logit comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// [`FAKE`] iff `o_f > o_r`; exact ties are [`REAL`].
    pub label: u8,
    pub o_r: f64,
    pub o_f: f64,
}

impl Prediction {
    pub fn from_logits(o_r: f64, o_f: f64) -> Self {
        let label = if o_f > o_r { FAKE } else { REAL };
        Self { label, o_r, o_f }
    }

    /// Ranking score for average precision.
    pub fn score(&self) -> f64 {
        self.o_f - self.o_r
    }
}

/// A detector bound to one parameter state, with its static centres cached.
#[derive(Clone, Debug)]
pub struct Model {
    detector: Detector,
    params: ParamStore,
    anchors: Anchors,
}

impl Model {
    pub fn new(config: &ModelConfig, params: ParamStore) -> Result<Self> {
        let detector = Detector::new(config)?;
        let anchors = detector.anchors(&params)?;
        Ok(Self {
            detector,
            params,
            anchors,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Self::new(&ck.config.model, ck.params.clone())
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn anchors(&self) -> &Anchors {
        &self.anchors
    }

    pub fn centres(&self, image: &Tensor) -> Result<Centres> {
        Ok(self.detector.forward(image, &self.params, &self.anchors)?.centres)
    }

    pub fn predict(&self, image: &Tensor) -> Result<Prediction> {
        let c = self.centres(image)?;
        Ok(Prediction::from_logits(c.z.dot(&c.t_r), c.z.dot(&c.t_f)))
    }
}
