//! Asymmetric prompt adapter.
//!
//! Shallow patch features of the image tower are mean-pooled into a cue
//! vector, squeezed through a bottleneck adapter and spliced as one token
//! into the fake-class text prompt. The real-class prompt carries no image
//! information, so its text embedding is one shared anchor per parameter
//! state.

mod detector;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoders::{tokenize_context, EncoderConfig};
use crate::error::{Error, Result};
use crate::numcore::{Feed, Graph, NodeId, ParamStore, Tensor};
use crate::rng::gaussian;

pub use detector::{Anchors, CentreGrads, Centres, Detector, SampleForward};

/// Standard deviation of the initial prompt vectors.
pub const PROMPT_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    /// `[P, C]`, identical for every image.
    Static,
    /// `[P, Z̃, C]`, conditioned on the image's cue vector.
    Adaptive,
}

impl PromptMode {
    pub fn is_adaptive(self) -> bool {
        self == PromptMode::Adaptive
    }
}

/// The two text categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Real,
    Fake,
}

impl Category {
    pub fn key(self) -> &'static str {
        match self {
            Category::Real => "real",
            Category::Fake => "fake",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApaConfig {
    /// Learnable prompt vectors per category.
    pub prompts: usize,
    /// Adapter hidden width, smaller than the embedding width.
    pub bottleneck: usize,
    /// Image block (1-based) whose patch features feed the cue vector.
    pub cue_layer: usize,
    pub real_prompt: PromptMode,
    pub fake_prompt: PromptMode,
    pub real_context: String,
    pub fake_context: String,
}

impl Default for ApaConfig {
    fn default() -> Self {
        Self {
            prompts: 8,
            bottleneck: 16,
            cue_layer: 1,
            real_prompt: PromptMode::Static,
            fake_prompt: PromptMode::Adaptive,
            real_context: "A real image".into(),
            fake_context: "A fake image".into(),
        }
    }
}

impl ApaConfig {
    pub fn mode(&self, c: Category) -> PromptMode {
        match c {
            Category::Real => self.real_prompt,
            Category::Fake => self.fake_prompt,
        }
    }

    pub fn validate(&self, enc: &EncoderConfig) -> Result<()> {
        if self.prompts == 0 {
            return Err(Error::Config("prompt count must be positive".into()));
        }
        if self.bottleneck == 0 || self.bottleneck >= enc.width {
            return Err(Error::Config(format!(
                "adapter bottleneck must lie in 1..{}, got {}",
                enc.width, self.bottleneck
            )));
        }
        if self.cue_layer == 0 || self.cue_layer > enc.image.blocks {
            return Err(Error::Config(format!(
                "cue layer must lie in 1..={}, got {}",
                enc.image.blocks, self.cue_layer
            )));
        }
        Ok(())
    }
}

/// Encoder plus adapter configuration; everything needed to rebuild graphs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub apa: ApaConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.apa.validate(&self.encoder)
    }
}

fn prompt_name(c: Category) -> String {
    format!("prompt.{}", c.key())
}

fn context_name(c: Category) -> String {
    format!("context.{}", c.key())
}

/// Adds the prompt bank and adapter tensors to a store that already holds
/// the encoder weights (the context rows are looked up in its token table).
pub fn init_params(cfg: &ModelConfig, seed: u64, store: &mut ParamStore) -> Result<()> {
    cfg.validate()?;
    let (d, h, m) = (cfg.encoder.width, cfg.apa.bottleneck, cfg.apa.prompts);
    for c in [Category::Real, Category::Fake] {
        let name = prompt_name(c);
        store.insert(&name, gaussian(seed, &name, &[m, d], PROMPT_INIT_STD), true)?;
        let text = match c {
            Category::Real => &cfg.apa.real_context,
            Category::Fake => &cfg.apa.fake_context,
        };
        store.insert(&context_name(c), tokenize_context(text, store)?, false)?;
    }
    let w1_std = libm::sqrt(2.0 / d as f64);
    let w2_std = libm::sqrt(1.0 / h as f64);
    store.insert("apa.w1", gaussian(seed, "apa.w1", &[d, h], w1_std), true)?;
    store.insert("apa.b1", Tensor::zeros(&[h]), true)?;
    store.insert("apa.w2", gaussian(seed, "apa.w2", &[h, d], w2_std), true)?;
    store.insert("apa.b2", Tensor::zeros(&[d]), true)?;
    Ok(())
}

/// Full parameter set: frozen encoders, LoRA factors, prompts and adapter.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    crate::encoders::init_params(&cfg.encoder, seed, &mut store)?;
    init_params(cfg, seed, &mut store)?;
    Ok(store)
}

/// Mean over the patch axis of a `[N × D]` tap, giving `[D]`.
pub fn build_cues(g: &mut Graph, tap: NodeId) -> Result<NodeId> {
    g.mean(tap, 0)
}

/// `W₂ᵀ·relu(W₁ᵀ·ẑ + b₁) + b₂` for a `[D]` cue vector.
pub fn build_adapter(g: &mut Graph, cues: NodeId, width: usize, bottleneck: usize) -> Result<NodeId> {
    let x = g.reshape(cues, &[1, width])?;
    let w1 = g.param("apa.w1", &[width, bottleneck])?;
    let b1 = g.param("apa.b1", &[bottleneck])?;
    let b1 = g.reshape(b1, &[1, bottleneck])?;
    let h = g.matmul(x, w1)?;
    let h = g.add(h, b1)?;
    let h = g.relu(h);
    let w2 = g.param("apa.w2", &[bottleneck, width])?;
    let b2 = g.param("apa.b2", &[width])?;
    let b2 = g.reshape(b2, &[1, width])?;
    let out = g.matmul(h, w2)?;
    let out = g.add(out, b2)?;
    g.reshape(out, &[width])
}

/// The text sequence of one category: `[P, C]`, or `[P, Z̃, C]` when an
/// adapted cue row is given.
pub fn build_sequence(
    g: &mut Graph,
    category: Category,
    adapted: Option<NodeId>,
    cfg: &ModelConfig,
    context_rows: usize,
) -> Result<NodeId> {
    let d = cfg.encoder.width;
    let p = g.param(&prompt_name(category), &[cfg.apa.prompts, d])?;
    let c = g.param(&context_name(category), &[context_rows, d])?;
    let parts: Vec<NodeId> = match adapted {
        Some(z) => {
            let row = g.reshape(z, &[1, d])?;
            [p, row, c].into()
        }
        None => [p, c].into(),
    };
    g.concat(&parts, 0)
}

/// Row count of the stored context for `category`.
pub fn context_rows(params: &ParamStore, category: Category) -> Result<usize> {
    let name = context_name(category);
    params
        .get(&name)
        .map(Tensor::rows)
        .ok_or(Error::UnknownParam(name))
}

fn eval_single(g: &Graph, out: NodeId, params: &ParamStore, feed: &Feed<'_>) -> Result<Tensor> {
    Ok(g.eval(params, feed)?.get(out).clone())
}

fn matrix_input(g: &mut Graph, name: &str, t: &Tensor) -> Result<NodeId> {
    if t.rank() != 2 {
        return Err(Error::InvalidTensor(format!(
            "`{name}` must be a matrix, got shape {:?}",
            t.shape()
        )));
    }
    g.input(name, t.shape())
}

/// Cue vector of a `[N × D]` layer tap.
pub fn extract_cues(tap: &Tensor) -> Result<Tensor> {
    if tap.rank() == 2 && tap.rows() == 0 {
        return Err(Error::EmptyInput("layer tap"));
    }
    let mut g = Graph::new();
    let x = matrix_input(&mut g, "tap", tap)?;
    let out = build_cues(&mut g, x)?;
    let feed: Feed = [("tap", tap)].into_iter().collect();
    eval_single(&g, out, &ParamStore::new(), &feed)
}

/// Adapter output `Z̃` for a `[D]` cue vector.
pub fn adapt_cues(cues: &Tensor, params: &ParamStore) -> Result<Tensor> {
    let w1 = params
        .get("apa.w1")
        .ok_or_else(|| Error::UnknownParam("apa.w1".into()))?;
    let (d, h) = (w1.shape()[0], w1.shape()[1]);
    let mut g = Graph::new();
    let x = g.input("cues", &[d])?;
    let out = build_adapter(&mut g, x, d, h)?;
    let feed: Feed = [("cues", cues)].into_iter().collect();
    eval_single(&g, out, params, &feed)
}

/// `(seq_r, seq_f)` for an adapted cue row `Z̃`, honouring each category's
/// prompt mode.
pub fn build_prompts(adapted: &Tensor, params: &ParamStore, cfg: &ModelConfig) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let z = g.input("adapted", &[cfg.encoder.width])?;
    let mut seqs = [Category::Real, Category::Fake].map(|_| None);
    for (slot, c) in seqs.iter_mut().zip([Category::Real, Category::Fake]) {
        let cue = cfg.apa.mode(c).is_adaptive().then_some(z);
        *slot = Some(build_sequence(&mut g, c, cue, cfg, context_rows(params, c)?)?);
    }
    let feed: Feed = [("adapted", adapted)].into_iter().collect();
    let values = g.eval(params, &feed)?;
    let [r, f] = seqs.map(|s| values.get(s.expect("both built")).clone());
    Ok((r, f))
}

#[cfg(test)]
mod tests;
