//! A miniature frozen image/text dual encoder.
//!
//! Both towers are pre-norm transformers sharing one embedding width, so
//! image-derived vectors can be spliced directly into a text sequence. Their
//! weights are deterministic Gaussian draws from a recorded seed and never
//! change; the only trainable encoder parameters are the LoRA factors
//! wrapped around every MLP linear layer.

mod image;
mod lora;
mod text;
mod tokenizer;

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Graph, NodeId, ParamStore};
use crate::rng::gaussian;

pub use image::{
    build_image_tower, build_image_tower_with, frozen_image_forward, image_forward, patchify,
    ImageTower, PIXEL_OFFSET,
};
pub use lora::{lora_linear, mlp_with_lora};
pub use text::{build_text_tower, build_text_tower_with, frozen_text_forward, text_forward};
pub use tokenizer::{tokenize, tokenize_context, VOCABULARY};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageEncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub blocks: usize,
    pub mlp_hidden: usize,
}

impl Default for ImageEncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            channels: 3,
            blocks: 4,
            mlp_hidden: 128,
        }
    }
}

impl ImageEncoderConfig {
    pub fn patches(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    pub fn patch_pixels(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub blocks: usize,
    pub context_length: usize,
    pub mlp_hidden: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: VOCABULARY.len(),
            blocks: 2,
            context_length: 24,
            mlp_hidden: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 6,
            alpha: 6.0,
        }
    }
}

impl LoraConfig {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Shared embedding width of both towers.
    pub width: usize,
    pub image: ImageEncoderConfig,
    pub text: TextEncoderConfig,
    pub lora: LoraConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            width: 64,
            image: ImageEncoderConfig::default(),
            text: TextEncoderConfig::default(),
            lora: LoraConfig::default(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let img = &self.image;
        if img.patch_size == 0 || !img.image_size.is_multiple_of(img.patch_size) {
            return Err(Error::Config(format!(
                "image size {} is not divisible by patch size {}",
                img.image_size, img.patch_size
            )));
        }
        if img.channels == 0 || self.width == 0 || img.mlp_hidden == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if img.blocks < 2 {
            return Err(Error::Config(format!(
                "image encoder needs at least 2 blocks, got {}",
                img.blocks
            )));
        }
        if self.text.blocks == 0 || self.text.mlp_hidden == 0 || self.text.context_length == 0 {
            return Err(Error::Config("text encoder dimensions must be positive".into()));
        }
        if self.text.vocab_size != VOCABULARY.len() {
            return Err(Error::Config(format!(
                "vocabulary size must be {}, got {}",
                VOCABULARY.len(),
                self.text.vocab_size
            )));
        }
        if self.lora.rank == 0 {
            return Err(Error::Config("LoRA rank must be positive".into()));
        }
        Ok(())
    }
}

/// Whether a parameter name denotes a LoRA factor.
pub fn is_lora_param(name: &str) -> bool {
    name.ends_with(".lora_a") || name.ends_with(".lora_b")
}

struct Init<'a> {
    store: &'a mut ParamStore,
    seed: u64,
}

impl Init<'_> {
    fn gaussian(&mut self, name: &str, shape: &[usize], std: f64, trainable: bool) -> Result<()> {
        self.store
            .insert(name, gaussian(self.seed, name, shape, std), trainable)
    }

    fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<()> {
        self.store
            .insert(name, crate::numcore::Tensor::full(shape, value), false)
    }

    fn layer_norm(&mut self, prefix: &str, width: usize) -> Result<()> {
        self.constant(&format!("{prefix}.gamma"), &[width], 1.0)?;
        self.constant(&format!("{prefix}.beta"), &[width], 0.0)
    }

    fn block(&mut self, prefix: &str, width: usize, hidden: usize, lora: &LoraConfig) -> Result<()> {
        let attn_std = 1.0 / libm::sqrt(width as f64);
        self.layer_norm(&format!("{prefix}.ln1"), width)?;
        for w in ["q", "k", "v", "o"] {
            self.gaussian(&format!("{prefix}.attn.{w}"), &[width, width], attn_std, false)?;
        }
        self.layer_norm(&format!("{prefix}.ln2"), width)?;
        self.linear_with_lora(&format!("{prefix}.mlp.fc1"), width, hidden, true, lora)?;
        self.linear_with_lora(&format!("{prefix}.mlp.fc2"), hidden, width, false, lora)
    }

    fn linear_with_lora(
        &mut self,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        relu_follows: bool,
        lora: &LoraConfig,
    ) -> Result<()> {
        let gain = if relu_follows { 2.0 } else { 1.0 };
        let std = libm::sqrt(gain / d_in as f64);
        self.gaussian(&format!("{prefix}.weight"), &[d_in, d_out], std, false)?;
        self.constant(&format!("{prefix}.bias"), &[d_out], 0.0)?;
        let a_std = 1.0 / libm::sqrt(d_in as f64);
        self.gaussian(&format!("{prefix}.lora_a"), &[d_in, lora.rank], a_std, true)?;
        self.store.insert(
            &format!("{prefix}.lora_b"),
            crate::numcore::Tensor::zeros(&[lora.rank, d_out]),
            true,
        )
    }
}

/// Token-embedding scale of the text tower.
pub const TOKEN_EMBED_STD: f64 = 0.02;
/// Position-embedding scale of the text tower.
pub const POSITION_EMBED_STD: f64 = 0.01;

/// Adds every encoder tensor to `store`: frozen base weights drawn from
/// `seed`, LoRA `A` factors drawn from `seed` and `B` factors set to zero.
pub fn init_params(cfg: &EncoderConfig, seed: u64, store: &mut ParamStore) -> Result<()> {
    cfg.validate()?;
    let d = cfg.width;
    let mut init = Init { store, seed };

    let p = cfg.image.patch_pixels();
    init.gaussian("image.patch_embed.weight", &[p, d], 1.0 / libm::sqrt(p as f64), false)?;
    init.constant("image.patch_embed.bias", &[d], 0.0)?;
    for b in 0..cfg.image.blocks {
        init.block(&format!("image.blocks.{b}"), d, cfg.image.mlp_hidden, &cfg.lora)?;
    }
    init.layer_norm("image.ln_post", d)?;
    init.gaussian("image.proj", &[d, d], 1.0 / libm::sqrt(d as f64), false)?;

    let t = &cfg.text;
    init.gaussian("text.token_embedding", &[t.vocab_size, d], TOKEN_EMBED_STD, false)?;
    init.gaussian(
        "text.position_embedding",
        &[t.context_length, d],
        POSITION_EMBED_STD,
        false,
    )?;
    for b in 0..t.blocks {
        init.block(&format!("text.blocks.{b}"), d, t.mlp_hidden, &cfg.lora)?;
    }
    init.layer_norm("text.ln_final", d)?;
    init.gaussian("text.proj", &[d, d], 1.0 / libm::sqrt(d as f64), false)?;
    Ok(())
}

/// `x·γ + β` after row-wise normalization, with affine terms read from
/// `{prefix}.gamma` / `{prefix}.beta`.
pub(crate) fn layer_norm(g: &mut Graph, x: NodeId, prefix: &str, width: usize) -> Result<NodeId> {
    let n = g.layer_norm(x, LAYER_NORM_EPS)?;
    let gamma = g.param(&format!("{prefix}.gamma"), &[width])?;
    let gamma = g.reshape(gamma, &[1, width])?;
    let beta = g.param(&format!("{prefix}.beta"), &[width])?;
    let beta = g.reshape(beta, &[1, width])?;
    let scaled = g.mul(n, gamma)?;
    g.add(scaled, beta)
}

/// One pre-norm transformer block with single-head attention and a
/// LoRA-wrapped MLP. `x` is `[tokens × width]`.
pub(crate) fn transformer_block(
    g: &mut Graph,
    x: NodeId,
    prefix: &str,
    width: usize,
    hidden: usize,
    lora: Option<&LoraConfig>,
) -> Result<NodeId> {
    let h = layer_norm(g, x, &format!("{prefix}.ln1"), width)?;
    let proj = |g: &mut Graph, w: &str| -> Result<NodeId> {
        let weight = g.param(&format!("{prefix}.attn.{w}"), &[width, width])?;
        g.matmul(h, weight)
    };
    let q = proj(g, "q")?;
    let k = proj(g, "k")?;
    let v = proj(g, "v")?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / libm::sqrt(width as f64));
    let attn = g.softmax(scores)?;
    let mixed = g.matmul(attn, v)?;
    let wo = g.param(&format!("{prefix}.attn.o"), &[width, width])?;
    let out = g.matmul(mixed, wo)?;
    let x = g.add(x, out)?;

    let h = layer_norm(g, x, &format!("{prefix}.ln2"), width)?;
    let m = mlp_with_lora(g, h, &format!("{prefix}.mlp"), width, hidden, lora)?;
    g.add(x, m)
}
