//! Low-rank adapters around frozen linear layers.

use alloc::format;

use super::LoraConfig;
use crate::error::{Error, Result};
use crate::numcore::{Graph, NodeId};

/// `x·W + b + (alpha/r)·(x·A)·B` for the layer stored under `prefix`.
///
/// `W`, `b` are the frozen base weights; `A` (`d_in × r`) and `B`
/// (`r × d_out`) are the trainable factors. With `B = 0` the output equals
/// the base layer exactly. `lora = None` builds the bare frozen layer.
pub fn lora_linear(
    g: &mut Graph,
    x: NodeId,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    lora: Option<&LoraConfig>,
) -> Result<NodeId> {
    let rows = g.shape(x)[0];
    let w = g.param(&format!("{prefix}.weight"), &[d_in, d_out])?;
    let b = g.param(&format!("{prefix}.bias"), &[d_out])?;
    let b = g.reshape(b, &[1, d_out])?;
    let base = g.matmul(x, w)?;
    let base = g.add(base, b)?;
    let Some(lora) = lora else {
        return Ok(base);
    };
    if lora.rank == 0 {
        return Err(Error::Config("LoRA rank must be positive".into()));
    }

    let a = g.param(&format!("{prefix}.lora_a"), &[d_in, lora.rank])?;
    let bb = g.param(&format!("{prefix}.lora_b"), &[lora.rank, d_out])?;
    let down = g.matmul(x, a)?;
    let up = g.matmul(down, bb)?;
    let delta = g.scale(up, lora.scale());
    debug_assert_eq!(g.shape(delta), &[rows, d_out]);
    g.add(base, delta)
}

/// Two-layer ReLU MLP whose linear layers both carry LoRA factors.
pub fn mlp_with_lora(
    g: &mut Graph,
    x: NodeId,
    prefix: &str,
    width: usize,
    hidden: usize,
    lora: Option<&LoraConfig>,
) -> Result<NodeId> {
    let h = lora_linear(g, x, &format!("{prefix}.fc1"), width, hidden, lora)?;
    let h = g.relu(h);
    lora_linear(g, h, &format!("{prefix}.fc2"), hidden, width, lora)
}
