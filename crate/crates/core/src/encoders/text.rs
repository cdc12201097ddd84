//! Text tower over continuous token sequences.

use alloc::format;

use super::{layer_norm, transformer_block, EncoderConfig, LoraConfig};
use crate::error::{Error, Result};
use crate::numcore::{Feed, Graph, NodeId, ParamStore, Tensor};

/// Encodes a `[S × D]` sequence of token vectors into a unit-norm `[D]`
/// embedding, pooled at the final position.
pub fn build_text_tower(g: &mut Graph, seq: NodeId, cfg: &EncoderConfig) -> Result<NodeId> {
    build_text_tower_with(g, seq, cfg, Some(&cfg.lora))
}

pub fn build_text_tower_with(
    g: &mut Graph,
    seq: NodeId,
    cfg: &EncoderConfig,
    lora: Option<&LoraConfig>,
) -> Result<NodeId> {
    let (d, t) = (cfg.width, &cfg.text);
    let shape = g.shape(seq).to_vec();
    if shape.len() != 2 || shape[1] != d {
        return Err(Error::Shape {
            node: seq.index(),
            op: "text_tower",
            detail: format!("sequence must be [S x {d}], got {shape:?}"),
        });
    }
    let len = shape[0];
    if len > t.context_length {
        return Err(Error::ContextOverflow {
            len,
            capacity: t.context_length,
        });
    }
    let pos = g.param("text.position_embedding", &[t.context_length, d])?;
    let pos = g.slice(pos, 0, 0, len)?;
    let mut x = g.add(seq, pos)?;
    for blk in 0..t.blocks {
        x = transformer_block(g, x, &format!("text.blocks.{blk}"), d, t.mlp_hidden, lora)?;
    }
    let x = layer_norm(g, x, "text.ln_final", d)?;
    let last = g.slice(x, 0, len - 1, len)?;
    let proj = g.param("text.proj", &[d, d])?;
    let out = g.matmul(last, proj)?;
    let out = g.reshape(out, &[d])?;
    g.l2_normalize(out)
}

pub fn text_forward(seq: &Tensor, params: &ParamStore, cfg: &EncoderConfig) -> Result<Tensor> {
    run_text_tower(seq, params, cfg, Some(&cfg.lora))
}

/// [`text_forward`] through the frozen base weights only, ignoring LoRA.
pub fn frozen_text_forward(seq: &Tensor, params: &ParamStore, cfg: &EncoderConfig) -> Result<Tensor> {
    run_text_tower(seq, params, cfg, None)
}

fn run_text_tower(
    seq: &Tensor,
    params: &ParamStore,
    cfg: &EncoderConfig,
    lora: Option<&LoraConfig>,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let input = g.input("seq", seq.shape())?;
    let t = build_text_tower_with(&mut g, input, cfg, lora)?;
    let feed: Feed = [("seq", seq)].into_iter().collect();
    Ok(g.eval(params, &feed)?.get(t).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::init_params;
    use crate::numcore::gradcheck::{check_gradients, GradCheckConfig};
    use crate::rng::gaussian;

    fn setup() -> (EncoderConfig, ParamStore) {
        let cfg = EncoderConfig::default();
        let mut store = ParamStore::new();
        init_params(&cfg, 11, &mut store).unwrap();
        (cfg, store)
    }

    #[test]
    fn pure_and_sensitive() {
        let (cfg, store) = setup();
        let seq = gaussian(1, "seq", &[6, 64], 0.02);
        let a = text_forward(&seq, &store, &cfg).unwrap();
        let b = text_forward(&seq, &store, &cfg).unwrap();
        assert!(a.bit_eq(&b));
        assert!((a.l2_norm() - 1.0).abs() < 1e-6);

        let mut other = seq.clone();
        other.data_mut()[64] += 0.02; // second position only
        let c = text_forward(&other, &store, &cfg).unwrap();
        assert!(a.max_abs_diff(&c) > 0.0);
        assert!(a.bit_eq(&frozen_text_forward(&seq, &store, &cfg).unwrap()));
    }

    #[test]
    fn overflow_names_the_lengths() {
        let (cfg, store) = setup();
        let seq = gaussian(1, "seq", &[25, 64], 0.02);
        assert_eq!(
            text_forward(&seq, &store, &cfg).unwrap_err(),
            Error::ContextOverflow {
                len: 25,
                capacity: 24
            }
        );
    }

    #[test]
    fn prompt_gradient_matches_finite_differences() {
        let (cfg, mut store) = setup();
        // treat the first rows as learnable prompts, the rest as fixed context
        store.insert("prompt", gaussian(2, "prompt", &[4, 64], 0.02), true).unwrap();
        // random LoRA B so the check also covers the adapter path
        let names: alloc::vec::Vec<_> = store
            .trainable_names()
            .filter(|n| n.starts_with("text") && n.ends_with("lora_b"))
            .map(alloc::string::String::from)
            .collect();
        for n in names {
            let shape = store.get(&n).unwrap().shape().to_vec();
            store.set_trainable(&n, gaussian(3, &n, &shape, 0.05)).unwrap();
        }
        let ctx = gaussian(4, "ctx", &[3, 64], 0.02);
        let probe = gaussian(5, "probe", &[64], 1.0);

        let mut g = Graph::new();
        let p = g.param("prompt", &[4, 64]).unwrap();
        let c = g.input("ctx", &[3, 64]).unwrap();
        let seq = g.concat(&[p, c], 0).unwrap();
        let t = build_text_tower(&mut g, seq, &cfg).unwrap();
        let w = g.constant(probe);
        let s = g.mul(t, w).unwrap();
        let loss = g.sum_all(s).unwrap();

        let feed: Feed = [("ctx", &ctx)].into_iter().collect();
        let vals = g.eval(&store, &feed).unwrap();
        let mut grads = g.backward(&vals, loss, &store).unwrap();
        assert!(grads["prompt"].l2_norm() > 0.0);
        grads.retain(|k, _| k == "prompt" || k.starts_with("text.blocks.1"));
        let cfg_fd = GradCheckConfig {
            coords_per_param: Some(12),
            seed: 1,
            ..GradCheckConfig::default()
        };
        let report = check_gradients(&g, loss, &store, &feed, &grads, &cfg_fd).unwrap();
        assert!(report.max_rel_error() < 1e-4, "{report:?}");
    }
}
