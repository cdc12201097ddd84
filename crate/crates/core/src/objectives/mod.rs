//! Masked contrastive, alignment and two-logit classification objectives.
//!
//! Labels are `0` for real and `1` for fake throughout. Contrastive terms
//! average over anchors; the classification term sums over the batch.

mod bank;
mod mask;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Feed, Graph, NodeId, ParamStore, Tensor};

pub use bank::MemoryBank;
pub use mask::{build_mask, build_mask_against, MaskMatrix, MaskStrategy};

/// Which contrastive branches enter the combined contrastive term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScBranches {
    Image,
    Text,
    /// Mean of the image and text branches.
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub tau: f64,
    /// Weight of the contrastive term.
    pub lambda1: f64,
    /// Weight of the alignment term.
    pub lambda2: f64,
    pub mask_real: MaskStrategy,
    pub mask_fake: MaskStrategy,
    pub sc_branches: ScBranches,
    pub align: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            lambda1: 1.0,
            lambda2: 1.25,
            mask_real: MaskStrategy::Cluster,
            mask_fake: MaskStrategy::Individual,
            sc_branches: ScBranches::Both,
            align: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    fn mask(&self, anchors: &[u8], contrast: &[u8]) -> Result<MaskMatrix> {
        build_mask_against(anchors, contrast, self.mask_real, self.mask_fake)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {tau}")))
    }
}

/// Masked contrastive loss of `anchors [B×D]` against `contrast [C×D]`:
/// the mean over anchors of `−log(Σ_pos e^{s/τ} / Σ_all e^{s/τ}) / |pos|`.
/// The denominator includes the anchor's own column.
pub fn build_contrastive(
    g: &mut Graph,
    anchors: NodeId,
    contrast: NodeId,
    mask: &MaskMatrix,
    tau: f64,
) -> Result<NodeId> {
    check_tau(tau)?;
    let b = g.shape(anchors)[0];
    if [mask.rows(), mask.cols()] != [b, g.shape(contrast)[0]] {
        return Err(Error::Shape {
            node: anchors.index(),
            op: "contrastive",
            detail: format!(
                "mask is {}x{}, features give {}x{}",
                mask.rows(),
                mask.cols(),
                b,
                g.shape(contrast)[0]
            ),
        });
    }
    let ct = g.transpose(contrast)?;
    let sim = g.matmul(anchors, ct)?;
    // shifting by the largest attainable unit-vector logit keeps exp bounded
    let shift = g.constant(Tensor::scalar(-1.0 / tau).reshaped(&[1, 1])?);
    let logits = g.scale(sim, 1.0 / tau);
    let logits = g.add(logits, shift)?;
    let e = g.exp(logits);
    let m = g.constant(mask.to_tensor());
    let pos = g.mul(e, m)?;
    let num = g.sum(pos, 1)?;
    let den = g.sum(e, 1)?;
    let ln_num = g.log(num);
    let ln_den = g.log(den);
    let ratio = g.sub(ln_num, ln_den)?;
    let weights = (0..b)
        .map(|i| -1.0 / (b as f64 * mask.positives(i) as f64))
        .collect();
    let w = g.constant(Tensor::vector(weights));
    let weighted = g.mul(ratio, w)?;
    g.sum_all(weighted)
}

/// Row-wise dot products of two `[B×D]` nodes, giving `[B]`.
pub fn build_row_dots(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let p = g.mul(a, b)?;
    g.sum(p, 1)
}

/// Batch sum of the two-way softmax cross-entropy over `(o_r, o_f)`.
pub fn build_cls(g: &mut Graph, o_r: NodeId, o_f: NodeId, labels: &[u8]) -> Result<NodeId> {
    let er = g.exp(o_r);
    let ef = g.exp(o_f);
    let z = g.add(er, ef)?;
    let lse = g.log(z);
    let wr = g.constant(Tensor::vector(labels.iter().map(|&y| f64::from(1 - y)).collect()));
    let wf = g.constant(Tensor::vector(labels.iter().map(|&y| f64::from(y)).collect()));
    let tr = g.mul(o_r, wr)?;
    let tf = g.mul(o_f, wf)?;
    let target = g.add(tr, tf)?;
    let nll = g.sub(lse, target)?;
    g.sum_all(nll)
}

/// Per-sample text features: `T_r` rows for real samples, `T_f` rows for fakes.
pub fn build_text_features(g: &mut Graph, t_r: NodeId, t_f: NodeId, labels: &[u8]) -> Result<NodeId> {
    let b = labels.len();
    let col = |g: &mut Graph, f: &dyn Fn(u8) -> u8| -> Result<NodeId> {
        let v = labels.iter().map(|&y| f64::from(f(y))).collect();
        Ok(g.constant(Tensor::new(&[b, 1], v)?))
    };
    let real = col(g, &|y| 1 - y)?;
    let fake = col(g, &|y| y)?;
    let a = g.mul(t_r, real)?;
    let c = g.mul(t_f, fake)?;
    g.add(a, c)
}

fn labels_ok(labels: &[u8], rows: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("labels"));
    }
    if labels.len() != rows {
        return Err(Error::InvalidTensor(format!(
            "{} labels for {rows} feature rows",
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidTensor("labels must be 0 or 1".into()));
    }
    Ok(())
}

fn eval_scalar(g: &Graph, out: NodeId, feed: &Feed<'_>) -> Result<f64> {
    Ok(g.eval(&ParamStore::new(), feed)?.get(out).item())
}

/// Masked contrastive loss of a feature set against itself.
pub fn supcon(features: &Tensor, mask: &MaskMatrix, tau: f64) -> Result<f64> {
    let mut g = Graph::new();
    let f = g.input("f", features.shape())?;
    let out = build_contrastive(&mut g, f, f, mask, tau)?;
    eval_scalar(&g, out, &[("f", features)].into_iter().collect())
}

/// Image-anchored alignment of `z` rows against text rows `t`.
pub fn align_loss(z: &Tensor, t: &Tensor, mask: &MaskMatrix, tau: f64) -> Result<f64> {
    let mut g = Graph::new();
    let zi = g.input("z", z.shape())?;
    let ti = g.input("t", t.shape())?;
    let out = build_contrastive(&mut g, zi, ti, mask, tau)?;
    eval_scalar(&g, out, &[("z", z), ("t", t)].into_iter().collect())
}

/// Combined contrastive term over image rows `z` and text rows `t`.
pub fn sc_loss(z: &Tensor, t: &Tensor, labels: &[u8], cfg: &LossConfig) -> Result<f64> {
    labels_ok(labels, z.rows())?;
    let mask = cfg.mask(labels, labels)?;
    let li = || supcon(z, &mask, cfg.tau);
    let lt = || supcon(t, &mask, cfg.tau);
    Ok(match cfg.sc_branches {
        ScBranches::Image => li()?,
        ScBranches::Text => lt()?,
        ScBranches::Both => 0.5 * (li()? + lt()?),
    })
}

/// `(z·T_r, z·T_f)`.
pub fn logits(z: &Tensor, t_r: &Tensor, t_f: &Tensor) -> (f64, f64) {
    (z.dot(t_r), z.dot(t_f))
}

/// Summed two-way cross-entropy over `(o_r, o_f)` pairs.
pub fn cls_loss(pairs: &[(f64, f64)], labels: &[u8]) -> Result<f64> {
    labels_ok(labels, pairs.len())?;
    let mut g = Graph::new();
    let o_r = g.input("o_r", &[pairs.len()])?;
    let o_f = g.input("o_f", &[pairs.len()])?;
    let out = build_cls(&mut g, o_r, o_f, labels)?;
    let r = Tensor::vector(pairs.iter().map(|p| p.0).collect());
    let f = Tensor::vector(pairs.iter().map(|p| p.1).collect());
    eval_scalar(&g, out, &[("o_r", &r), ("o_f", &f)].into_iter().collect())
}

/// `cls + λ₁·sc + λ₂·align`, leaving out terms whose weight is zero or
/// that are switched off.
pub fn total_loss(cls: f64, sc: f64, align: f64, cfg: &LossConfig) -> f64 {
    let mut total = cls;
    if cfg.lambda1 != 0.0 {
        total += cfg.lambda1 * sc;
    }
    if cfg.align && cfg.lambda2 != 0.0 {
        total += cfg.lambda2 * align;
    }
    total
}

/// A scalar of the batch objective that gradients can be taken of.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Cls,
    /// Image-branch contrastive loss.
    ScImage,
    /// Text-branch contrastive loss.
    ScText,
    /// The combined contrastive term per the branch setting.
    Sc,
    Align,
    Total,
}

impl LossTerm {
    pub const ALL: [LossTerm; 6] = [
        LossTerm::Cls,
        LossTerm::ScImage,
        LossTerm::ScText,
        LossTerm::Sc,
        LossTerm::Align,
        LossTerm::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Cls => "cls",
            LossTerm::ScImage => "sc_image",
            LossTerm::ScText => "sc_text",
            LossTerm::Sc => "sc",
            LossTerm::Align => "align",
            LossTerm::Total => "total",
        }
    }
}

/// Loss values of one batch. Switched-off terms read zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub cls: f64,
    pub sc: f64,
    pub align: f64,
    pub total: f64,
}

/// Gradients of the total loss with respect to the batch outputs.
#[derive(Clone, Debug)]
pub struct BatchGrads {
    pub z: Tensor,
    pub t_r: Tensor,
    pub t_f: Tensor,
}

/// The whole objective for one batch of `(z, T_r, T_f)` rows, with the
/// bank's detached image features appended to the image contrast set.
#[derive(Clone, Debug)]
pub struct BatchObjective {
    graph: Graph,
    cls: NodeId,
    sc_image: NodeId,
    sc_text: NodeId,
    sc: NodeId,
    align: Option<NodeId>,
    total: NodeId,
    /// First node id of each term, in build order.
    spans: Vec<(usize, &'static str)>,
    batch: usize,
    width: usize,
}

impl BatchObjective {
    pub fn new(labels: &[u8], width: usize, bank: Option<&MemoryBank>, cfg: &LossConfig) -> Result<Self> {
        cfg.validate()?;
        labels_ok(labels, labels.len())?;
        let b = labels.len();
        let mut g = Graph::new();
        let z = g.input("z", &[b, width])?;
        let t_r = g.input("t_r", &[b, width])?;
        let t_f = g.input("t_f", &[b, width])?;
        let mut spans = Vec::new();

        spans.push((g.len(), "cls"));
        let o_r = build_row_dots(&mut g, z, t_r)?;
        let o_f = build_row_dots(&mut g, z, t_f)?;
        let cls = build_cls(&mut g, o_r, o_f, labels)?;

        spans.push((g.len(), "sc"));
        let text = build_text_features(&mut g, t_r, t_f, labels)?;
        let batch_mask = cfg.mask(labels, labels)?;
        let (contrast, image_mask) = match bank.and_then(|bk| Some((bk.features()?, bk.labels()))) {
            Some((feats, bank_labels)) => {
                let stored = g.constant(feats);
                let all = g.concat(&[z, stored], 0)?;
                let mut contrast_labels = labels.to_vec();
                contrast_labels.extend(bank_labels);
                (all, cfg.mask(labels, &contrast_labels)?)
            }
            None => (z, batch_mask.clone()),
        };
        let sc_image = build_contrastive(&mut g, z, contrast, &image_mask, cfg.tau)?;
        let sc_text = build_contrastive(&mut g, text, text, &batch_mask, cfg.tau)?;
        let sc = match cfg.sc_branches {
            ScBranches::Image => sc_image,
            ScBranches::Text => sc_text,
            ScBranches::Both => {
                let s = g.add(sc_image, sc_text)?;
                g.scale(s, 0.5)
            }
        };

        spans.push((g.len(), "align"));
        let align = if cfg.align {
            Some(build_contrastive(&mut g, z, text, &batch_mask, cfg.tau)?)
        } else {
            None
        };

        spans.push((g.len(), "total"));
        let mut total = cls;
        if cfg.lambda1 != 0.0 {
            let w = g.scale(sc, cfg.lambda1);
            total = g.add(total, w)?;
        }
        if let (Some(a), true) = (align, cfg.lambda2 != 0.0) {
            let w = g.scale(a, cfg.lambda2);
            total = g.add(total, w)?;
        }
        Ok(Self {
            graph: g,
            cls,
            sc_image,
            sc_text,
            sc,
            align,
            total,
            spans,
            batch: b,
            width,
        })
    }

    fn term_of(&self, node: usize) -> &'static str {
        self.spans
            .iter()
            .rev()
            .find(|(start, _)| node >= *start)
            .map_or("inputs", |(_, t)| *t)
    }

    fn node(&self, term: LossTerm) -> Result<NodeId> {
        Ok(match term {
            LossTerm::Cls => self.cls,
            LossTerm::ScImage => self.sc_image,
            LossTerm::ScText => self.sc_text,
            LossTerm::Sc => self.sc,
            LossTerm::Align => self
                .align
                .ok_or_else(|| Error::Config("the alignment term is switched off".into()))?,
            LossTerm::Total => self.total,
        })
    }

    /// Values of every term, without gradients.
    pub fn values(&self, z: &Tensor, t_r: &Tensor, t_f: &Tensor) -> Result<BTreeMap<LossTerm, f64>> {
        let values = self.eval(z, t_r, t_f, 0)?;
        let mut out = BTreeMap::new();
        for term in LossTerm::ALL {
            if let Ok(n) = self.node(term) {
                out.insert(term, values.get(n).item());
            }
        }
        Ok(out)
    }

    /// Evaluates the objective and the gradients of its total.
    pub fn run(&self, z: &Tensor, t_r: &Tensor, t_f: &Tensor, step: usize) -> Result<(LossValues, BatchGrads)> {
        self.run_term(LossTerm::Total, z, t_r, t_f, step)
    }

    fn eval(&self, z: &Tensor, t_r: &Tensor, t_f: &Tensor, step: usize) -> Result<crate::numcore::Values> {
        let shape = [self.batch, self.width];
        for t in [z, t_r, t_f] {
            if t.shape() != shape {
                return Err(Error::InvalidTensor(format!(
                    "batch outputs must be {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        let feed: Feed = [("z", z), ("t_r", t_r), ("t_f", t_f)].into_iter().collect();
        self.graph.eval(&ParamStore::new(), &feed).map_err(|e| match e {
            Error::NonFinite { node, .. } => Error::NonFiniteLoss {
                term: self.term_of(node),
                step,
            },
            other => other,
        })
    }

    /// Like [`run`](Self::run), with gradients of `term` instead of the total.
    /// `step` only labels errors.
    pub fn run_term(
        &self,
        term: LossTerm,
        z: &Tensor,
        t_r: &Tensor,
        t_f: &Tensor,
        step: usize,
    ) -> Result<(LossValues, BatchGrads)> {
        let target = self.node(term)?;
        let values = self.eval(z, t_r, t_f, step)?;
        let params = ParamStore::new();
        let shape = [self.batch, self.width];
        let losses = LossValues {
            cls: values.get(self.cls).item(),
            sc: values.get(self.sc).item(),
            align: self.align.map_or(0.0, |a| values.get(a).item()),
            total: values.get(self.total).item(),
        };
        let seed = Tensor::scalar(1.0);
        let mut g = self
            .graph
            .vjp(&values, &[(target, seed)], &params, &["z", "t_r", "t_f"])
            .map_err(|e| match e {
                Error::NonFinite { node, .. } => Error::NonFiniteLoss {
                    term: self.term_of(node),
                    step,
                },
                other => other,
            })?
            .inputs;
        let mut take = |n: &str| g.remove(n).unwrap_or_else(|| Tensor::zeros(&shape));
        let grads = BatchGrads {
            z: take("z"),
            t_r: take("t_r"),
            t_f: take("t_f"),
        };
        Ok((losses, grads))
    }
}
