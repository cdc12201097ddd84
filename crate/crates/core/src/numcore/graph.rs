//! Static computation graphs with reverse-mode differentiation.
//!
//! A [`Graph`] is built once (shapes are checked while building), then
//! evaluated any number of times against a [`ParamStore`] and a [`Feed`] of
//! named inputs. Evaluation is a pure function of those three things, so a
//! single graph can be shared by concurrent readers.
//!
//! Backward passes only visit nodes that lie on a path from a trainable
//! parameter (or a requested input) to a seeded node. Frozen subgraphs cost
//! nothing on the way back.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{
    axis_split, broadcast_strides, for_each_broadcast, matmul, matmul_nt, matmul_tn, reduce_to,
};
use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named input tensors for one evaluation.
pub type Feed<'a> = BTreeMap<&'a str, &'a Tensor>;

/// The primitive op set. Each has a forward rule and an adjoint.
#[derive(Clone, Debug)]
pub enum Op {
    Input(String),
    Param(String),
    Const(Tensor),
    /// `[m×k] · [k×n]`.
    MatMul(NodeId, NodeId),
    /// Elementwise with same-rank broadcasting over extent-1 axes.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Reduces (and drops) `axis`.
    Sum(NodeId, usize),
    Mean(NodeId, usize),
    Exp(NodeId),
    Log(NodeId),
    Relu(NodeId),
    /// Rows along the last axis scaled to unit euclidean norm.
    L2Normalize(NodeId),
    /// Zero-mean, unit-variance rows along the last axis (no affine part).
    LayerNorm(NodeId, f64),
    /// Softmax along the last axis.
    Softmax(NodeId),
    Concat(Vec<NodeId>, usize),
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
        end: usize,
    },
    /// Rank-2 transpose.
    Transpose(NodeId),
    Reshape(NodeId),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const(_) => "const",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Relu(_) => "relu",
            Op::L2Normalize(_) => "l2_normalize",
            Op::LayerNorm(..) => "layer_norm",
            Op::Softmax(_) => "softmax",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Param(_) | Op::Const(_) => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Sum(x, _)
            | Op::Mean(x, _)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Relu(x)
            | Op::L2Normalize(x)
            | Op::LayerNorm(x, _)
            | Op::Softmax(x)
            | Op::Slice { x, .. }
            | Op::Transpose(x)
            | Op::Reshape(x) => vec![*x],
            Op::Concat(xs, _) => xs.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// An append-only DAG of primitive ops. Node ids are topologically ordered
/// by construction: every operand id is smaller than its consumer's.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
    inputs: BTreeMap<String, NodeId>,
}

/// Forward values for every node of a graph, indexed by [`NodeId`].
#[derive(Clone, Debug)]
pub struct Values {
    tensors: Vec<Tensor>,
}

impl Values {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

/// Result of a vector-Jacobian product.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    /// One entry per trainable parameter referenced by the graph.
    pub params: BTreeMap<String, Tensor>,
    /// One entry per requested input.
    pub inputs: BTreeMap<String, Tensor>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn input_id(&self, name: &str) -> Option<NodeId> {
        self.inputs.get(name).copied()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, shape });
        NodeId(self.nodes.len() - 1)
    }

    fn shape_err(&self, op: &'static str, detail: String) -> Error {
        Error::Shape {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    fn leaf(
        &mut self,
        name: &str,
        shape: &[usize],
        param: bool,
    ) -> Result<NodeId> {
        let (registry, kind) = if param {
            (&self.params, "param")
        } else {
            (&self.inputs, "input")
        };
        if let Some(&id) = registry.get(name) {
            if self.nodes[id.0].shape != shape {
                return Err(self.shape_err(
                    kind,
                    format!(
                        "`{name}` redeclared as {shape:?}, was {:?}",
                        self.nodes[id.0].shape
                    ),
                ));
            }
            return Ok(id);
        }
        if shape.contains(&0) {
            return Err(self.shape_err(kind, format!("`{name}` has a zero dimension")));
        }
        let op = if param {
            Op::Param(name.to_string())
        } else {
            Op::Input(name.to_string())
        };
        let id = self.push(op, shape.to_vec());
        if param {
            self.params.insert(name.to_string(), id);
        } else {
            self.inputs.insert(name.to_string(), id);
        }
        Ok(id)
    }

    /// A named input bound through the [`Feed`]. Redeclaring a name returns
    /// the existing node.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        self.leaf(name, shape, false)
    }

    /// A named parameter looked up in the [`ParamStore`].
    pub fn param(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        self.leaf(name, shape, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Const(value), shape)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let shape = vec![sa[0], sb[1]];
        Ok(self.push(Op::MatMul(a, b), shape))
    }

    fn broadcast_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return Err(self.shape_err(op, format!("rank mismatch {sa:?} vs {sb:?}")));
        }
        sa.iter()
            .zip(sb)
            .map(|(&x, &y)| match (x, y) {
                _ if x == y => Ok(x),
                (1, _) => Ok(y),
                (_, 1) => Ok(x),
                _ => Err(self.shape_err(op, format!("cannot broadcast {sa:?} with {sb:?}"))),
            })
            .collect()
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.broadcast_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), shape))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.broadcast_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), shape))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.broadcast_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), shape))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale(x, factor), shape)
    }

    fn reduced_shape(&self, op: &'static str, x: NodeId, axis: usize) -> Result<Vec<usize>> {
        let sx = self.shape(x);
        if axis >= sx.len() {
            return Err(self.shape_err(op, format!("axis {axis} out of range for {sx:?}")));
        }
        let mut shape = sx.to_vec();
        shape.remove(axis);
        Ok(shape)
    }

    pub fn sum(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.reduced_shape("sum", x, axis)?;
        Ok(self.push(Op::Sum(x, axis), shape))
    }

    pub fn mean(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.reduced_shape("mean", x, axis)?;
        Ok(self.push(Op::Mean(x, axis), shape))
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let mut cur = x;
        while !self.shape(cur).is_empty() {
            cur = self.sum(cur, 0)?;
        }
        Ok(cur)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Exp(x), shape)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Log(x), shape)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Relu(x), shape)
    }

    fn last_axis_op(&mut self, op: Op) -> Result<NodeId> {
        let x = op.operands()[0];
        let shape = self.shape(x).to_vec();
        if shape.is_empty() {
            return Err(self.shape_err(op.name(), "needs at least one axis".into()));
        }
        Ok(self.push(op, shape))
    }

    pub fn l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        self.last_axis_op(Op::L2Normalize(x))
    }

    pub fn layer_norm(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        self.last_axis_op(Op::LayerNorm(x, eps))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.last_axis_op(Op::Softmax(x))
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = match xs.first() {
            Some(&f) => self.shape(f).to_vec(),
            None => return Err(self.shape_err("concat", "no operands".into())),
        };
        if axis >= first.len() {
            return Err(self.shape_err("concat", format!("axis {axis} out of range")));
        }
        let mut shape = first.clone();
        shape[axis] = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(self.shape_err("concat", format!("{s:?} does not fit {first:?}")));
            }
            shape[axis] += s[axis];
        }
        Ok(self.push(Op::Concat(xs.to_vec(), axis), shape))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        let sx = self.shape(x);
        if axis >= sx.len() || start >= end || end > sx[axis] {
            return Err(self.shape_err(
                "slice",
                format!("{start}..{end} on axis {axis} of {sx:?}"),
            ));
        }
        let mut shape = sx.to_vec();
        shape[axis] = end - start;
        Ok(self.push(
            Op::Slice {
                x,
                axis,
                start,
                end,
            },
            shape,
        ))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let sx = self.shape(x);
        if sx.len() != 2 {
            return Err(self.shape_err("transpose", format!("needs rank 2, got {sx:?}")));
        }
        let shape = vec![sx[1], sx[0]];
        Ok(self.push(Op::Transpose(x), shape))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let sx = self.shape(x);
        let (a, b): (usize, usize) = (sx.iter().product(), shape.iter().product());
        if a != b || shape.contains(&0) {
            return Err(self.shape_err("reshape", format!("{sx:?} into {shape:?}")));
        }
        Ok(self.push(Op::Reshape(x), shape.to_vec()))
    }

    /// Evaluates every node. Identical `(graph, params, feed)` produce
    /// bit-identical values.
    pub fn eval(&self, params: &ParamStore, feed: &Feed<'_>) -> Result<Values> {
        let mut tensors: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let value = match &node.op {
                Op::Input(name) | Op::Param(name) => {
                    let bound = match node.op {
                        Op::Param(_) => params.get(name),
                        _ => feed.get(name.as_str()).copied(),
                    };
                    let t = bound.ok_or_else(|| Error::MissingInput {
                        node: idx,
                        name: name.clone(),
                    })?;
                    if t.shape() != node.shape.as_slice() {
                        return Err(Error::Shape {
                            node: idx,
                            op: node.op.name(),
                            detail: format!(
                                "`{name}` declared {:?} but bound to {:?}",
                                node.shape,
                                t.shape()
                            ),
                        });
                    }
                    t.clone()
                }
                op => forward(idx, op, &node.shape, &tensors)?,
            };
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    node: idx,
                    op: node.op.name(),
                });
            }
            tensors.push(value);
        }
        Ok(Values { tensors })
    }

    /// Gradients of a scalar `loss` w.r.t. every trainable parameter the
    /// graph references. Frozen parameters get no entry.
    pub fn backward(
        &self,
        values: &Values,
        loss: NodeId,
        params: &ParamStore,
    ) -> Result<BTreeMap<String, Tensor>> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss {
                shape: shape.to_vec(),
            });
        }
        let seed = Tensor::new(shape, vec![1.0])?;
        Ok(self.vjp(values, &[(loss, seed)], params, &[])?.params)
    }

    /// Vector-Jacobian product seeded at arbitrary nodes.
    ///
    /// Returns gradients for every trainable parameter referenced by the
    /// graph (zero when unreachable from the seeds) and for every input
    /// named in `wrt_inputs`.
    pub fn vjp(
        &self,
        values: &Values,
        seeds: &[(NodeId, Tensor)],
        params: &ParamStore,
        wrt_inputs: &[&str],
    ) -> Result<Gradients> {
        let n = self.nodes.len();
        let mut needs = vec![false; n];
        for (idx, node) in self.nodes.iter().enumerate() {
            needs[idx] = match &node.op {
                Op::Param(name) => params.is_trainable(name),
                Op::Input(name) => wrt_inputs.contains(&name.as_str()),
                Op::Const(_) => false,
                op => op.operands().iter().any(|o| needs[o.0]),
            };
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        for (id, seed) in seeds {
            if seed.shape() != self.shape(*id) {
                return Err(Error::Shape {
                    node: id.0,
                    op: "seed",
                    detail: format!("seed {:?} for node {:?}", seed.shape(), self.shape(*id)),
                });
            }
            accumulate(&mut grads, *id, seed.clone());
        }

        for idx in (0..n).rev() {
            if !needs[idx] {
                continue;
            }
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Input(_) | Op::Param(_) | Op::Const(_)) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    node: idx,
                    op: node.op.name(),
                });
            }
            self.adjoint(idx, &g, values, &needs, &mut grads)?;
        }

        let mut out = Gradients::default();
        for (name, &id) in &self.params {
            if params.is_trainable(name) {
                let g = grads[id.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.shape(id)));
                out.params.insert(name.clone(), g);
            }
        }
        for name in wrt_inputs {
            if let Some(&id) = self.inputs.get(*name) {
                let g = grads[id.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.shape(id)));
                out.inputs.insert((*name).to_string(), g);
            }
        }
        Ok(out)
    }

    fn adjoint(
        &self,
        idx: usize,
        g: &Tensor,
        values: &Values,
        needs: &[bool],
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let node = &self.nodes[idx];
        let out_shape = node.shape.as_slice();
        let val = |id: NodeId| values.get(id);
        let gd = g.data();
        match &node.op {
            Op::Input(_) | Op::Param(_) | Op::Const(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, nn) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if needs[a.0] {
                    let ga = matmul_nt(gd, bv.data(), m, nn, k);
                    accumulate(grads, *a, Tensor::new(&[m, k], ga)?);
                }
                if needs[b.0] {
                    let gb = matmul_tn(av.data(), gd, m, k, nn);
                    accumulate(grads, *b, Tensor::new(&[k, nn], gb)?);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if needs[a.0] {
                    let sa = self.shape(*a);
                    accumulate(grads, *a, Tensor::new(sa, reduce_to(gd, out_shape, sa))?);
                }
                if needs[b.0] {
                    let sb = self.shape(*b);
                    let mut gb = reduce_to(gd, out_shape, sb);
                    if sign < 0.0 {
                        gb.iter_mut().for_each(|v| *v = -*v);
                    }
                    accumulate(grads, *b, Tensor::new(sb, gb)?);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let sa_str = broadcast_strides(av.shape(), out_shape);
                let sb_str = broadcast_strides(bv.shape(), out_shape);
                if needs[a.0] {
                    let mut ga = vec![0.0; av.len()];
                    for_each_broadcast(out_shape, &sa_str, &sb_str, |o, ai, bi| {
                        ga[ai] += gd[o] * bv.data()[bi];
                    });
                    accumulate(grads, *a, Tensor::new(av.shape(), ga)?);
                }
                if needs[b.0] {
                    let mut gb = vec![0.0; bv.len()];
                    for_each_broadcast(out_shape, &sa_str, &sb_str, |o, ai, bi| {
                        gb[bi] += gd[o] * av.data()[ai];
                    });
                    accumulate(grads, *b, Tensor::new(bv.shape(), gb)?);
                }
            }
            Op::Scale(x, s) => accumulate(grads, *x, g.scaled(*s)),
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let sx = self.shape(*x);
                let (outer, len, inner) = axis_split(sx, *axis);
                let factor = if matches!(node.op, Op::Mean(..)) {
                    1.0 / len as f64
                } else {
                    1.0
                };
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            gx[(o * len + j) * inner + i] = gd[o * inner + i] * factor;
                        }
                    }
                }
                accumulate(grads, *x, Tensor::new(sx, gx)?);
            }
            Op::Exp(x) => {
                let y = values.tensors[idx].data();
                let gx = gd.iter().zip(y).map(|(g, y)| g * y).collect();
                accumulate(grads, *x, Tensor::new(out_shape, gx)?);
            }
            Op::Log(x) => {
                let xv = val(*x).data();
                let gx = gd.iter().zip(xv).map(|(g, x)| g / x).collect();
                accumulate(grads, *x, Tensor::new(out_shape, gx)?);
            }
            Op::Relu(x) => {
                let xv = val(*x).data();
                let gx = gd
                    .iter()
                    .zip(xv)
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                accumulate(grads, *x, Tensor::new(out_shape, gx)?);
            }
            Op::L2Normalize(x) => {
                let (xv, y) = (val(*x).data(), values.tensors[idx].data());
                let d = *out_shape.last().unwrap_or(&1);
                let mut gx = vec![0.0; xv.len()];
                for r in 0..xv.len() / d {
                    let span = r * d..(r + 1) * d;
                    let norm = libm::sqrt(xv[span.clone()].iter().map(|v| v * v).sum());
                    let yg: f64 = y[span.clone()]
                        .iter()
                        .zip(&gd[span.clone()])
                        .map(|(a, b)| a * b)
                        .sum();
                    for c in span {
                        gx[c] = (gd[c] - y[c] * yg) / norm;
                    }
                }
                accumulate(grads, *x, Tensor::new(out_shape, gx)?);
            }
            Op::LayerNorm(x, eps) => {
                let xv = val(*x).data();
                let d = *out_shape.last().unwrap_or(&1);
                let mut gx = vec![0.0; xv.len()];
                for r in 0..xv.len() / d {
                    let row = &xv[r * d..(r + 1) * d];
                    let grow = &gd[r * d..(r + 1) * d];
                    let (mean, inv_std) = row_moments(row, *eps);
                    let g_mean = grow.iter().sum::<f64>() / d as f64;
                    let gx_mean = grow
                        .iter()
                        .zip(row)
                        .map(|(g, v)| g * (v - mean) * inv_std)
                        .sum::<f64>()
                        / d as f64;
                    for c in 0..d {
                        let xhat = (row[c] - mean) * inv_std;
                        gx[r * d + c] = inv_std * (grow[c] - g_mean - xhat * gx_mean);
                    }
                }
                accumulate(grads, *x, Tensor::new(out_shape, gx)?);
            }
            Op::Softmax(x) => {
                let y = values.tensors[idx].data();
                let d = *out_shape.last().unwrap_or(&1);
                let mut gx = vec![0.0; y.len()];
                for r in 0..y.len() / d {
                    let span = r * d..(r + 1) * d;
                    let gy: f64 = y[span.clone()]
                        .iter()
                        .zip(&gd[span.clone()])
                        .map(|(a, b)| a * b)
                        .sum();
                    for c in span {
                        gx[c] = y[c] * (gd[c] - gy);
                    }
                }
                accumulate(grads, *x, Tensor::new(out_shape, gx)?);
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = axis_split(out_shape, *axis);
                let mut offset = 0;
                for &x in xs {
                    let sx = self.shape(x);
                    let len = sx[*axis];
                    if needs[x.0] {
                        let mut gx = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gx.extend_from_slice(&gd[base..base + len * inner]);
                        }
                        accumulate(grads, x, Tensor::new(sx, gx)?);
                    }
                    offset += len;
                }
            }
            Op::Slice {
                x,
                axis,
                start,
                end,
            } => {
                let sx = self.shape(*x);
                let (outer, len, inner) = axis_split(sx, *axis);
                let width = (end - start) * inner;
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let dst = (o * len + start) * inner;
                    gx[dst..dst + width].copy_from_slice(&gd[o * width..(o + 1) * width]);
                }
                accumulate(grads, *x, Tensor::new(sx, gx)?);
            }
            Op::Transpose(x) => {
                let (r, c) = (out_shape[0], out_shape[1]);
                accumulate(grads, *x, Tensor::new(&[c, r], transpose(gd, r, c))?);
            }
            Op::Reshape(x) => {
                accumulate(grads, *x, Tensor::new(self.shape(*x), gd.to_vec())?);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, contribution: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, 1.0 / libm::sqrt(var + eps))
}

fn forward(idx: usize, op: &Op, shape: &[usize], vals: &[Tensor]) -> Result<Tensor> {
    let v = |id: &NodeId| &vals[id.0];
    let data = match op {
        Op::Input(_) | Op::Param(_) => unreachable!("leaves are bound by eval"),
        Op::Const(t) => return Ok(t.clone()),
        Op::MatMul(a, b) => {
            let (a, b) = (v(a), v(b));
            matmul(a.data(), b.data(), a.shape()[0], a.shape()[1], b.shape()[1])
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (a, b) = (v(a), v(b));
            let f: fn(f64, f64) -> f64 = match op {
                Op::Add(..) => |x, y| x + y,
                Op::Sub(..) => |x, y| x - y,
                _ => |x, y| x * y,
            };
            if a.shape() == b.shape() {
                a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
            } else {
                let mut out = vec![0.0; shape.iter().product()];
                let sa = broadcast_strides(a.shape(), shape);
                let sb = broadcast_strides(b.shape(), shape);
                for_each_broadcast(shape, &sa, &sb, |o, ai, bi| {
                    out[o] = f(a.data()[ai], b.data()[bi]);
                });
                out
            }
        }
        Op::Scale(x, s) => v(x).data().iter().map(|x| x * s).collect(),
        Op::Sum(x, axis) | Op::Mean(x, axis) => {
            let x = v(x);
            let (outer, len, inner) = axis_split(x.shape(), *axis);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for j in 0..len {
                    let src = &x.data()[(o * len + j) * inner..(o * len + j + 1) * inner];
                    for (acc, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *acc += s;
                    }
                }
            }
            if matches!(op, Op::Mean(..)) {
                let inv = 1.0 / len as f64;
                out.iter_mut().for_each(|o| *o *= inv);
            }
            out
        }
        Op::Exp(x) => v(x).data().iter().map(|&x| libm::exp(x)).collect(),
        Op::Log(x) => v(x).data().iter().map(|&x| libm::log(x)).collect(),
        Op::Relu(x) => v(x).data().iter().map(|&x| x.max(0.0)).collect(),
        Op::L2Normalize(x) => {
            let x = v(x).data();
            let d = *shape.last().unwrap_or(&1);
            let mut out = vec![0.0; x.len()];
            for r in 0..x.len() / d {
                let row = &x[r * d..(r + 1) * d];
                let norm = libm::sqrt(row.iter().map(|v| v * v).sum());
                if norm == 0.0 {
                    return Err(Error::ZeroNorm { node: idx });
                }
                for (o, &val) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                    *o = val / norm;
                }
            }
            out
        }
        Op::LayerNorm(x, eps) => {
            let x = v(x).data();
            let d = *shape.last().unwrap_or(&1);
            let mut out = vec![0.0; x.len()];
            for r in 0..x.len() / d {
                let row = &x[r * d..(r + 1) * d];
                let (mean, inv_std) = row_moments(row, *eps);
                for (o, &val) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                    *o = (val - mean) * inv_std;
                }
            }
            out
        }
        Op::Softmax(x) => {
            let x = v(x).data();
            let d = *shape.last().unwrap_or(&1);
            let mut out = vec![0.0; x.len()];
            for r in 0..x.len() / d {
                let row = &x[r * d..(r + 1) * d];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let dst = &mut out[r * d..(r + 1) * d];
                let mut total = 0.0;
                for (o, &val) in dst.iter_mut().zip(row) {
                    *o = libm::exp(val - max);
                    total += *o;
                }
                dst.iter_mut().for_each(|o| *o /= total);
            }
            out
        }
        Op::Concat(xs, axis) => {
            let (outer, _, inner) = axis_split(shape, *axis);
            let mut out = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for x in xs {
                    let x = v(x);
                    let chunk = x.shape()[*axis] * inner;
                    out.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            out
        }
        Op::Slice {
            x,
            axis,
            start,
            end,
        } => {
            let x = v(x);
            let (outer, len, inner) = axis_split(x.shape(), *axis);
            let mut out = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                let base = (o * len + start) * inner;
                out.extend_from_slice(&x.data()[base..base + (end - start) * inner]);
            }
            out
        }
        Op::Transpose(x) => {
            let x = v(x);
            transpose(x.data(), x.shape()[0], x.shape()[1])
        }
        Op::Reshape(x) => v(x).data().to_vec(),
    };
    Tensor::new(shape, data)
}
