//! Recorded-forward reverse-mode differentiation.
//!
//! A [`TapeBuilder`] evaluates primitives eagerly while recording every
//! operation. [`TapeBuilder::finish`] freezes the record into an immutable
//! [`Tape`] that can be replayed bit-for-bit or walked in reverse to produce
//! exact gradients for every parameter node.
//!
//! The primitive set is sized for a small transformer encoder: matmul,
//! elementwise arithmetic, broadcast bias add, tanh/GELU/ReLU, softmax and
//! log-softmax over the last axis, layer normalization (a single primitive
//! with a hand-derived gradient), reductions, reshape/slice/concat, and row
//! gather/pick for embeddings and pooling.

use crate::tensor::{TensorMap, TensorValue};
use indexmap::IndexMap;
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value at node {node}")]
    NonFinite { op: &'static str, node: NodeId },
    #[error("node {0} does not exist on this tape")]
    UnknownNode(NodeId),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("backward seed shape {seed:?} does not match root shape {root:?}")]
    SeedShape { seed: Vec<usize>, root: Vec<usize> },
    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
}

/// One recorded primitive. Leaf kinds carry no inputs.
#[derive(Debug, Clone)]
enum Prim {
    Input(String),
    Param(String),
    Const,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale(f64),
    /// `[rows, n] + [n]`, the vector broadcast over rows.
    AddRow,
    Tanh,
    Gelu,
    Relu,
    Softmax,
    LogSoftmax,
    /// inputs: x, gamma, beta; normalizes over the last axis.
    LayerNorm { eps: f64 },
    Mean,
    Sum,
    SumSq,
    Reshape(Vec<usize>),
    SliceCols { start: usize, end: usize },
    ConcatCols,
    GatherRows(Vec<usize>),
    /// out[r] = x[r, indices[r]]
    PickPerRow(Vec<usize>),
}

impl Prim {
    fn name(&self) -> &'static str {
        match self {
            Prim::Input(_) => "input",
            Prim::Param(_) => "param",
            Prim::Const => "const",
            Prim::MatMul => "matmul",
            Prim::Transpose => "transpose",
            Prim::Add => "add",
            Prim::Sub => "sub",
            Prim::Mul => "mul",
            Prim::Scale(_) => "scale",
            Prim::AddRow => "add_row",
            Prim::Tanh => "tanh",
            Prim::Gelu => "gelu",
            Prim::Relu => "relu",
            Prim::Softmax => "softmax",
            Prim::LogSoftmax => "log_softmax",
            Prim::LayerNorm { .. } => "layer_norm",
            Prim::Mean => "mean",
            Prim::Sum => "sum",
            Prim::SumSq => "sum_sq",
            Prim::Reshape(_) => "reshape",
            Prim::SliceCols { .. } => "slice_cols",
            Prim::ConcatCols => "concat_cols",
            Prim::GatherRows(_) => "gather_rows",
            Prim::PickPerRow(_) => "pick_per_row",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    prim: Prim,
    inputs: Vec<NodeId>,
}

/// Builds a computation eagerly: every method validates shapes, computes the
/// output immediately, checks it for non-finite values, and records the node.
pub struct TapeBuilder {
    nodes: Vec<Node>,
    values: Vec<TensorValue>,
    params: Vec<NodeId>,
    param_names: IndexMap<String, NodeId>,
}

impl Default for TapeBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl TapeBuilder {
    pub fn new() -> Self {
        TapeBuilder {
            nodes: Vec::new(),
            values: Vec::new(),
            params: Vec::new(),
            param_names: IndexMap::new(),
        }
    }

    fn push(&mut self, prim: Prim, inputs: Vec<NodeId>, value: TensorValue) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { prim, inputs });
        self.values.push(value);
        id
    }

    fn push_checked(
        &mut self,
        prim: Prim,
        inputs: Vec<NodeId>,
        value: TensorValue,
    ) -> Result<NodeId, TapeError> {
        let op = prim.name();
        let id = self.push(prim, inputs, value);
        if !self.values[id].is_finite() {
            return Err(TapeError::NonFinite { op, node: id });
        }
        Ok(id)
    }

    pub fn value(&self, id: NodeId) -> &TensorValue {
        &self.values[id]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    // ── Leaves ───────────────────────────────────────────────────────

    /// Non-parameter leaf; receives no gradient entry.
    pub fn input(&mut self, name: &str, value: TensorValue) -> NodeId {
        self.push(Prim::Input(name.to_string()), Vec::new(), value)
    }

    /// Gradient-carrying leaf. Names must be unique per tape.
    pub fn param(&mut self, name: &str, value: TensorValue) -> Result<NodeId, TapeError> {
        if self.param_names.contains_key(name) {
            return Err(TapeError::DuplicateParam(name.to_string()));
        }
        let id = self.push(Prim::Param(name.to_string()), Vec::new(), value);
        self.params.push(id);
        self.param_names.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn constant(&mut self, value: TensorValue) -> NodeId {
        self.push(Prim::Const, Vec::new(), value)
    }

    // ── Primitives ───────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.values[a].shape(), self.values[b].shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                detail: format!("{sa:?} x {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.values[a].data(), self.values[b].data(), m, k, n);
        let value = TensorValue::new(vec![m, n], out).expect("matmul output shape");
        self.push_checked(Prim::MatMul, vec![a, b], value)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId, TapeError> {
        self.check(x)?;
        let s = self.values[x].shape();
        if s.len() != 2 {
            return Err(TapeError::ShapeMismatch {
                op: "transpose",
                detail: format!("expected rank 2, got {s:?}"),
            });
        }
        let (r, c) = (s[0], s[1]);
        let out = kernels::transpose(self.values[x].data(), r, c);
        let value = TensorValue::new(vec![c, r], out).expect("transpose output shape");
        self.push_checked(Prim::Transpose, vec![x], value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.binary_same_shape(a, b, Prim::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.binary_same_shape(a, b, Prim::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.binary_same_shape(a, b, Prim::Mul)
    }

    fn binary_same_shape(
        &mut self,
        a: NodeId,
        b: NodeId,
        prim: Prim,
    ) -> Result<NodeId, TapeError> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (&self.values[a], &self.values[b]);
        if va.shape() != vb.shape() {
            return Err(TapeError::ShapeMismatch {
                op: prim.name(),
                detail: format!("{:?} vs {:?}", va.shape(), vb.shape()),
            });
        }
        let value = match prim {
            Prim::Add => va.add(vb),
            Prim::Sub => va.sub(vb),
            Prim::Mul => {
                let data = va
                    .data()
                    .iter()
                    .zip(vb.data().iter())
                    .map(|(x, y)| x * y)
                    .collect();
                TensorValue::new(va.shape().to_vec(), data).expect("mul output shape")
            }
            _ => unreachable!(),
        };
        self.push_checked(prim, vec![a, b], value)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId, TapeError> {
        self.check(x)?;
        let value = self.values[x].scale(factor);
        self.push_checked(Prim::Scale(factor), vec![x], value)
    }

    /// Broadcast add of a vector over the rows of `x` (last-axis bias).
    pub fn add_row(&mut self, x: NodeId, v: NodeId) -> Result<NodeId, TapeError> {
        self.check(x)?;
        self.check(v)?;
        let (vx, vv) = (&self.values[x], &self.values[v]);
        if vv.rank() != 1 || vx.last_dim() != vv.numel() {
            return Err(TapeError::ShapeMismatch {
                op: "add_row",
                detail: format!("{:?} + {:?}", vx.shape(), vv.shape()),
            });
        }
        let n = vv.numel();
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(vv.data()) {
                *o += b;
            }
        }
        let value = TensorValue::new(vx.shape().to_vec(), data).expect("add_row output shape");
        self.push_checked(Prim::AddRow, vec![x, v], value)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, TapeError> {
        self.check(x)?;
        let value = self.map_unary(x, f64::tanh);
        self.push_checked(Prim::Tanh, vec![x], value)
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId, TapeError> {
        self.check(x)?;
        let value = self.map_unary(x, kernels::gelu);
        self.push_checked(Prim::Gelu, vec![x], value)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, TapeError> {
        self.check(x)?;
        let value = self.map_unary(x, |v| v.max(0.0));
        self.push_checked(Prim::Relu, vec![x], value)
    }

    fn map_unary(&self, x: NodeId, f: impl Fn(f64) -> f64) -> TensorValue {
        let v = &self.values[x];
        TensorValue::new(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect())
            .expect("unary output shape")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, TapeError> {
        self.check(x)?;
        let v = &self.values[x];
        let n = v.last_dim();
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(n) {
            kernels::softmax_row(row);
        }
        let value = TensorValue::new(v.shape().to_vec(), data).expect("softmax output shape");
        self.push_checked(Prim::Softmax, vec![x], value)
    }

    /// Log-softmax over the last axis (numerically stable).
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId, TapeError> {
        self.check(x)?;
        let v = &self.values[x];
        let n = v.last_dim();
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(n) {
            kernels::log_softmax_row(row);
        }
        let value = TensorValue::new(v.shape().to_vec(), data).expect("log_softmax output shape");
        self.push_checked(Prim::LogSoftmax, vec![x], value)
    }

    /// Layer normalization over the last axis with per-feature gain and bias.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId, TapeError> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let (vx, vg, vb) = (&self.values[x], &self.values[gamma], &self.values[beta]);
        let n = vx.last_dim();
        if vg.rank() != 1 || vb.rank() != 1 || vg.numel() != n || vb.numel() != n {
            return Err(TapeError::ShapeMismatch {
                op: "layer_norm",
                detail: format!(
                    "x {:?} with gamma {:?}, beta {:?}",
                    vx.shape(),
                    vg.shape(),
                    vb.shape()
                ),
            });
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            kernels::layer_norm_row(row, vg.data(), vb.data(), eps);
        }
        let value = TensorValue::new(vx.shape().to_vec(), data).expect("layer_norm output shape");
        self.push_checked(Prim::LayerNorm { eps }, vec![x, gamma, beta], value)
    }

    /// Mean of all elements, producing a scalar.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, TapeError> {
        self.check(x)?;
        let v = &self.values[x];
        let value = TensorValue::scalar(v.data().iter().sum::<f64>() / v.numel() as f64);
        self.push_checked(Prim::Mean, vec![x], value)
    }

    /// Sum of all elements, producing a scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, TapeError> {
        self.check(x)?;
        let value = TensorValue::scalar(self.values[x].data().iter().sum());
        self.push_checked(Prim::Sum, vec![x], value)
    }

    /// Sum of squared elements, producing a scalar.
    pub fn sum_sq(&mut self, x: NodeId) -> Result<NodeId, TapeError> {
        self.check(x)?;
        let value = TensorValue::scalar(self.values[x].sum_sq());
        self.push_checked(Prim::SumSq, vec![x], value)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId, TapeError> {
        self.check(x)?;
        let v = &self.values[x];
        let expected: usize = shape.iter().product();
        if expected != v.numel() {
            return Err(TapeError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", v.shape()),
            });
        }
        let value =
            TensorValue::new(shape.clone(), v.data().to_vec()).expect("reshape output shape");
        self.push_checked(Prim::Reshape(shape), vec![x], value)
    }

    /// Columns `[start, end)` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId, TapeError> {
        self.check(x)?;
        let v = &self.values[x];
        let s = v.shape();
        if s.len() != 2 || start >= end || end > s[1] {
            return Err(TapeError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("cols {start}..{end} of {s:?}"),
            });
        }
        let (rows, cols, w) = (s[0], s[1], end - start);
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&v.data()[r * cols + start..r * cols + end]);
        }
        let value = TensorValue::new(vec![rows, w], data).expect("slice_cols output shape");
        self.push_checked(Prim::SliceCols { start, end }, vec![x], value)
    }

    /// Concatenate rank-2 tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TapeError> {
        if parts.is_empty() {
            return Err(TapeError::InvalidArgument {
                op: "concat_cols",
                detail: "no inputs".to_string(),
            });
        }
        for &p in parts {
            self.check(p)?;
        }
        let rows = self.values[parts[0]].shape().first().copied().unwrap_or(0);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.values[p].shape();
            if s.len() != 2 || s[0] != rows {
                return Err(TapeError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("part shape {s:?}, expected {rows} rows"),
                });
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.values[p].data()[r * w..(r + 1) * w]);
            }
        }
        let value = TensorValue::new(vec![rows, total], data).expect("concat_cols output shape");
        self.push_checked(Prim::ConcatCols, parts.to_vec(), value)
    }

    /// Gather rows of a rank-2 tensor by index (embedding lookup, pooling).
    pub fn gather_rows(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId, TapeError> {
        self.check(x)?;
        let v = &self.values[x];
        let s = v.shape();
        if s.len() != 2 {
            return Err(TapeError::ShapeMismatch {
                op: "gather_rows",
                detail: format!("expected rank 2, got {s:?}"),
            });
        }
        if indices.is_empty() {
            return Err(TapeError::InvalidArgument {
                op: "gather_rows",
                detail: "no indices".to_string(),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TapeError::InvalidArgument {
                op: "gather_rows",
                detail: format!("row index {bad} out of range 0..{rows}"),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(&v.data()[i * cols..(i + 1) * cols]);
        }
        let value =
            TensorValue::new(vec![indices.len(), cols], data).expect("gather_rows output shape");
        self.push_checked(Prim::GatherRows(indices.to_vec()), vec![x], value)
    }

    /// Pick one element per row: `out[r] = x[r, indices[r]]`.
    pub fn pick_per_row(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId, TapeError> {
        self.check(x)?;
        let v = &self.values[x];
        let s = v.shape();
        if s.len() != 2 || indices.len() != s[0] {
            return Err(TapeError::ShapeMismatch {
                op: "pick_per_row",
                detail: format!("{} indices for shape {s:?}", indices.len()),
            });
        }
        let cols = s[1];
        if let Some(&bad) = indices.iter().find(|&&i| i >= cols) {
            return Err(TapeError::InvalidArgument {
                op: "pick_per_row",
                detail: format!("column index {bad} out of range 0..{cols}"),
            });
        }
        let data = indices
            .iter()
            .enumerate()
            .map(|(r, &c)| v.data()[r * cols + c])
            .collect();
        let value = TensorValue::new(vec![s[0]], data).expect("pick_per_row output shape");
        self.push_checked(Prim::PickPerRow(indices.to_vec()), vec![x], value)
    }

    fn check(&self, id: NodeId) -> Result<(), TapeError> {
        if id >= self.nodes.len() {
            return Err(TapeError::UnknownNode(id));
        }
        Ok(())
    }

    /// Freeze the record. `root` is the node backward passes seed from.
    pub fn finish(
        self,
        root: NodeId,
        outputs: &[(&str, NodeId)],
    ) -> Result<Tape, TapeError> {
        if root >= self.nodes.len() {
            return Err(TapeError::UnknownNode(root));
        }
        for &(_, id) in outputs {
            if id >= self.nodes.len() {
                return Err(TapeError::UnknownNode(id));
            }
        }
        Ok(Tape {
            nodes: self.nodes,
            values: self.values,
            params: self.params,
            param_names: self.param_names,
            root,
            outputs: outputs
                .iter()
                .map(|(n, id)| (n.to_string(), *id))
                .collect(),
        })
    }
}

/// Frozen computation record: topologically ordered nodes plus every
/// intermediate value. Immutable; safe to share across threads.
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<TensorValue>,
    params: Vec<NodeId>,
    param_names: IndexMap<String, NodeId>,
    root: NodeId,
    outputs: Vec<(String, NodeId)>,
}

impl Tape {
    pub fn value(&self, id: NodeId) -> &TensorValue {
        &self.values[id]
    }

    pub fn root_value(&self) -> &TensorValue {
        &self.values[self.root]
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn output(&self, name: &str) -> Option<&TensorValue> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| &self.values[*id])
    }

    pub fn outputs(&self) -> impl Iterator<Item = (&str, &TensorValue)> {
        self.outputs
            .iter()
            .map(|(n, id)| (n.as_str(), &self.values[*id]))
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.param_names.keys().map(|s| s.as_str())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Reverse-mode gradients of `seed · root` with respect to every
    /// parameter node, keyed by parameter name.
    pub fn backward(&self, seed: &TensorValue) -> Result<TensorMap, TapeError> {
        let root_shape = self.values[self.root].shape();
        if seed.shape() != root_shape {
            return Err(TapeError::SeedShape {
                seed: seed.shape().to_vec(),
                root: root_shape.to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[self.root] = Some(seed.data().to_vec());

        for id in (0..self.nodes.len()).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            self.backward_node(id, &gout, &mut grads);
            // Params keep their accumulators; interior grads are dropped as
            // soon as they have been propagated.
            if matches!(self.nodes[id].prim, Prim::Param(_)) {
                grads[id] = Some(gout);
            }
        }

        let mut out = TensorMap::new();
        for (name, &id) in &self.param_names {
            let shape = self.values[id].shape().to_vec();
            let data = grads[id]
                .take()
                .unwrap_or_else(|| vec![0.0; self.values[id].numel()]);
            out.insert(
                name.clone(),
                TensorValue::new(shape, data).expect("gradient shape"),
            );
        }
        Ok(out)
    }

    /// Backward with a seed of ones; the usual entry point for a scalar loss.
    pub fn backward_scalar(&self) -> Result<TensorMap, TapeError> {
        let seed = TensorValue::filled(self.values[self.root].shape().to_vec(), 1.0);
        self.backward(&seed)
    }

    fn backward_node(&self, id: NodeId, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let acc = |grads: &mut [Option<Vec<f64>>], target: NodeId, contrib: Vec<f64>| {
            match &mut grads[target] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contrib) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.prim {
            Prim::Input(_) | Prim::Param(_) | Prim::Const => {}
            Prim::MatMul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let sa = self.values[a].shape();
                let sb = self.values[b].shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                // dA = dOut · Bᵀ, dB = Aᵀ · dOut
                let bt = kernels::transpose(self.values[b].data(), k, n);
                let da = kernels::matmul(gout, &bt, m, n, k);
                let at = kernels::transpose(self.values[a].data(), m, k);
                let db = kernels::matmul(&at, gout, k, m, n);
                acc(grads, a, da);
                acc(grads, b, db);
            }
            Prim::Transpose => {
                let x = node.inputs[0];
                let s = self.values[x].shape();
                acc(grads, x, kernels::transpose(gout, s[1], s[0]));
            }
            Prim::Add => {
                acc(grads, node.inputs[0], gout.to_vec());
                acc(grads, node.inputs[1], gout.to_vec());
            }
            Prim::Sub => {
                acc(grads, node.inputs[0], gout.to_vec());
                acc(grads, node.inputs[1], gout.iter().map(|g| -g).collect());
            }
            Prim::Mul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let da = gout
                    .iter()
                    .zip(self.values[b].data())
                    .map(|(g, y)| g * y)
                    .collect();
                let db = gout
                    .iter()
                    .zip(self.values[a].data())
                    .map(|(g, x)| g * x)
                    .collect();
                acc(grads, a, da);
                acc(grads, b, db);
            }
            Prim::Scale(c) => {
                acc(grads, node.inputs[0], gout.iter().map(|g| g * c).collect());
            }
            Prim::AddRow => {
                let (x, v) = (node.inputs[0], node.inputs[1]);
                let n = self.values[v].numel();
                acc(grads, x, gout.to_vec());
                let mut dv = vec![0.0; n];
                for row in gout.chunks(n) {
                    for (d, g) in dv.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                acc(grads, v, dv);
            }
            Prim::Tanh => {
                let y = self.values[id].data();
                let dx = gout.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect();
                acc(grads, node.inputs[0], dx);
            }
            Prim::Gelu => {
                let x = self.values[node.inputs[0]].data();
                let dx = gout
                    .iter()
                    .zip(x)
                    .map(|(g, &v)| g * kernels::gelu_grad(v))
                    .collect();
                acc(grads, node.inputs[0], dx);
            }
            Prim::Relu => {
                let x = self.values[node.inputs[0]].data();
                let dx = gout
                    .iter()
                    .zip(x)
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                acc(grads, node.inputs[0], dx);
            }
            Prim::Softmax => {
                let y = self.values[id].data();
                let n = self.values[id].last_dim();
                let mut dx = vec![0.0; y.len()];
                for ((drow, yrow), grow) in dx.chunks_mut(n).zip(y.chunks(n)).zip(gout.chunks(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, s)| g * s).sum();
                    for ((d, &s), &g) in drow.iter_mut().zip(yrow).zip(grow) {
                        *d = s * (g - dot);
                    }
                }
                acc(grads, node.inputs[0], dx);
            }
            Prim::LogSoftmax => {
                let y = self.values[id].data();
                let n = self.values[id].last_dim();
                let mut dx = vec![0.0; y.len()];
                for ((drow, yrow), grow) in dx.chunks_mut(n).zip(y.chunks(n)).zip(gout.chunks(n)) {
                    let gsum: f64 = grow.iter().sum();
                    for ((d, &ly), &g) in drow.iter_mut().zip(yrow).zip(grow) {
                        *d = g - ly.exp() * gsum;
                    }
                }
                acc(grads, node.inputs[0], dx);
            }
            Prim::LayerNorm { eps } => {
                let (x, gamma, _beta) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let xv = self.values[x].data();
                let gv = self.values[gamma].data();
                let n = self.values[x].last_dim();
                let mut dx = vec![0.0; xv.len()];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for ((xrow, grow), drow) in
                    xv.chunks(n).zip(gout.chunks(n)).zip(dx.chunks_mut(n))
                {
                    kernels::layer_norm_backward_row(
                        xrow, gv, grow, *eps, drow, &mut dgamma, &mut dbeta,
                    );
                }
                acc(grads, x, dx);
                acc(grads, gamma, dgamma);
                acc(grads, node.inputs[2], dbeta);
            }
            Prim::Mean => {
                let x = node.inputs[0];
                let n = self.values[x].numel();
                let g = gout[0] / n as f64;
                acc(grads, x, vec![g; n]);
            }
            Prim::Sum => {
                let x = node.inputs[0];
                acc(grads, x, vec![gout[0]; self.values[x].numel()]);
            }
            Prim::SumSq => {
                let x = node.inputs[0];
                let g = gout[0];
                let dx = self.values[x].data().iter().map(|v| 2.0 * v * g).collect();
                acc(grads, x, dx);
            }
            Prim::Reshape(_) => {
                acc(grads, node.inputs[0], gout.to_vec());
            }
            Prim::SliceCols { start, end } => {
                let x = node.inputs[0];
                let s = self.values[x].shape();
                let (rows, cols, w) = (s[0], s[1], end - start);
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    dx[r * cols + start..r * cols + end]
                        .copy_from_slice(&gout[r * w..(r + 1) * w]);
                }
                acc(grads, x, dx);
            }
            Prim::ConcatCols => {
                let rows = self.values[id].shape()[0];
                let total = self.values[id].shape()[1];
                let mut offset = 0;
                for &p in &node.inputs {
                    let w = self.values[p].shape()[1];
                    let mut dp = vec![0.0; rows * w];
                    for r in 0..rows {
                        dp[r * w..(r + 1) * w]
                            .copy_from_slice(&gout[r * total + offset..r * total + offset + w]);
                    }
                    acc(grads, p, dp);
                    offset += w;
                }
            }
            Prim::GatherRows(indices) => {
                let x = node.inputs[0];
                let s = self.values[x].shape();
                let cols = s[1];
                let mut dx = vec![0.0; s[0] * cols];
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..cols {
                        dx[i * cols + c] += gout[r * cols + c];
                    }
                }
                acc(grads, x, dx);
            }
            Prim::PickPerRow(indices) => {
                let x = node.inputs[0];
                let s = self.values[x].shape();
                let cols = s[1];
                let mut dx = vec![0.0; s[0] * cols];
                for (r, &c) in indices.iter().enumerate() {
                    dx[r * cols + c] += gout[r];
                }
                acc(grads, x, dx);
            }
        }
    }

    /// Re-execute the recorded primitives from the leaf values. Returns the
    /// recomputed root value; used to verify bit-for-bit replayability.
    pub fn replay_root(&self) -> Result<TensorValue, TapeError> {
        let mut values: Vec<TensorValue> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let value = match &node.prim {
                Prim::Input(_) | Prim::Param(_) | Prim::Const => self.values[id].clone(),
                _ => self.recompute(node, &values)?,
            };
            values.push(value);
        }
        Ok(values[self.root].clone())
    }

    fn recompute(&self, node: &Node, values: &[TensorValue]) -> Result<TensorValue, TapeError> {
        let input = |i: usize| &values[node.inputs[i]];
        let out = match &node.prim {
            Prim::Input(_) | Prim::Param(_) | Prim::Const => unreachable!(),
            Prim::MatMul => {
                let (a, b) = (input(0), input(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                TensorValue::new(vec![m, n], kernels::matmul(a.data(), b.data(), m, k, n))
            }
            Prim::Transpose => {
                let a = input(0);
                let (r, c) = (a.shape()[0], a.shape()[1]);
                TensorValue::new(vec![c, r], kernels::transpose(a.data(), r, c))
            }
            Prim::Add => Ok(input(0).add(input(1))),
            Prim::Sub => Ok(input(0).sub(input(1))),
            Prim::Mul => {
                let data = input(0)
                    .data()
                    .iter()
                    .zip(input(1).data())
                    .map(|(x, y)| x * y)
                    .collect();
                TensorValue::new(input(0).shape().to_vec(), data)
            }
            Prim::Scale(c) => Ok(input(0).scale(*c)),
            Prim::AddRow => {
                let (x, v) = (input(0), input(1));
                let n = v.numel();
                let mut data = x.data().to_vec();
                for row in data.chunks_mut(n) {
                    for (o, b) in row.iter_mut().zip(v.data()) {
                        *o += b;
                    }
                }
                TensorValue::new(x.shape().to_vec(), data)
            }
            Prim::Tanh => Ok(unary_of(input(0), f64::tanh)),
            Prim::Gelu => Ok(unary_of(input(0), kernels::gelu)),
            Prim::Relu => Ok(unary_of(input(0), |v| v.max(0.0))),
            Prim::Softmax => {
                let x = input(0);
                let n = x.last_dim();
                let mut data = x.data().to_vec();
                for row in data.chunks_mut(n) {
                    kernels::softmax_row(row);
                }
                TensorValue::new(x.shape().to_vec(), data)
            }
            Prim::LogSoftmax => {
                let x = input(0);
                let n = x.last_dim();
                let mut data = x.data().to_vec();
                for row in data.chunks_mut(n) {
                    kernels::log_softmax_row(row);
                }
                TensorValue::new(x.shape().to_vec(), data)
            }
            Prim::LayerNorm { eps } => {
                let (x, g, b) = (input(0), input(1), input(2));
                let n = x.last_dim();
                let mut data = x.data().to_vec();
                for row in data.chunks_mut(n) {
                    kernels::layer_norm_row(row, g.data(), b.data(), *eps);
                }
                TensorValue::new(x.shape().to_vec(), data)
            }
            Prim::Mean => Ok(TensorValue::scalar(
                input(0).data().iter().sum::<f64>() / input(0).numel() as f64,
            )),
            Prim::Sum => Ok(TensorValue::scalar(input(0).data().iter().sum())),
            Prim::SumSq => Ok(TensorValue::scalar(input(0).sum_sq())),
            Prim::Reshape(shape) => {
                TensorValue::new(shape.clone(), input(0).data().to_vec())
            }
            Prim::SliceCols { start, end } => {
                let x = input(0);
                let (rows, cols, w) = (x.shape()[0], x.shape()[1], end - start);
                let mut data = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    data.extend_from_slice(&x.data()[r * cols + start..r * cols + end]);
                }
                TensorValue::new(vec![rows, w], data)
            }
            Prim::ConcatCols => {
                let rows = input(0).shape()[0];
                let widths: Vec<usize> =
                    node.inputs.iter().map(|&p| values[p].shape()[1]).collect();
                let total: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for (&p, &w) in node.inputs.iter().zip(&widths) {
                        data.extend_from_slice(&values[p].data()[r * w..(r + 1) * w]);
                    }
                }
                TensorValue::new(vec![rows, total], data)
            }
            Prim::GatherRows(indices) => {
                let x = input(0);
                let cols = x.shape()[1];
                let mut data = Vec::with_capacity(indices.len() * cols);
                for &i in indices {
                    data.extend_from_slice(&x.data()[i * cols..(i + 1) * cols]);
                }
                TensorValue::new(vec![indices.len(), cols], data)
            }
            Prim::PickPerRow(indices) => {
                let x = input(0);
                let cols = x.shape()[1];
                let data = indices
                    .iter()
                    .enumerate()
                    .map(|(r, &c)| x.data()[r * cols + c])
                    .collect();
                TensorValue::new(vec![indices.len()], data)
            }
        };
        out.map_err(|_| TapeError::ShapeMismatch {
            op: node.prim.name(),
            detail: "replay shape disagreement".to_string(),
        })
    }
}

/// Named outputs of an [`evaluate`] description.
pub struct TapeSpec {
    /// Node backward passes will seed from.
    pub root: NodeId,
    pub outputs: Vec<(String, NodeId)>,
}

/// Evaluate a computation description on named inputs, returning the named
/// output values together with the frozen tape.
pub fn evaluate<F>(inputs: &TensorMap, build: F) -> Result<(TensorMap, Tape), TapeError>
where
    F: FnOnce(&mut TapeBuilder, &IndexMap<String, NodeId>) -> Result<TapeSpec, TapeError>,
{
    let mut tb = TapeBuilder::new();
    let mut bound = IndexMap::new();
    for (name, value) in inputs {
        bound.insert(name.clone(), tb.input(name, value.clone()));
    }
    let spec = build(&mut tb, &bound)?;
    let named: Vec<(&str, NodeId)> = spec
        .outputs
        .iter()
        .map(|(n, id)| (n.as_str(), *id))
        .collect();
    let tape = tb.finish(spec.root, &named)?;
    let mut outputs = TensorMap::new();
    for (name, id) in &spec.outputs {
        outputs.insert(name.clone(), tape.value(*id).clone());
    }
    Ok((outputs, tape))
}

fn unary_of(v: &TensorValue, f: impl Fn(f64) -> f64) -> TensorValue {
    TensorValue::new(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect())
        .expect("unary output shape")
}

/// Raw `f64` kernels shared by forward evaluation, replay, and backward.
pub(crate) mod kernels {
    const GELU_SCALE: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const GELU_CUBIC: f64 = 0.044_715;

    pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        out
    }

    pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = a[r * cols + c];
            }
        }
        out
    }

    pub fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + (GELU_SCALE * (x + GELU_CUBIC * x * x * x)).tanh())
    }

    pub fn gelu_grad(x: f64) -> f64 {
        let u = GELU_SCALE * (x + GELU_CUBIC * x * x * x);
        let t = u.tanh();
        0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_SCALE * (1.0 + 3.0 * GELU_CUBIC * x * x)
    }

    pub fn softmax_row(row: &mut [f64]) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }

    pub fn log_softmax_row(row: &mut [f64]) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v = *v - max - log_sum;
        }
    }

    pub fn layer_norm_row(row: &mut [f64], gamma: &[f64], beta: &[f64], eps: f64) {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + eps).sqrt();
        for ((v, &g), &b) in row.iter_mut().zip(gamma).zip(beta) {
            *v = (*v - mean) * inv_std * g + b;
        }
    }

    /// Gradient of `layer_norm_row` for one row. `dgamma`/`dbeta` accumulate.
    pub fn layer_norm_backward_row(
        x: &[f64],
        gamma: &[f64],
        gout: &[f64],
        eps: f64,
        dx: &mut [f64],
        dgamma: &mut [f64],
        dbeta: &mut [f64],
    ) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + eps).sqrt();

        // dy_hat = gout ⊙ gamma; dx = inv_std (dy_hat − mean(dy_hat) − x̂ mean(dy_hat ⊙ x̂))
        let mut mean_dyh = 0.0;
        let mut mean_dyh_xh = 0.0;
        for ((&xv, &g), &go) in x.iter().zip(gamma).zip(gout) {
            let xh = (xv - mean) * inv_std;
            let dyh = go * g;
            mean_dyh += dyh;
            mean_dyh_xh += dyh * xh;
        }
        mean_dyh /= n;
        mean_dyh_xh /= n;
        for (i, ((&xv, &g), &go)) in x.iter().zip(gamma).zip(gout).enumerate() {
            let xh = (xv - mean) * inv_std;
            let dyh = go * g;
            dx[i] = inv_std * (dyh - mean_dyh - xh * mean_dyh_xh);
            dgamma[i] += go * xh;
            dbeta[i] += go;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_vector() {
        let mut tb = TapeBuilder::new();
        let x = tb.input("x", TensorValue::vector(vec![1.0, 2.0, 3.0]));
        let s = tb.sum(x).unwrap();
        assert_eq!(tb.value(s).item(), 6.0);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tb = TapeBuilder::new();
        let x = tb.input("x", TensorValue::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let y = tb.softmax(x).unwrap();
        assert_eq!(tb.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn matmul_identity_returns_operand() {
        let mut tb = TapeBuilder::new();
        let a = tb.input(
            "a",
            TensorValue::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        );
        let eye = tb.constant(TensorValue::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let prod = tb.matmul(a, eye).unwrap();
        assert_eq!(tb.value(prod).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn square_gradient_is_two_x() {
        // f(x) = x² as x·x, x = 3 → df/dx = 6
        let mut tb = TapeBuilder::new();
        let x = tb.param("x", TensorValue::scalar(3.0)).unwrap();
        let y = tb.mul(x, x).unwrap();
        let tape = tb.finish(y, &[]).unwrap();
        let grads = tape.backward(&TensorValue::scalar(1.0)).unwrap();
        assert_eq!(grads["x"].item(), 6.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tb = TapeBuilder::new();
        let x = tb
            .param("x", TensorValue::vector(vec![0.3, -1.2, 4.0, 0.0]))
            .unwrap();
        let s = tb.sum(x).unwrap();
        let tape = tb.finish(s, &[]).unwrap();
        let grads = tape.backward_scalar().unwrap();
        assert_eq!(grads["x"].data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_names_offending_primitive() {
        let mut tb = TapeBuilder::new();
        let a = tb.input("a", TensorValue::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = tb.input("b", TensorValue::matrix(2, 3, vec![0.0; 6]).unwrap());
        let err = tb.matmul(a, b).unwrap_err();
        assert!(matches!(err, TapeError::ShapeMismatch { op: "matmul", .. }));
    }

    #[test]
    fn non_finite_intermediate_reports_node() {
        let mut tb = TapeBuilder::new();
        let x = tb.input("x", TensorValue::scalar(1e308));
        let doubled = tb.add(x, x); // overflows to inf
        assert!(matches!(
            doubled.unwrap_err(),
            TapeError::NonFinite { op: "add", .. }
        ));
    }

    #[test]
    fn replay_reproduces_root_bitwise() {
        let mut tb = TapeBuilder::new();
        let x = tb
            .param("x", TensorValue::vector(vec![0.17, -0.4, 2.3]))
            .unwrap();
        let w = tb.constant(TensorValue::matrix(3, 2, vec![0.2, -0.7, 1.1, 0.4, -0.9, 0.05]).unwrap());
        let xr = tb.reshape(x, vec![1, 3]).unwrap();
        let h = tb.matmul(xr, w).unwrap();
        let t = tb.tanh(h).unwrap();
        let loss = tb.sum_sq(t).unwrap();
        let tape = tb.finish(loss, &[]).unwrap();
        let replayed = tape.replay_root().unwrap();
        assert_eq!(replayed.data(), tape.root_value().data());
        assert_eq!(replayed.shape(), tape.root_value().shape());
    }

    #[test]
    fn duplicate_param_rejected() {
        let mut tb = TapeBuilder::new();
        tb.param("w", TensorValue::scalar(1.0)).unwrap();
        assert!(matches!(
            tb.param("w", TensorValue::scalar(2.0)),
            Err(TapeError::DuplicateParam(_))
        ));
    }

    #[test]
    fn evaluate_returns_named_outputs_and_tape() {
        let mut inputs = TensorMap::new();
        inputs.insert("x".to_string(), TensorValue::vector(vec![1.0, 2.0, 3.0]));
        let (outputs, tape) = evaluate(&inputs, |tb, bound| {
            let s = tb.sum(bound["x"])?;
            Ok(TapeSpec {
                root: s,
                outputs: vec![("total".to_string(), s)],
            })
        })
        .unwrap();
        assert_eq!(outputs["total"].item(), 6.0);
        assert_eq!(tape.root_value().item(), 6.0);
    }
}
