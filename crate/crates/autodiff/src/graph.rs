//! Static computation graphs with reverse-mode differentiation.
//!
//! A [`Graph`] is built once from named inputs, parameter references and
//! primitive ops, then evaluated any number of times with different input
//! bindings and parameter values. Node insertion order is a topological order;
//! [`Graph::forward`] evaluates in that order and caches every payload for
//! [`Graph::backward`].
//!
//! Broadcasting is limited to the right-hand operand of `add`, `sub`, `mul` and
//! `mask_mul`, which may be the same shape as the left operand, a `1 × cols` row
//! (broadcast over rows), or a `1 × 1` scalar.

use std::collections::{BTreeMap, HashMap};

use crate::error::{AutodiffError, Result};
use crate::params::{Gradients, ParamStore};
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Input(String),
    /// `trainable == false` reads the parameter as a constant in this graph.
    Param {
        name: String,
        trainable: bool,
    },
    Constant(Tensor),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `x ⊙ mask`; the mask is not differentiated.
    MaskMul {
        x: NodeId,
        mask: NodeId,
    },
    Transpose(NodeId),
    ConcatCols(NodeId, NodeId),
    Reshape {
        x: NodeId,
        rows: usize,
        cols: usize,
    },
    Relu(NodeId),
    LeakyRelu {
        x: NodeId,
        slope: f64,
    },
    /// `1` where `x > 0`, `slope` elsewhere. Piecewise constant, so it passes
    /// no gradient to `x`.
    SlopeMask {
        x: NodeId,
        slope: f64,
    },
    Abs(NodeId),
    /// `scale · x + shift`
    Affine {
        x: NodeId,
        scale: f64,
        shift: f64,
    },
    /// Per-row Euclidean norm, `r × c → r × 1`.
    RowL2Norm(NodeId),
    Mean(NodeId),
    Sum(NodeId),
    /// Mean over rows of `−Σ_k t_k · log softmax(logits)_k`. Targets are not
    /// differentiated.
    SoftmaxCrossEntropy {
        logits: NodeId,
        targets: NodeId,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param { .. } => "param",
            Op::Constant(_) => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MaskMul { .. } => "mask_mul",
            Op::Transpose(_) => "transpose",
            Op::ConcatCols(..) => "concat",
            Op::Reshape { .. } => "reshape",
            Op::Relu(_) => "relu",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::SlopeMask { .. } => "slope_mask",
            Op::Abs(_) => "abs",
            Op::Affine { .. } => "affine",
            Op::RowL2Norm(_) => "row_l2_norm",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }

    pub fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Param { .. } | Op::Constant(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::ConcatCols(a, b) => {
                vec![*a, *b]
            }
            Op::MaskMul { x, mask } => vec![*x, *mask],
            Op::SoftmaxCrossEntropy { logits, targets } => vec![*logits, *targets],
            Op::Transpose(x)
            | Op::Relu(x)
            | Op::Abs(x)
            | Op::RowL2Norm(x)
            | Op::Mean(x)
            | Op::Sum(x)
            | Op::Reshape { x, .. }
            | Op::LeakyRelu { x, .. }
            | Op::SlopeMask { x, .. }
            | Op::Affine { x, .. } => vec![*x],
        }
    }

    /// Parents that receive gradient.
    fn differentiable_parents(&self) -> Vec<NodeId> {
        match self {
            Op::SlopeMask { .. } => vec![],
            Op::MaskMul { x, .. } => vec![*x],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            other => other.parents(),
        }
    }
}

/// One node: its op, the cached forward payload and, after backward, its
/// gradient.
#[derive(Clone, Debug)]
pub struct Value {
    pub id: NodeId,
    pub op: Op,
    pub payload: Option<Tensor>,
    pub grad: Option<Tensor>,
    needs_grad: bool,
}

/// Input tensors for one forward pass, by name.
#[derive(Default, Debug)]
pub struct Bindings<'a> {
    map: HashMap<String, &'a Tensor>,
}

impl<'a> Bindings<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, name: impl Into<String>, value: &'a Tensor) -> &mut Self {
        self.map.insert(name.into(), value);
        self
    }

    pub fn with(mut self, name: impl Into<String>, value: &'a Tensor) -> Self {
        self.bind(name, value);
        self
    }

    fn get(&self, name: &str) -> Option<&'a Tensor> {
        self.map.get(name).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Scalar,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Value>,
    params: HashMap<(String, bool), NodeId>,
    inputs: HashMap<String, NodeId>,
    evaluated: bool,
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

    pub fn node(&self, id: NodeId) -> &Value {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[Value] {
        &self.nodes
    }

    fn push(&mut self, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        for p in op.parents() {
            assert!(p.0 < id.0, "parent {} must precede node {}", p.0, id.0);
        }
        self.nodes.push(Value {
            id,
            op,
            payload: None,
            grad: None,
            needs_grad: false,
        });
        self.evaluated = false;
        id
    }

    /// A named free input. Repeated names share one node.
    pub fn input(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.inputs.get(name) {
            return id;
        }
        let id = self.push(Op::Input(name.to_string()));
        self.inputs.insert(name.to_string(), id);
        id
    }

    /// A parameter that receives gradient (if the store marks it trainable).
    pub fn param(&mut self, name: &str) -> NodeId {
        self.param_ref(name, true)
    }

    /// A parameter read as a constant in this graph.
    pub fn frozen_param(&mut self, name: &str) -> NodeId {
        self.param_ref(name, false)
    }

    pub fn param_ref(&mut self, name: &str, trainable: bool) -> NodeId {
        let key = (name.to_string(), trainable);
        if let Some(&id) = self.params.get(&key) {
            return id;
        }
        let id = self.push(Op::Param {
            name: name.to_string(),
            trainable,
        });
        self.params.insert(key, id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn mask_mul(&mut self, x: NodeId, mask: NodeId) -> NodeId {
        self.push(Op::MaskMul { x, mask })
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Transpose(x))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::ConcatCols(a, b))
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> NodeId {
        self.push(Op::Reshape { x, rows, cols })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.push(Op::LeakyRelu { x, slope })
    }

    pub fn slope_mask(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.push(Op::SlopeMask { x, slope })
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Abs(x))
    }

    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        self.push(Op::Affine { x, scale, shift })
    }

    pub fn scale(&mut self, x: NodeId, scale: f64) -> NodeId {
        self.affine(x, scale, 0.0)
    }

    pub fn row_l2_norm(&mut self, x: NodeId) -> NodeId {
        self.push(Op::RowL2Norm(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean(x))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: NodeId) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy { logits, targets })
    }

    /// Cached payload of `id` from the last forward pass.
    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.nodes
            .get(id.0)
            .ok_or(AutodiffError::UnknownNode(id.0))?
            .payload
            .as_ref()
            .ok_or(AutodiffError::BackwardBeforeForward)
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        Ok(self.value(id)?.item())
    }

    /// Drop every cached payload and gradient.
    pub fn reset(&mut self) {
        for n in &mut self.nodes {
            n.payload = None;
            n.grad = None;
            n.needs_grad = false;
        }
        self.evaluated = false;
    }

    /// Evaluate every node in insertion order.
    pub fn forward(&mut self, bindings: &Bindings<'_>, store: &ParamStore) -> Result<()> {
        let order: Vec<NodeId> = (0..self.nodes.len()).map(NodeId).collect();
        self.forward_in_order(bindings, store, &order)
    }

    /// Evaluate every node following `order`, which must be a topological
    /// permutation of all nodes.
    pub fn forward_in_order(&mut self, bindings: &Bindings<'_>, store: &ParamStore, order: &[NodeId]) -> Result<()> {
        self.reset();
        if order.len() != self.nodes.len() {
            return Err(AutodiffError::InvalidOrder(order.len()));
        }
        for &id in order {
            let node = self.nodes.get(id.0).ok_or(AutodiffError::UnknownNode(id.0))?;
            if node.payload.is_some() {
                return Err(AutodiffError::InvalidOrder(id.0));
            }
            for p in node.op.parents() {
                if self.nodes[p.0].payload.is_none() {
                    return Err(AutodiffError::InvalidOrder(id.0));
                }
            }
            let (payload, needs_grad) = self.eval_node(id, bindings, store)?;
            let node = &mut self.nodes[id.0];
            node.payload = Some(payload);
            node.needs_grad = needs_grad;
        }
        self.evaluated = true;
        Ok(())
    }

    fn payload(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0].payload.as_ref().expect("parents evaluated first")
    }

    fn dims(&self, id: NodeId, node: usize, op: &'static str) -> Result<(usize, usize)> {
        let t = self.payload(id);
        t.dims2().ok_or_else(|| AutodiffError::ShapeMismatch {
            node,
            op,
            expected: "rank ≤ 2 operand".into(),
            actual: vec![t.shape().to_vec()],
        })
    }

    fn mismatch(&self, node: usize, op: &'static str, expected: &str, operands: &[NodeId]) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            node,
            op,
            expected: expected.to_string(),
            actual: operands.iter().map(|p| self.payload(*p).shape().to_vec()).collect(),
        }
    }

    fn broadcast_kind(&self, node: usize, op: &'static str, a: NodeId, b: NodeId) -> Result<Broadcast> {
        let (ar, ac) = self.dims(a, node, op)?;
        let (br, bc) = self.dims(b, node, op)?;
        if (ar, ac) == (br, bc) {
            Ok(Broadcast::Same)
        } else if br == 1 && bc == ac {
            Ok(Broadcast::Row)
        } else if br == 1 && bc == 1 {
            Ok(Broadcast::Scalar)
        } else {
            Err(self.mismatch(node, op, "right operand same shape, 1×cols, or 1×1", &[a, b]))
        }
    }

    fn eval_node(&self, id: NodeId, bindings: &Bindings<'_>, store: &ParamStore) -> Result<(Tensor, bool)> {
        let node = &self.nodes[id.0];
        let op_name = node.op.name();
        let i = id.0;
        let needs = |p: &NodeId| self.nodes[p.0].needs_grad;
        let needs_grad = node.op.differentiable_parents().iter().any(needs);
        let out = match &node.op {
            Op::Input(name) => {
                let t = bindings
                    .get(name)
                    .ok_or_else(|| AutodiffError::UnboundInput(name.clone()))?;
                return Ok((t.clone(), false));
            }
            Op::Param { name, trainable } => {
                let t = store.get(name)?;
                return Ok((t.clone(), *trainable && store.is_trainable(name)));
            }
            Op::Constant(t) => return Ok((t.clone(), false)),
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a, i, op_name)?;
                let (k2, n) = self.dims(*b, i, op_name)?;
                if k != k2 {
                    return Err(self.mismatch(i, op_name, "inner dimensions equal", &[*a, *b]));
                }
                let c = tensor::matmul_nn(self.payload(*a).data(), self.payload(*b).data(), m, k, n);
                Tensor::matrix(m, n, c)?
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MaskMul { x: a, mask: b } => {
                let kind = self.broadcast_kind(i, op_name, *a, *b)?;
                let f: fn(f64, f64) -> f64 = match &node.op {
                    Op::Add(..) => |x, y| x + y,
                    Op::Sub(..) => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                let (r, c) = self.dims(*a, i, op_name)?;
                let av = self.payload(*a).data();
                let bv = self.payload(*b).data();
                let mut out = Vec::with_capacity(r * c);
                match kind {
                    Broadcast::Same => out.extend(av.iter().zip(bv).map(|(&x, &y)| f(x, y))),
                    Broadcast::Row => {
                        for row in av.chunks(c.max(1)).take(r) {
                            out.extend(row.iter().zip(bv).map(|(&x, &y)| f(x, y)));
                        }
                    }
                    Broadcast::Scalar => out.extend(av.iter().map(|&x| f(x, bv[0]))),
                }
                Tensor::matrix(r, c, out)?
            }
            Op::Transpose(x) => {
                let (r, c) = self.dims(*x, i, op_name)?;
                Tensor::matrix(c, r, tensor::transpose(self.payload(*x).data(), r, c))?
            }
            Op::ConcatCols(a, b) => {
                let (ar, ac) = self.dims(*a, i, op_name)?;
                let (br, bc) = self.dims(*b, i, op_name)?;
                if ar != br {
                    return Err(self.mismatch(i, op_name, "equal row counts", &[*a, *b]));
                }
                let av = self.payload(*a).data();
                let bv = self.payload(*b).data();
                let mut out = Vec::with_capacity(ar * (ac + bc));
                for r in 0..ar {
                    out.extend_from_slice(&av[r * ac..(r + 1) * ac]);
                    out.extend_from_slice(&bv[r * bc..(r + 1) * bc]);
                }
                Tensor::matrix(ar, ac + bc, out)?
            }
            Op::Reshape { x, rows, cols } => {
                let t = self.payload(*x);
                if t.len() != rows * cols {
                    return Err(self.mismatch(i, op_name, &format!("{} elements", rows * cols), &[*x]));
                }
                t.clone().reshaped(vec![*rows, *cols])?
            }
            Op::Relu(x) => self.elementwise(i, op_name, *x, |v| if v <= 0.0 { 0.0 } else { v })?,
            Op::LeakyRelu { x, slope } => {
                let s = *slope;
                self.elementwise(i, op_name, *x, move |v| if v > 0.0 { v } else { s * v })?
            }
            Op::SlopeMask { x, slope } => {
                let s = *slope;
                self.elementwise(i, op_name, *x, move |v| if v > 0.0 { 1.0 } else { s })?
            }
            Op::Abs(x) => self.elementwise(i, op_name, *x, f64::abs)?,
            Op::Affine { x, scale, shift } => {
                let (a, b) = (*scale, *shift);
                self.elementwise(i, op_name, *x, move |v| a * v + b)?
            }
            Op::RowL2Norm(x) => {
                let (r, c) = self.dims(*x, i, op_name)?;
                let xv = self.payload(*x).data();
                let mut out = Vec::with_capacity(r);
                for row in 0..r {
                    let mut acc = 0.0;
                    for &v in &xv[row * c..(row + 1) * c] {
                        acc += v * v;
                    }
                    out.push(acc.sqrt());
                }
                Tensor::matrix(r, 1, out)?
            }
            Op::Mean(x) => {
                let t = self.payload(*x);
                if t.is_empty() {
                    return Err(self.mismatch(i, op_name, "non-empty operand", &[*x]));
                }
                Tensor::scalar(t.sum() / t.len() as f64)
            }
            Op::Sum(x) => Tensor::scalar(self.payload(*x).sum()),
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let (r, c) = self.dims(*logits, i, op_name)?;
                if self.dims(*targets, i, op_name)? != (r, c) || r == 0 {
                    return Err(self.mismatch(i, op_name, "non-empty logits and targets of equal shape", &[*logits, *targets]));
                }
                let lv = self.payload(*logits).data();
                let tv = self.payload(*targets).data();
                let mut total = 0.0;
                for row in 0..r {
                    let l = &lv[row * c..(row + 1) * c];
                    let t = &tv[row * c..(row + 1) * c];
                    let lse = log_sum_exp(l);
                    let mut acc = 0.0;
                    for (&lk, &tk) in l.iter().zip(t) {
                        acc += tk * (lse - lk);
                    }
                    total += acc;
                }
                Tensor::scalar(total / r as f64)
            }
        };
        Ok((out, needs_grad))
    }

    fn elementwise(&self, node: usize, op: &'static str, x: NodeId, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let (r, c) = self.dims(x, node, op)?;
        let t = self.payload(x);
        Tensor::matrix(r, c, t.data().iter().map(|&v| f(v)).collect())
    }

    /// Gradients of the scalar `root` with respect to every trainable
    /// parameter referenced by the graph. Parameters the root does not depend
    /// on get zero gradients.
    pub fn backward(&mut self, root: NodeId) -> Result<Gradients> {
        if !self.evaluated {
            return Err(AutodiffError::BackwardBeforeForward);
        }
        let root_shape = self.value(root)?.shape().to_vec();
        if root_shape.iter().product::<usize>() != 1 {
            return Err(AutodiffError::NonScalarRoot {
                node: root.0,
                shape: root_shape,
            });
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(Tensor::filled(&root_shape, 1.0));
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let contributions = self.vjp(NodeId(i), &g);
            for (parent, contribution) in contributions {
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
            self.nodes[i].grad = Some(g);
        }

        let mut out = BTreeMap::new();
        for n in &self.nodes {
            if let Op::Param { name, trainable: true } = &n.op {
                if !n.needs_grad {
                    continue;
                }
                let shape = n.payload.as_ref().expect("evaluated").shape();
                let g = match &n.grad {
                    Some(g) => g.clone().reshaped(shape.to_vec())?,
                    None => Tensor::zeros(shape),
                };
                out.insert(name.clone(), g);
            }
        }
        Ok(out)
    }

    /// Vector-Jacobian products of node `id` for upstream gradient `g`.
    fn vjp(&self, id: NodeId, g: &Tensor) -> Vec<(NodeId, Tensor)> {
        let node = &self.nodes[id.0];
        let gv = g.data();
        let mat = |r: usize, c: usize, data: Vec<f64>| Tensor::matrix(r, c, data).expect("shape from operand");
        match &node.op {
            Op::Input(_) | Op::Param { .. } | Op::Constant(_) | Op::SlopeMask { .. } => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = self.payload(*a).dims2().expect("checked in forward");
                let (_, n) = self.payload(*b).dims2().expect("checked in forward");
                let mut out = Vec::with_capacity(2);
                if self.nodes[a.0].needs_grad {
                    let da = tensor::matmul_nt(gv, self.payload(*b).data(), m, n, k);
                    out.push((*a, mat(m, k, da)));
                }
                if self.nodes[b.0].needs_grad {
                    let db = tensor::matmul_tn(self.payload(*a).data(), gv, m, k, n);
                    out.push((*b, mat(k, n, db)));
                }
                out
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MaskMul { x: a, mask: b } => {
                let (r, c) = self.payload(*a).dims2().expect("checked in forward");
                let kind = self.broadcast_kind(id.0, "", *a, *b).expect("checked in forward");
                let av = self.payload(*a).data();
                let bv = self.payload(*b).data();
                let b_at = |idx: usize| match kind {
                    Broadcast::Same => bv[idx],
                    Broadcast::Row => bv[idx % c],
                    Broadcast::Scalar => bv[0],
                };
                let mut out = Vec::with_capacity(2);
                let is_mul = matches!(node.op, Op::Mul(..) | Op::MaskMul { .. });
                if self.nodes[a.0].needs_grad {
                    let da: Vec<f64> = if is_mul {
                        gv.iter().enumerate().map(|(idx, &gi)| gi * b_at(idx)).collect()
                    } else {
                        gv.to_vec()
                    };
                    out.push((*a, mat(r, c, da)));
                }
                let b_diff = !matches!(node.op, Op::MaskMul { .. }) && self.nodes[b.0].needs_grad;
                if b_diff {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let local: Vec<f64> = if matches!(node.op, Op::Mul(..)) {
                        gv.iter().zip(av).map(|(&gi, &ai)| gi * ai).collect()
                    } else {
                        gv.iter().map(|&gi| sign * gi).collect()
                    };
                    let db = match kind {
                        Broadcast::Same => mat(r, c, local),
                        Broadcast::Row => {
                            let mut acc = vec![0.0; c];
                            for row in local.chunks(c.max(1)).take(r) {
                                for (s, v) in acc.iter_mut().zip(row) {
                                    *s += v;
                                }
                            }
                            mat(1, c, acc)
                        }
                        Broadcast::Scalar => {
                            let mut acc = 0.0;
                            for v in &local {
                                acc += v;
                            }
                            mat(1, 1, vec![acc])
                        }
                    };
                    out.push((*b, db));
                }
                out
            }
            Op::Transpose(x) => {
                let (r, c) = self.payload(*x).dims2().expect("checked in forward");
                vec![(*x, mat(r, c, tensor::transpose(gv, c, r)))]
            }
            Op::ConcatCols(a, b) => {
                let (r, ac) = self.payload(*a).dims2().expect("checked in forward");
                let (_, bc) = self.payload(*b).dims2().expect("checked in forward");
                let w = ac + bc;
                let mut da = Vec::with_capacity(r * ac);
                let mut db = Vec::with_capacity(r * bc);
                for row in 0..r {
                    da.extend_from_slice(&gv[row * w..row * w + ac]);
                    db.extend_from_slice(&gv[row * w + ac..(row + 1) * w]);
                }
                vec![(*a, mat(r, ac, da)), (*b, mat(r, bc, db))]
            }
            Op::Reshape { x, .. } => {
                let shape = self.payload(*x).shape().to_vec();
                vec![(*x, g.clone().reshaped(shape).expect("same element count"))]
            }
            Op::Relu(x) => self.masked_grad(*x, gv, |v| if v > 0.0 { 1.0 } else { 0.0 }),
            Op::LeakyRelu { x, slope } => {
                let s = *slope;
                self.masked_grad(*x, gv, move |v| if v > 0.0 { 1.0 } else { s })
            }
            Op::Abs(x) => self.masked_grad(*x, gv, |v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Op::Affine { x, scale, .. } => {
                let (r, c) = self.payload(*x).dims2().expect("checked in forward");
                vec![(*x, mat(r, c, gv.iter().map(|&gi| gi * scale).collect()))]
            }
            Op::RowL2Norm(x) => {
                let (r, c) = self.payload(*x).dims2().expect("checked in forward");
                let xv = self.payload(*x).data();
                let norms = node.payload.as_ref().expect("evaluated").data();
                let mut dx = Vec::with_capacity(r * c);
                for row in 0..r {
                    let n = norms[row];
                    let scale = if n > 0.0 { gv[row] / n } else { 0.0 };
                    dx.extend(xv[row * c..(row + 1) * c].iter().map(|&v| v * scale));
                }
                vec![(*x, mat(r, c, dx))]
            }
            Op::Mean(x) => {
                let t = self.payload(*x);
                let v = gv[0] / t.len() as f64;
                vec![(*x, Tensor::filled(t.shape(), v))]
            }
            Op::Sum(x) => vec![(*x, Tensor::filled(self.payload(*x).shape(), gv[0]))],
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let (r, c) = self.payload(*logits).dims2().expect("checked in forward");
                let lv = self.payload(*logits).data();
                let tv = self.payload(*targets).data();
                let scale = gv[0] / r as f64;
                let mut dl = Vec::with_capacity(r * c);
                for row in 0..r {
                    let l = &lv[row * c..(row + 1) * c];
                    let t = &tv[row * c..(row + 1) * c];
                    let probs = softmax(l);
                    let mut mass = 0.0;
                    for &tk in t {
                        mass += tk;
                    }
                    dl.extend(probs.iter().zip(t).map(|(&p, &tk)| scale * (p * mass - tk)));
                }
                vec![(*logits, mat(r, c, dl))]
            }
        }
    }

    fn masked_grad(&self, x: NodeId, gv: &[f64], d: impl Fn(f64) -> f64) -> Vec<(NodeId, Tensor)> {
        let t = self.payload(x);
        let (r, c) = t.dims2().expect("checked in forward");
        let dx = gv.iter().zip(t.data()).map(|(&gi, &v)| gi * d(v)).collect();
        vec![(x, Tensor::matrix(r, c, dx).expect("shape from operand"))]
    }

    /// Smallest distance of any activation input from its kink (relu, leaky
    /// relu, slope mask, abs) or of any row norm from zero, as of the last
    /// forward pass. Finite differences are unreliable when this is tiny.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for n in &self.nodes {
            let probe = match &n.op {
                Op::Relu(x) | Op::Abs(x) | Op::LeakyRelu { x, .. } | Op::SlopeMask { x, .. } => {
                    self.nodes[x.0].payload.as_ref()
                }
                Op::RowL2Norm(_) => n.payload.as_ref(),
                _ => None,
            };
            if let Some(t) = probe {
                for &v in t.data() {
                    margin = margin.min(v.abs());
                }
            }
        }
        margin
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    for &v in row {
        acc += (v - m).exp();
    }
    m + acc.ln()
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
    let mut total = 0.0;
    for &e in &exps {
        total += e;
    }
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, t, true).unwrap();
        s
    }

    #[test]
    fn relu_forward() {
        let mut g = Graph::new();
        let x = g.input("x");
        let y = g.relu(x);
        let xv = Tensor::row(vec![-1.0, 2.0]);
        g.forward(&Bindings::new().with("x", &xv), &ParamStore::new()).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn relu_keeps_nan() {
        let mut g = Graph::new();
        let x = g.input("x");
        let y = g.relu(x);
        let xv = Tensor::row(vec![f64::NAN, -0.5]);
        g.forward(&Bindings::new().with("x", &xv), &ParamStore::new()).unwrap();
        let out = g.value(y).unwrap().data();
        assert!(out[0].is_nan());
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn identity_matmul_forward() {
        let mut g = Graph::new();
        let x = g.input("x");
        let i = g.constant(Tensor::identity(2));
        let y = g.matmul(x, i);
        let xv = Tensor::row(vec![3.0, 4.0]);
        g.forward(&Bindings::new().with("x", &xv), &ParamStore::new()).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn leaky_relu_forward() {
        let mut g = Graph::new();
        let x = g.input("x");
        let y = g.leaky_relu(x, 0.2);
        let xv = Tensor::row(vec![-5.0]);
        g.forward(&Bindings::new().with("x", &xv), &ParamStore::new()).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[0.2 * -5.0]);
        assert_eq!(g.value(y).unwrap().item(), -1.0);
    }

    #[test]
    fn unbound_input_is_an_error() {
        let mut g = Graph::new();
        let x = g.input("x");
        g.relu(x);
        let err = g.forward(&Bindings::new(), &ParamStore::new()).unwrap_err();
        assert!(matches!(err, AutodiffError::UnboundInput(n) if n == "x"));
    }

    #[test]
    fn shape_mismatch_reports_node_and_shapes() {
        let mut g = Graph::new();
        let a = g.input("a");
        let b = g.input("b");
        let c = g.matmul(a, b);
        let av = Tensor::zeros(&[2, 3]);
        let bv = Tensor::zeros(&[2, 3]);
        let err = g
            .forward(&Bindings::new().with("a", &av).with("b", &bv), &ParamStore::new())
            .unwrap_err();
        match err {
            AutodiffError::ShapeMismatch { node, actual, .. } => {
                assert_eq!(node, c.index());
                assert_eq!(actual, vec![vec![2, 3], vec![2, 3]]);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn linear_form_gradient() {
        let mut g = Graph::new();
        let w = g.param("w");
        let x = g.input("x");
        let p = g.mul(w, x);
        let root = g.sum(p);
        let store = store_with("w", Tensor::row(vec![0.3, -0.2, 5.0]));
        let xv = Tensor::row(vec![1.0, 2.0, 3.0]);
        g.forward(&Bindings::new().with("x", &xv), &store).unwrap();
        let grads = g.backward(root).unwrap();
        assert_eq!(grads["w"].data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_root_gives_zero_gradients() {
        let mut g = Graph::new();
        let _w = g.param("w");
        let c = g.constant(Tensor::scalar(4.0));
        let store = store_with("w", Tensor::row(vec![1.0, 2.0]));
        g.forward(&Bindings::new(), &store).unwrap();
        let grads = g.backward(c).unwrap();
        assert_eq!(grads["w"].data(), &[0.0, 0.0]);
    }

    #[test]
    fn squared_error_chain_rule() {
        // mean((w·x − 1)²) at w = [3, 4], x = [1, 1] → 2·(7 − 1)·x = [12, 12]
        let mut g = Graph::new();
        let w = g.param("w");
        let x = g.input("x");
        let xt = g.transpose(x);
        let dot = g.matmul(w, xt);
        let r = g.affine(dot, 1.0, -1.0);
        let sq = g.mul(r, r);
        let root = g.mean(sq);
        let store = store_with("w", Tensor::row(vec![3.0, 4.0]));
        let xv = Tensor::row(vec![1.0, 1.0]);
        g.forward(&Bindings::new().with("x", &xv), &store).unwrap();
        assert_eq!(g.scalar(root).unwrap(), 36.0);
        let grads = g.backward(root).unwrap();
        assert_eq!(grads["w"].data(), &[12.0, 12.0]);
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let w = g.param("w");
        let store = store_with("w", Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(AutodiffError::BackwardBeforeForward)));
        g.forward(&Bindings::new(), &store).unwrap();
        assert!(matches!(g.backward(w), Err(AutodiffError::NonScalarRoot { .. })));
    }

    #[test]
    fn frozen_references_get_no_gradient() {
        let mut g = Graph::new();
        let w = g.frozen_param("w");
        let v = g.param("v");
        let p = g.mul(w, v);
        let root = g.sum(p);
        let mut store = store_with("w", Tensor::row(vec![2.0]));
        store.insert("v", Tensor::row(vec![3.0]), true).unwrap();
        g.forward(&Bindings::new(), &store).unwrap();
        let grads = g.backward(root).unwrap();
        assert!(!grads.contains_key("w"));
        assert_eq!(grads["v"].data(), &[2.0]);
    }

    #[test]
    fn broadcast_gradients_reduce() {
        let mut g = Graph::new();
        let x = g.input("x");
        let b = g.param("b");
        let s = g.param("s");
        let y = g.add(x, b);
        let z = g.mul(y, s);
        let root = g.sum(z);
        let mut store = store_with("b", Tensor::row(vec![1.0, 1.0]));
        store.insert("s", Tensor::scalar(2.0), true).unwrap();
        let xv = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        g.forward(&Bindings::new().with("x", &xv), &store).unwrap();
        let grads = g.backward(root).unwrap();
        assert_eq!(grads["b"].data(), &[6.0, 6.0]);
        assert_eq!(grads["s"].data(), &[21.0 + 6.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1000.0, 1000.0 + 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn forward_twice_then_backward_matches_once() {
        let build = || {
            let mut g = Graph::new();
            let w = g.param("w");
            let x = g.input("x");
            let h = g.matmul(x, w);
            let a = g.leaky_relu(h, 0.2);
            let root = g.mean(a);
            (g, root)
        };
        let store = store_with("w", Tensor::matrix(2, 2, vec![1.0, -2.0, 0.5, 0.25]).unwrap());
        let x1 = Tensor::matrix(1, 2, vec![5.0, -1.0]).unwrap();
        let x2 = Tensor::matrix(1, 2, vec![0.3, 0.7]).unwrap();
        let (mut g1, r1) = build();
        g1.forward(&Bindings::new().with("x", &x1), &store).unwrap();
        g1.forward(&Bindings::new().with("x", &x2), &store).unwrap();
        let a = g1.backward(r1).unwrap();
        let (mut g2, r2) = build();
        g2.forward(&Bindings::new().with("x", &x2), &store).unwrap();
        let b = g2.backward(r2).unwrap();
        assert_eq!(a, b);
    }
}
