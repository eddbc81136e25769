//! Operation tape: forward evaluation with recorded nodes, and reverse
//! accumulation of gradients into named parameters.

use std::collections::HashMap;

use super::{ParamStore, Tensor, TensorError};

/// Handle to a value on a tape. Creation order is topological: parents
/// always precede children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    /// Constant input; no gradient flows out.
    Leaf,
    /// Named parameter leaf; gradients are collected under this name.
    Param(String),
    /// y = W x with W: [out, in], x: [in].
    MatVec,
    Add,
    Sub,
    Mul,
    Concat,
    Sigmoid,
    Tanh,
    Softplus,
    Abs,
    Ln,
    Exp,
    /// y = a * x + b, elementwise with scalar a, b. Only the slope matters
    /// for the backward pass.
    Affine {
        a: f64,
    },
    /// Scalar sum of all entries.
    Sum,
    /// Scalar mean of all entries.
    Mean,
}

#[derive(Debug)]
struct Node {
    op: Op,
    parents: Vec<ValueId>,
    value: Tensor,
}

/// Gradients keyed by parameter name. Parameters never touched by the loss
/// are simply absent; readers treat absence as zero.
#[derive(Debug, Default)]
pub struct Gradients {
    map: HashMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Sums another gradient set into this one (used for accumulation
    /// across scenarios).
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, g) in &other.map {
            match self.map.get_mut(name) {
                Some(mine) => {
                    for (a, b) in mine.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.map.insert(name.clone(), g.clone());
                }
            }
        }
    }

    /// Scales every gradient in place.
    pub fn scale(&mut self, s: f64) {
        for g in self.map.values_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
}

/// Records one forward pass. A tape is confined to a single training step;
/// inference over frozen parameters may build tapes in parallel.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_ids: HashMap<String, ValueId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, parents: Vec<ValueId>, value: Tensor) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node { op, parents, value });
        id
    }

    /// Puts a constant tensor on the tape.
    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.push(Op::Leaf, vec![], value)
    }

    /// Puts a named parameter on the tape, creating it in the store on
    /// first use. Reuses the existing leaf if the parameter was already
    /// touched, so gradient contributions accumulate on one node.
    pub fn param(
        &mut self,
        store: &mut ParamStore,
        name: &str,
        shape: &[usize],
        init: super::Init,
    ) -> Result<ValueId, TensorError> {
        if let Some(&id) = self.param_ids.get(name) {
            return Ok(id);
        }
        let value = store.get_or_init(name, shape, init)?.clone();
        let id = self.push(Op::Param(name.to_string()), vec![], value);
        self.param_ids.insert(name.to_string(), id);
        Ok(id)
    }

    fn binary_same_shape(
        &mut self,
        op: Op,
        a: ValueId,
        b: ValueId,
        f: impl Fn(f64, f64) -> f64,
        context: &'static str,
    ) -> Result<ValueId, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                context,
                expected: ta.shape().to_vec(),
                got: tb.shape().to_vec(),
            });
        }
        let data: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(op, vec![a, b], Tensor { shape, data }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        self.binary_same_shape(Op::Add, a, b, |x, y| x + y, "add")
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        self.binary_same_shape(Op::Sub, a, b, |x, y| x - y, "sub")
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        self.binary_same_shape(Op::Mul, a, b, |x, y| x * y, "mul")
    }

    /// y = W x for W of shape `[out, in]` and x of shape `[in]`.
    pub fn matvec(&mut self, w: ValueId, x: ValueId) -> Result<ValueId, TensorError> {
        let (tw, tx) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
        let [out, inp] = *tw.shape() else {
            return Err(TensorError::ShapeMismatch {
                context: "matvec weight",
                expected: vec![0, 0],
                got: tw.shape().to_vec(),
            });
        };
        if tx.shape() != [inp] {
            return Err(TensorError::ShapeMismatch {
                context: "matvec input",
                expected: vec![inp],
                got: tx.shape().to_vec(),
            });
        }
        let mut data = vec![0.0; out];
        let wd = tw.data();
        let xd = tx.data();
        for i in 0..out {
            let row = &wd[i * inp..(i + 1) * inp];
            data[i] = row.iter().zip(xd).map(|(a, b)| a * b).sum();
        }
        Ok(self.push(
            Op::MatVec,
            vec![w, x],
            Tensor {
                shape: vec![out],
                data,
            },
        ))
    }

    fn unary(&mut self, op: Op, x: ValueId, f: impl Fn(f64) -> f64) -> ValueId {
        let t = &self.nodes[x.0].value;
        let data: Vec<f64> = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        self.push(op, vec![x], Tensor { shape, data })
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        self.unary(Op::Sigmoid, x, |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn tanh(&mut self, x: ValueId) -> ValueId {
        self.unary(Op::Tanh, x, f64::tanh)
    }

    pub fn softplus(&mut self, x: ValueId) -> ValueId {
        // Stable ln(1 + e^x).
        self.unary(Op::Softplus, x, |v| v.max(0.0) + (-v.abs()).exp().ln_1p())
    }

    pub fn abs(&mut self, x: ValueId) -> ValueId {
        self.unary(Op::Abs, x, f64::abs)
    }

    pub fn ln(&mut self, x: ValueId) -> ValueId {
        self.unary(Op::Ln, x, f64::ln)
    }

    pub fn exp(&mut self, x: ValueId) -> ValueId {
        self.unary(Op::Exp, x, f64::exp)
    }

    /// Elementwise a*x + b.
    pub fn affine(&mut self, x: ValueId, a: f64, b: f64) -> ValueId {
        self.unary(Op::Affine { a }, x, |v| a * v + b)
    }

    pub fn concat(&mut self, parts: &[ValueId]) -> ValueId {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        let n = data.len();
        self.push(
            Op::Concat,
            parts.to_vec(),
            Tensor {
                shape: vec![n],
                data,
            },
        )
    }

    pub fn sum(&mut self, x: ValueId) -> ValueId {
        let s: f64 = self.nodes[x.0].value.data().iter().sum();
        self.push(Op::Sum, vec![x], Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: ValueId) -> ValueId {
        let d = self.nodes[x.0].value.data();
        let s: f64 = d.iter().sum::<f64>() / d.len() as f64;
        self.push(Op::Mean, vec![x], Tensor::scalar(s))
    }

    /// Reverse pass from a scalar loss. Visits nodes in reverse creation
    /// order (a valid reverse topological order) exactly once and returns
    /// the gradients keyed by parameter name.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients, TensorError> {
        let lt = &self.nodes[loss.0].value;
        if lt.len() != 1 {
            return Err(TensorError::NotScalar(lt.shape().to_vec()));
        }
        if !lt.data()[0].is_finite() {
            return Err(TensorError::NonFinite("backward loss"));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let add_to = |grads: &mut Vec<Option<Vec<f64>>>, id: ValueId, contrib: &[f64]| {
                let slot = &mut grads[id.0];
                match slot {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(contrib) {
                            *a += c;
                        }
                    }
                    None => *slot = Some(contrib.to_vec()),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(name) => {
                    let t = Tensor {
                        shape: node.value.shape().to_vec(),
                        data: g,
                    };
                    out.map
                        .entry(name.clone())
                        .and_modify(|acc| {
                            for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                                *a += b;
                            }
                        })
                        .or_insert(t);
                    continue;
                }
                Op::MatVec => {
                    let (w_id, x_id) = (node.parents[0], node.parents[1]);
                    let w = self.nodes[w_id.0].value.data();
                    let x = self.nodes[x_id.0].value.data();
                    let (out_dim, in_dim) = (g.len(), x.len());
                    let mut dw = vec![0.0; out_dim * in_dim];
                    let mut dx = vec![0.0; in_dim];
                    for r in 0..out_dim {
                        let gi = g[r];
                        let row = &w[r * in_dim..(r + 1) * in_dim];
                        for c in 0..in_dim {
                            dw[r * in_dim + c] = gi * x[c];
                            dx[c] += row[c] * gi;
                        }
                    }
                    add_to(&mut grads, w_id, &dw);
                    add_to(&mut grads, x_id, &dx);
                }
                Op::Add => {
                    add_to(&mut grads, node.parents[0], &g);
                    add_to(&mut grads, node.parents[1], &g);
                }
                Op::Sub => {
                    add_to(&mut grads, node.parents[0], &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    add_to(&mut grads, node.parents[1], &neg);
                }
                Op::Mul => {
                    let a = self.nodes[node.parents[0].0].value.data();
                    let b = self.nodes[node.parents[1].0].value.data();
                    let da: Vec<f64> = g.iter().zip(b).map(|(gi, bi)| gi * bi).collect();
                    let db: Vec<f64> = g.iter().zip(a).map(|(gi, ai)| gi * ai).collect();
                    add_to(&mut grads, node.parents[0], &da);
                    add_to(&mut grads, node.parents[1], &db);
                }
                Op::Concat => {
                    let mut offset = 0;
                    for &p in &node.parents {
                        let n = self.nodes[p.0].value.len();
                        add_to(&mut grads, p, &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Sigmoid => {
                    let y = node.value.data();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(y)
                        .map(|(gi, yi)| gi * yi * (1.0 - yi))
                        .collect();
                    add_to(&mut grads, node.parents[0], &dx);
                }
                Op::Tanh => {
                    let y = node.value.data();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(y)
                        .map(|(gi, yi)| gi * (1.0 - yi * yi))
                        .collect();
                    add_to(&mut grads, node.parents[0], &dx);
                }
                Op::Softplus => {
                    let x = self.nodes[node.parents[0].0].value.data();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(x)
                        .map(|(gi, xi)| gi / (1.0 + (-xi).exp()))
                        .collect();
                    add_to(&mut grads, node.parents[0], &dx);
                }
                Op::Abs => {
                    let x = self.nodes[node.parents[0].0].value.data();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(x)
                        .map(|(gi, xi)| gi * if *xi >= 0.0 { 1.0 } else { -1.0 })
                        .collect();
                    add_to(&mut grads, node.parents[0], &dx);
                }
                Op::Ln => {
                    let x = self.nodes[node.parents[0].0].value.data();
                    let dx: Vec<f64> = g.iter().zip(x).map(|(gi, xi)| gi / xi).collect();
                    add_to(&mut grads, node.parents[0], &dx);
                }
                Op::Exp => {
                    let y = node.value.data();
                    let dx: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| gi * yi).collect();
                    add_to(&mut grads, node.parents[0], &dx);
                }
                Op::Affine { a, .. } => {
                    let dx: Vec<f64> = g.iter().map(|gi| gi * a).collect();
                    add_to(&mut grads, node.parents[0], &dx);
                }
                Op::Sum => {
                    let n = self.nodes[node.parents[0].0].value.len();
                    add_to(&mut grads, node.parents[0], &vec![g[0]; n]);
                }
                Op::Mean => {
                    let n = self.nodes[node.parents[0].0].value.len();
                    add_to(&mut grads, node.parents[0], &vec![g[0] / n as f64; n]);
                }
            }
        }
        Ok(out)
    }
}
