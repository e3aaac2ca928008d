//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its value and the indices of its
//! inputs, so nodes are always in topological order. [`Tape::backward`]
//! walks the nodes once in reverse and pushes gradients into the
//! [`ParamStore`] the parameters were read from. A parameter loaded several
//! times (through time, or once per lookup row) accumulates the sum of its
//! per-use gradients.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{self, matmul_into, sigmoid, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Row { param: ParamId, row: usize },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Var, Var),
    Softmax(Var),
    Scale(Var, f64),
    /// `-ln(probs[gold])`
    NegLog { probs: Var, gold: usize },
    /// `-ln(softmax(logits)[gold])`
    SoftmaxCrossEntropy { logits: Var, gold: usize },
    /// Sum of scalar nodes.
    SumScalars(usize),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Inputs of `SumScalars` nodes, stored out of line.
    sum_inputs: Vec<Vec<Var>>,
    loaded: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    /// Loads a parameter; repeated loads on the same tape return the same node.
    /// Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.loaded.get(&id) {
            return v;
        }
        let p = store.get(id);
        let op = if p.trainable { Op::Param(id) } else { Op::Constant };
        let v = self.push(op, p.value.clone());
        self.loaded.insert(id, v);
        v
    }

    /// Looks up one row of a matrix parameter as a vector.
    pub fn row(&mut self, store: &ParamStore, id: ParamId, row: usize) -> Result<Var> {
        let p = store.get(id);
        let (rows, _) = p.shape().as_matrix();
        if row >= rows {
            return Err(Error::Index { index: row, len: rows });
        }
        let value = Tensor::vector(p.value.row(row).to_vec());
        let op = if p.trainable {
            Op::Row { param: id, row }
        } else {
            Op::Constant
        };
        Ok(self.push(op, value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    /// Sum of several same-shaped nodes, left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Contract("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        self.push(Op::Scale(a, factor), value)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).concat(self.value(b))?;
        if !matches!(value.shape(), Shape::Vector(_)) {
            return Err(Error::Dimension {
                op: "concat",
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(self.push(Op::Concat(a, b), value))
    }

    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let Shape::Vector(_) = self.shape(logits) else {
            return Err(Error::Dimension {
                op: "softmax",
                left: self.shape(logits),
                right: Shape::Vector(1),
            });
        };
        let value = Tensor::vector(tensor::softmax(self.value(logits).data())?);
        Ok(self.push(Op::Softmax(logits), value))
    }

    /// `-ln(probs[gold])` for a probability vector node.
    pub fn neg_log(&mut self, probs: Var, gold: usize) -> Result<Var> {
        let p = self.value(probs).data();
        if gold >= p.len() {
            return Err(Error::Label {
                label: gold,
                classes: p.len(),
            });
        }
        let value = Tensor::vector(vec![-p[gold].ln()]);
        Ok(self.push(Op::NegLog { probs, gold }, value))
    }

    /// Fused softmax + cross-entropy on raw logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, gold: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if z.is_empty() {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                left: Shape::Vector(0),
                right: Shape::Vector(1),
            });
        }
        if gold >= z.len() {
            return Err(Error::Label {
                label: gold,
                classes: z.len(),
            });
        }
        let value = Tensor::vector(vec![-tensor::log_softmax_at(z, gold)]);
        Ok(self.push(Op::SoftmaxCrossEntropy { logits, gold }, value))
    }

    /// Sum of scalar nodes.
    pub fn sum_scalars(&mut self, terms: &[Var]) -> Result<Var> {
        if let Some(&bad) = terms.iter().find(|&&t| self.value(t).len() != 1) {
            return Err(Error::Contract(format!(
                "sum_scalars expects scalars, got {}",
                self.shape(bad)
            )));
        }
        let total = terms.iter().map(|&t| self.scalar(t)).sum();
        self.sum_inputs.push(terms.to_vec());
        let slot = self.sum_inputs.len() - 1;
        Ok(self.push(Op::SumScalars(slot), Tensor::vector(vec![total])))
    }

    /// Reverse sweep from a scalar `loss`; parameter gradients are added to
    /// the store's gradient fields.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Constant => {}
                Op::Param(id) => store.accumulate(id, &g),
                Op::Row { param, row } => store.accumulate_row(param, row, &g),
                Op::MatMul(a, b) => {
                    let av = self.value(a);
                    let bv = self.value(b);
                    let (m, k) = av.shape().as_matrix();
                    let (_, n) = bv.shape().as_matrix();
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv.data()[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    let at = av.transpose();
                    matmul_into(at.data(), &g, &mut db, k, m, n);
                    add_grad(&mut grads, a, &da);
                    add_grad(&mut grads, b, &db);
                }
                Op::Add(a, b) => {
                    add_grad(&mut grads, a, &g);
                    add_grad(&mut grads, b, &g);
                }
                Op::Sub(a, b) => {
                    add_grad(&mut grads, a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    add_grad(&mut grads, b, &neg);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = g.iter().zip(self.value(b).data()).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = g.iter().zip(self.value(a).data()).map(|(g, x)| g * x).collect();
                    add_grad(&mut grads, a, &da);
                    add_grad(&mut grads, b, &db);
                }
                Op::Sigmoid(a) => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect();
                    add_grad(&mut grads, a, &d);
                }
                Op::Tanh(a) => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, t)| g * (1.0 - t * t))
                        .collect();
                    add_grad(&mut grads, a, &d);
                }
                Op::Scale(a, factor) => {
                    let d: Vec<f64> = g.iter().map(|v| v * factor).collect();
                    add_grad(&mut grads, a, &d);
                }
                Op::Concat(a, b) => {
                    let p = self.value(a).len();
                    add_grad(&mut grads, a, &g[..p]);
                    add_grad(&mut grads, b, &g[p..]);
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                    let d: Vec<f64> = g.iter().zip(y).map(|(g, y)| y * (g - dot)).collect();
                    add_grad(&mut grads, a, &d);
                }
                Op::NegLog { probs, gold } => {
                    let p = self.value(probs).data();
                    let mut d = vec![0.0; p.len()];
                    d[gold] = -g[0] / p[gold];
                    add_grad(&mut grads, probs, &d);
                }
                Op::SoftmaxCrossEntropy { logits, gold } => {
                    let mut d = tensor::softmax(self.value(logits).data())?;
                    d[gold] -= 1.0;
                    d.iter_mut().for_each(|v| *v *= g[0]);
                    add_grad(&mut grads, logits, &d);
                }
                Op::SumScalars(slot) => {
                    for &t in &self.sum_inputs[slot] {
                        add_grad(&mut grads, t, &g);
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_grad(grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(d).for_each(|(e, x)| *e += x),
        slot @ None => *slot = Some(d.to_vec()),
    }
}
