//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every tensor operation of a forward pass as a
//! node. Backpropagation walks the tape in reverse and, crucially,
//! *emits its own computations as new tape nodes*: the gradient of a
//! recorded scalar is itself a recorded expression. Differentiating a
//! gradient a second time therefore needs no extra machinery, which is
//! how exact Hessian-vector products are obtained.
//!
//! The operation set is deliberately small: exactly what a multi-layer
//! rectifier network with linear heads and a fused softmax
//! cross-entropy loss requires, plus the vector arithmetic the
//! quadratic test functions use.

use std::cell::RefCell;
use std::rc::Rc;

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Scalar};

/// A recorded operation. Parent fields are node indices into the tape.
#[derive(Debug, Clone)]
enum Op<S> {
    /// Input or constant; no parents.
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, S),
    /// Pairwise sum of all entries, producing a `[1]` tensor.
    Sum(usize),
    /// Fills the output shape with the value of a `[1]` node.
    Fill(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    /// Indicator of positive entries; derivative registered as zero.
    ReluMask(usize),
    /// Adds a `[n]` bias to each row of an `[m, n]` matrix.
    AddBias(usize, usize),
    SumAxis0(usize),
    SumAxis1(usize),
    BroadcastAxis0(usize),
    BroadcastAxis1(usize),
    SoftmaxRows(usize),
    /// Mean softmax cross-entropy over rows; the fused loss primitive.
    SoftmaxXentMean { logits: usize, labels: Rc<Vec<usize>> },
    /// Test-only primitive with a first derivative but no registered
    /// second-derivative rule.
    #[cfg(test)]
    OpaqueFirstOrder(usize),
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::Fill(..) => "fill",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Relu(..) => "relu",
            Op::ReluMask(..) => "relu_mask",
            Op::AddBias(..) => "add_bias",
            Op::SumAxis0(..) => "sum_axis0",
            Op::SumAxis1(..) => "sum_axis1",
            Op::BroadcastAxis0(..) => "broadcast_axis0",
            Op::BroadcastAxis1(..) => "broadcast_axis1",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::SoftmaxXentMean { .. } => "softmax_xent_mean",
            #[cfg(test)]
            Op::OpaqueFirstOrder(..) => "opaque_first_order",
        }
    }

    /// Whether backpropagating through this node emits nodes that can
    /// themselves be backpropagated.
    fn supports_second_order(&self) -> bool {
        #[cfg(test)]
        if matches!(self, Op::OpaqueFirstOrder(..)) {
            return false;
        }
        true
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// The recording arena. Cheaply clonable handle; single-threaded.
pub struct Tape<S: Scalar> {
    inner: Rc<RefCell<Vec<Node<S>>>>,
}

impl<S: Scalar> Clone for Tape<S> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// A handle to one tape node.
pub struct Var<S: Scalar> {
    tape: Tape<S>,
    id: usize,
}

impl<S: Scalar> Clone for Var<S> {
    fn clone(&self) -> Self {
        Var {
            tape: self.tape.clone(),
            id: self.id,
        }
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(Vec::new())),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input or constant tensor.
    pub fn leaf(&self, value: Tensor<S>) -> Var<S> {
        self.push(value, Op::Leaf)
    }

    fn push(&self, value: Tensor<S>, op: Op<S>) -> Var<S> {
        let mut nodes = self.inner.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value, op });
        Var {
            tape: self.clone(),
            id,
        }
    }

    fn value_of(&self, id: usize) -> Tensor<S> {
        self.inner.borrow()[id].value.clone()
    }

    fn op_of(&self, id: usize) -> Op<S> {
        self.inner.borrow()[id].op.clone()
    }

    fn var(&self, id: usize) -> Var<S> {
        Var {
            tape: self.clone(),
            id,
        }
    }

    /// Backpropagates from the scalar `loss` and returns one gradient
    /// variable per entry of `wrt` (zeros when disconnected). The
    /// returned gradients live on this tape and can be backpropagated
    /// again.
    pub fn gradients(&self, loss: &Var<S>, wrt: &[Var<S>]) -> Vec<Var<S>> {
        assert!(
            Rc::ptr_eq(&self.inner, &loss.tape.inner),
            "loss var from foreign tape"
        );
        assert_eq!(
            loss.shape(),
            [1],
            "backward from non-scalar of shape {:?}",
            loss.shape()
        );
        let mut grads: Vec<Option<usize>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(self.leaf(Tensor::scalar(S::one())).id);

        for id in (0..=loss.id).rev() {
            let Some(go) = grads[id] else { continue };
            let op = self.op_of(id);
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, a, go);
                    self.accumulate(&mut grads, b, go);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, a, go);
                    let gb = self.var(go).neg().id;
                    self.accumulate(&mut grads, b, gb);
                }
                Op::Mul(a, b) => {
                    let ga = self.var(go).mul(&self.var(b)).id;
                    let gb = self.var(go).mul(&self.var(a)).id;
                    self.accumulate(&mut grads, a, ga);
                    self.accumulate(&mut grads, b, gb);
                }
                Op::Neg(a) => {
                    let ga = self.var(go).neg().id;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Scale(a, factor) => {
                    let ga = self.var(go).scale(factor).id;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Sum(a) => {
                    let shape = self.value_of(a).shape().to_vec();
                    let ga = self.var(go).fill(shape).id;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Fill(a) => {
                    let ga = self.var(go).sum().id;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::MatMul(a, b) => {
                    let ga = self.var(go).matmul(&self.var(b).transpose()).id;
                    let gb = self.var(a).transpose().matmul(&self.var(go)).id;
                    self.accumulate(&mut grads, a, ga);
                    self.accumulate(&mut grads, b, gb);
                }
                Op::Transpose(a) => {
                    let ga = self.var(go).transpose().id;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Relu(a) => {
                    let ga = self.var(go).mul(&self.var(a).relu_mask()).id;
                    self.accumulate(&mut grads, a, ga);
                }
                // Derivative of the positive-part indicator is zero
                // almost everywhere and defined as zero at the kink.
                Op::ReluMask(a) => {
                    debug_assert_eq!(self.value_of(a).shape(), self.value_of(id).shape());
                }
                Op::AddBias(a, bias) => {
                    self.accumulate(&mut grads, a, go);
                    let gb = self.var(go).sum_axis0().id;
                    self.accumulate(&mut grads, bias, gb);
                }
                Op::SumAxis0(a) => {
                    let m = self.value_of(a).shape()[0];
                    let ga = self.var(go).broadcast_axis0(m).id;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::SumAxis1(a) => {
                    let n = self.value_of(a).shape()[1];
                    let ga = self.var(go).broadcast_axis1(n).id;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::BroadcastAxis0(a) => {
                    let ga = self.var(go).sum_axis0().id;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::BroadcastAxis1(a) => {
                    let ga = self.var(go).sum_axis1().id;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::SoftmaxRows(a) => {
                    // gz = s ⊙ (go − rowsum(s ⊙ go) per column)
                    let s = self.var(id);
                    let go_v = self.var(go);
                    let n = self.value_of(a).shape()[1];
                    let inner = s.mul(&go_v).sum_axis1().broadcast_axis1(n);
                    let ga = s.mul(&go_v.sub(&inner)).id;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::SoftmaxXentMean { logits, labels } => {
                    // gz = (softmax(z) − onehot) ⊙ go/m
                    let shape = self.value_of(logits).shape().to_vec();
                    let (m, n) = (shape[0], shape[1]);
                    let mut onehot = Tensor::zeros(vec![m, n]);
                    for (i, &label) in labels.iter().enumerate() {
                        onehot.data_mut()[i * n + label] = S::one();
                    }
                    let onehot = self.leaf(onehot);
                    let diff = self.var(logits).softmax_rows().sub(&onehot);
                    let scale = self
                        .var(go)
                        .scale(S::one() / S::from_usize(m).unwrap())
                        .fill(shape);
                    let ga = scale.mul(&diff).id;
                    self.accumulate(&mut grads, logits, ga);
                }
                #[cfg(test)]
                Op::OpaqueFirstOrder(a) => {
                    self.accumulate(&mut grads, a, go);
                }
            }
        }

        wrt.iter()
            .map(|w| {
                assert!(
                    Rc::ptr_eq(&self.inner, &w.tape.inner),
                    "wrt var from foreign tape"
                );
                match grads.get(w.id).copied().flatten() {
                    Some(g) => self.var(g),
                    None => self.leaf(Tensor::zeros(self.value_of(w.id).shape().to_vec())),
                }
            })
            .collect()
    }

    fn accumulate(&self, grads: &mut Vec<Option<usize>>, target: usize, contribution: usize) {
        grads[target] = Some(match grads[target] {
            Some(existing) => self.var(existing).add(&self.var(contribution)).id,
            None => contribution,
        });
    }

    /// Rejects traces holding a node without a second-derivative rule.
    pub fn check_second_order(&self, upto: &Var<S>) -> Result<()> {
        let nodes = self.inner.borrow();
        for node in nodes.iter().take(upto.id + 1) {
            if !node.op.supports_second_order() {
                return Err(Error::UnsupportedSecondOrder {
                    op: node.op.name(),
                });
            }
        }
        Ok(())
    }
}

impl<S: Scalar> Var<S> {
    pub fn value(&self) -> Tensor<S> {
        self.tape.value_of(self.id)
    }

    /// The scalar held by a `[1]` variable.
    pub fn item(&self) -> S {
        let nodes = self.tape.inner.borrow();
        nodes[self.id].value.item()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow()[self.id].value.shape().to_vec()
    }

    fn binary(&self, other: &Var<S>, value: Tensor<S>, op: Op<S>) -> Var<S> {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "vars from different tapes"
        );
        self.tape.push(value, op)
    }

    pub fn add(&self, other: &Var<S>) -> Var<S> {
        let value = {
            let nodes = self.tape.inner.borrow();
            nodes[self.id].value.add(&nodes[other.id].value)
        };
        self.binary(other, value, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<S>) -> Var<S> {
        let value = {
            let nodes = self.tape.inner.borrow();
            nodes[self.id].value.sub(&nodes[other.id].value)
        };
        self.binary(other, value, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<S>) -> Var<S> {
        let value = {
            let nodes = self.tape.inner.borrow();
            nodes[self.id].value.mul(&nodes[other.id].value)
        };
        self.binary(other, value, Op::Mul(self.id, other.id))
    }

    pub fn neg(&self) -> Var<S> {
        let value = self.tape.inner.borrow()[self.id].value.neg();
        self.tape.push(value, Op::Neg(self.id))
    }

    pub fn scale(&self, factor: S) -> Var<S> {
        let value = self.tape.inner.borrow()[self.id].value.scale(factor);
        self.tape.push(value, Op::Scale(self.id, factor))
    }

    pub fn sum(&self) -> Var<S> {
        let value = self.tape.inner.borrow()[self.id].value.sum();
        self.tape.push(value, Op::Sum(self.id))
    }

    pub fn fill(&self, shape: Vec<usize>) -> Var<S> {
        let value = {
            let nodes = self.tape.inner.borrow();
            Tensor::filled(shape.clone(), nodes[self.id].value.item())
        };
        self.tape.push(value, Op::Fill(self.id))
    }

    pub fn matmul(&self, other: &Var<S>) -> Var<S> {
        let value = {
            let nodes = self.tape.inner.borrow();
            nodes[self.id].value.matmul(&nodes[other.id].value)
        };
        self.binary(other, value, Op::MatMul(self.id, other.id))
    }

    pub fn transpose(&self) -> Var<S> {
        let value = self.tape.inner.borrow()[self.id].value.transpose();
        self.tape.push(value, Op::Transpose(self.id))
    }

    pub fn relu(&self) -> Var<S> {
        let value = self.tape.inner.borrow()[self.id].value.relu();
        self.tape.push(value, Op::Relu(self.id))
    }

    pub fn relu_mask(&self) -> Var<S> {
        let value = self.tape.inner.borrow()[self.id].value.relu_mask();
        self.tape.push(value, Op::ReluMask(self.id))
    }

    pub fn add_bias(&self, bias: &Var<S>) -> Var<S> {
        let value = {
            let nodes = self.tape.inner.borrow();
            nodes[self.id].value.add_bias(&nodes[bias.id].value)
        };
        self.binary(bias, value, Op::AddBias(self.id, bias.id))
    }

    pub fn sum_axis0(&self) -> Var<S> {
        let value = self.tape.inner.borrow()[self.id].value.sum_axis0();
        self.tape.push(value, Op::SumAxis0(self.id))
    }

    pub fn sum_axis1(&self) -> Var<S> {
        let value = self.tape.inner.borrow()[self.id].value.sum_axis1();
        self.tape.push(value, Op::SumAxis1(self.id))
    }

    pub fn broadcast_axis0(&self, m: usize) -> Var<S> {
        let value = self.tape.inner.borrow()[self.id].value.broadcast_axis0(m);
        self.tape.push(value, Op::BroadcastAxis0(self.id))
    }

    pub fn broadcast_axis1(&self, n: usize) -> Var<S> {
        let value = self.tape.inner.borrow()[self.id].value.broadcast_axis1(n);
        self.tape.push(value, Op::BroadcastAxis1(self.id))
    }

    pub fn softmax_rows(&self) -> Var<S> {
        let value = self.tape.inner.borrow()[self.id].value.softmax_rows();
        self.tape.push(value, Op::SoftmaxRows(self.id))
    }

    /// Fused mean softmax cross-entropy over the rows of a logit
    /// matrix. Per-row losses are sorted before the pairwise mean so
    /// the result is bit-identical under any permutation of the rows
    /// (labels permuted alongside).
    pub fn softmax_xent_mean(&self, labels: &[usize]) -> Var<S> {
        let value = {
            let nodes = self.tape.inner.borrow();
            let logits = &nodes[self.id].value;
            let mut losses = logits.xent_rows(labels);
            losses.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite loss"));
            let m = S::from_usize(losses.len()).unwrap();
            Tensor::scalar(pairwise_sum(&losses) / m)
        };
        self.tape.push(
            value,
            Op::SoftmaxXentMean {
                logits: self.id,
                labels: Rc::new(labels.to_vec()),
            },
        )
    }

    /// Dot product as a scalar variable.
    pub fn dot(&self, other: &Var<S>) -> Var<S> {
        self.mul(other).sum()
    }

    #[cfg(test)]
    fn opaque_first_order(&self) -> Var<S> {
        let value = self.value();
        self.tape.push(value, Op::OpaqueFirstOrder(self.id))
    }
}
