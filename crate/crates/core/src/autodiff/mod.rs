//! Reverse-mode differentiation over a per-pass operation tape.
//!
//! A [`Tape`] is created for one forward pass, records every operation
//! whose inputs require gradients, and is consumed by [`Tape::backward`].
//! It is deliberately `!Send`: one tape lives on one thread. Independent
//! samples use independent tapes and merge their gradients explicitly.

mod elementwise;
mod linear;
mod reduce;
mod shape;

use std::collections::HashMap;

pub use elementwise::BinaryOp;
pub use reduce::ReduceOp;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Everything a backward rule can see.
pub struct BackwardCtx<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a [T],
    /// `needs[i]` is false when input `i` does not require a gradient; rules
    /// may skip that input and return `None`.
    pub needs: Vec<bool>,
}

type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    leaf: bool,
}

struct Op<T> {
    name: &'static str,
    inputs: Vec<usize>,
    output: usize,
    backward: BackwardFn<T>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BackwardReport {
    /// Ops walked in reverse order.
    pub visited: usize,
    /// Backward rules actually executed (ops whose output received gradient).
    pub executed: usize,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    ops: Vec<Op<T>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            ops: Vec::new(),
            consumed: false,
        }
    }

    /// Registers a leaf. Its `requires_grad` flag decides whether the tape
    /// tracks gradients through it; any stored `grad` is dropped.
    pub fn leaf(&mut self, mut value: Tensor<T>) -> Var {
        let requires_grad = value.requires_grad;
        value.grad = None;
        self.nodes.push(Node {
            value,
            requires_grad,
            leaf: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, mut value: Tensor<T>) -> Var {
        value.requires_grad = false;
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    pub fn op_names(&self) -> Vec<&'static str> {
        self.ops.iter().map(|o| o.name).collect()
    }

    /// Stores `value` as the output of an op over `inputs`. The backward
    /// rule is kept only when some input requires a gradient.
    pub fn record<F>(&mut self, name: &'static str, value: Tensor<T>, inputs: &[Var], backward: F) -> Result<Var>
    where
        F: Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> + 'static,
    {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            leaf: false,
        });
        let output = self.nodes.len() - 1;
        if requires_grad {
            self.ops.push(Op {
                name,
                inputs: inputs.iter().map(|v| v.0).collect(),
                output,
                backward: Box::new(backward),
            });
        }
        Ok(Var(output))
    }

    /// Copies a value off the tape as a constant: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    /// Propagates d`loss`/d(leaf) for every leaf that requires a gradient.
    /// The recorded ops are consumed; a second call is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        self.consumed = true;
        let ops = std::mem::take(&mut self.ops);

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut report = BackwardReport::default();

        for op in ops.iter().rev() {
            report.visited += 1;
            let Some(g) = grads[op.output].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                inputs: op.inputs.iter().map(|&i| &self.nodes[i].value).collect(),
                output: &self.nodes[op.output].value,
                grad: &g,
                needs: op.inputs.iter().map(|&i| self.nodes[i].requires_grad).collect(),
            };
            let input_grads = (op.backward)(&ctx);
            report.executed += 1;
            for (&i, ig) in op.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[i].requires_grad {
                    continue;
                }
                match &mut grads[i] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }

        let mut leaf_grads = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.leaf && node.requires_grad {
                let data = grads[i].take().unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                leaf_grads.insert(i, Tensor::from_parts(node.value.shape().to_vec(), data));
            }
        }
        Ok(Gradients {
            grads: leaf_grads,
            report,
        })
    }
}

/// Leaf gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: HashMap<usize, Tensor<T>>,
    pub report: BackwardReport,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v.0)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.remove(&v.0)
    }

    /// Writes the gradient of `v` into `target.grad`.
    pub fn store_into(&self, v: Var, target: &mut Tensor<T>) {
        target.grad = self.grads.get(&v.0).map(|g| g.data().to_vec());
    }
}
