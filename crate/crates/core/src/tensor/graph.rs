use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{ensure, Result};

use super::{Scalar, Tensor};

/// Handle to a tensor owned by a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// An operation defined outside the engine.
///
/// `backward` returns one gradient contribution per input, `None` where
/// `needs_grad` is false.
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &[T],
        needs_grad: &[bool],
    ) -> Vec<Option<Vec<T>>>;

    /// Hash of the op's piecewise region for these inputs. Two evaluations
    /// with equal signatures lie on the same smooth piece.
    fn kink_signature(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>) -> u64 {
        0
    }
}

pub(crate) enum Op<T: Scalar> {
    Conv2d { padding: usize },
    Relu,
    Concat,
    AvgPool,
    MaxPool { argmax: Vec<usize> },
    Linear,
    Mse,
    Add,
    Scale(T),
    Sum,
    Broadcast,
    Custom(Box<dyn CustomOp<T>>),
}

pub(crate) struct Record<T: Scalar> {
    pub(crate) op: Op<T>,
    pub(crate) inputs: Vec<Var>,
    pub(crate) output: Var,
}

/// Tensor arena plus the record of operations executed on it.
///
/// Leaves created with [`Graph::leaf`] keep their gradients across
/// backward passes; gradients accumulate until [`Graph::zero_grad`].
pub struct Graph<T: Scalar = f32> {
    pub(crate) nodes: Vec<Tensor<T>>,
    leaf: Vec<bool>,
    tracked: Vec<bool>,
    pub(crate) records: Vec<Record<T>>,
    recording: bool,
    kinks: Option<DefaultHasher>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            leaf: Vec::new(),
            tracked: Vec::new(),
            records: Vec::new(),
            recording: true,
            kinks: None,
        }
    }

    /// A graph that never records; every value is a constant.
    pub fn inference() -> Self {
        Graph { recording: false, ..Self::new() }
    }

    /// Hash the region of every non-smooth op evaluated from now on.
    pub fn with_kink_tracking(mut self) -> Self {
        self.kinks = Some(DefaultHasher::new());
        self
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Adds a leaf. It participates in differentiation iff the tensor
    /// requires gradients and the graph is recording.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        let tracked = self.recording && tensor.requires_grad();
        tensor.set_requires_grad(tracked);
        self.nodes.push(tensor);
        self.leaf.push(true);
        self.tracked.push(tracked);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<T>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, values)?))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0]
    }

    pub fn values(&self, v: Var) -> &[T] {
        self.nodes[v.0].values()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.tracked[v.0]
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        if self.leaf[v.0] {
            self.nodes[v.0].grad()
        } else {
            None
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.zero_grad();
        }
    }

    pub fn record_len(&self) -> usize {
        self.records.len()
    }

    pub fn kink_signature(&self) -> u64 {
        self.kinks.as_ref().map_or(0, |h| h.finish())
    }

    pub(crate) fn note_kinks(&mut self, tag: &str, signature: impl Hash) {
        if let Some(h) = &mut self.kinks {
            tag.hash(h);
            signature.hash(h);
        }
    }

    pub(crate) fn tracks_kinks(&self) -> bool {
        self.kinks.is_some()
    }

    pub(crate) fn push(&mut self, op: Op<T>, inputs: &[Var], output: Tensor<T>) -> Var {
        debug_assert!(output.is_finite() || !inputs.iter().all(|v| self.nodes[v.0].is_finite()));
        let tracked = self.recording && inputs.iter().any(|v| self.tracked[v.0]);
        self.nodes.push(output);
        self.leaf.push(false);
        self.tracked.push(tracked);
        let out = Var(self.nodes.len() - 1);
        if tracked {
            self.records.push(Record { op, inputs: inputs.to_vec(), output: out });
        }
        out
    }

    /// Runs a [`CustomOp`] forward and records it.
    pub fn custom(&mut self, op: Box<dyn CustomOp<T>>, inputs: &[Var]) -> Result<Var> {
        let out = {
            let refs: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0]).collect();
            let out = op.forward(&refs)?;
            if let Some(h) = &mut self.kinks {
                op.name().hash(h);
                op.kink_signature(&refs, &out).hash(h);
            }
            out
        };
        Ok(self.push(Op::Custom(op), inputs, out))
    }

    /// Reverse pass from a scalar loss.
    ///
    /// Every gradient-carrying leaf receives `d loss / d leaf` added to its
    /// gradient. The record is cleared afterwards; intermediate values stay
    /// readable but become constants.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        ensure!(
            self.nodes[loss.0].len() == 1,
            Shape,
            "backward needs a scalar loss, got shape {:?}",
            self.nodes[loss.0].shape()
        );
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        let records = std::mem::take(&mut self.records);
        for record in records.iter().rev() {
            let Some(grad_out) = grads[record.output.0].take() else {
                continue;
            };
            let needs: Vec<bool> = record.inputs.iter().map(|v| self.tracked[v.0]).collect();
            let contributions = self.backward_op(record, &grad_out, &needs);
            for ((input, contribution), needed) in record.inputs.iter().zip(contributions).zip(&needs) {
                let (Some(c), true) = (contribution, *needed) else {
                    continue;
                };
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a = *a + *b),
                    slot @ None => *slot = Some(c),
                }
            }
        }

        for (i, g) in grads.into_iter().enumerate() {
            if !self.leaf[i] {
                continue;
            }
            if let (Some(g), Some(acc)) = (g, self.nodes[i].grad_mut()) {
                acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b);
            }
        }
        for i in 0..self.nodes.len() {
            if !self.leaf[i] {
                self.tracked[i] = false;
            }
        }
        Ok(())
    }
}
