use alloc::vec::Vec;

use super::ops::{self, Primitive, Saved};
use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Record<T> {
    pub prim: Primitive,
    pub inputs: Vec<NodeId>,
    pub saved: Saved<T>,
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub requires_grad: bool,
    pub record: Option<Record<T>>,
}

/// Append-only computation record. Node ids are indices, so every input
/// precedes its output.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) grad_fault: Option<&'static str>,
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
            grad_fault: None,
        }
    }

    /// Corrupts the backward rule of the named primitive (scales its input
    /// gradients by 1.5). Used to prove the gradient suite catches errors.
    #[doc(hidden)]
    pub fn inject_grad_fault(&mut self, primitive: &'static str) {
        self.grad_fault = Some(primitive);
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, false, None)
    }

    /// A leaf that accumulates gradients.
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, true, None)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(T::from_f64(value)))
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, record: Option<Record<T>>) -> NodeId {
        self.nodes.push(Node {
            value,
            requires_grad,
            record,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 < self.nodes.len()
    }

    /// Number of recorded (differentiable) entries.
    pub fn recorded(&self) -> usize {
        self.nodes.iter().filter(|n| n.record.is_some()).count()
    }

    /// `(primitive, inputs, output)` for every recorded entry, in order.
    pub fn entries(&self) -> impl Iterator<Item = (&Primitive, &[NodeId], NodeId)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| {
            n.record
                .as_ref()
                .map(|r| (&r.prim, r.inputs.as_slice(), NodeId(i)))
        })
    }

    pub fn apply(&mut self, prim: Primitive, inputs: &[NodeId]) -> Result<NodeId> {
        if let Some(bad) = inputs.iter().find(|id| !self.contains(**id)) {
            return Err(Error::UnknownNode(bad.0));
        }
        let values: Vec<&Tensor<T>> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
        let (out, saved) = ops::forward(&prim, &values)?;
        if !out.all_finite() {
            return Err(Error::NonFinite { kind: prim.name() });
        }
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        let record = requires_grad.then(|| Record {
            prim,
            inputs: inputs.to_vec(),
            saved,
        });
        Ok(self.push(out, requires_grad, record))
    }

    /// Recomputes every recorded entry from its inputs and reports whether
    /// all outputs match bitwise.
    pub fn replay_matches(&self) -> Result<bool> {
        for node in &self.nodes {
            if let Some(rec) = &node.record {
                let values: Vec<&Tensor<T>> =
                    rec.inputs.iter().map(|id| &self.nodes[id.0].value).collect();
                let (out, _) = ops::forward(&rec.prim, &values)?;
                let same = out.shape() == node.value.shape()
                    && out
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .all(|(a, b)| a.to_f64().to_bits() == b.to_f64().to_bits());
                if !same {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Div, &[a, b])
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    /// `x·w + bias` with `bias` broadcast over rows.
    pub fn linear(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> Result<NodeId> {
        self.apply(Primitive::MatMul, &[x, w, bias])
    }
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<NodeId> {
        let prim = Primitive::Conv2d {
            stride,
            padding,
            dilation,
        };
        match bias {
            Some(b) => self.apply(prim, &[x, w, b]),
            None => self.apply(prim, &[x, w]),
        }
    }
    pub fn layer_norm(&mut self, x: NodeId, affine: Option<(NodeId, NodeId)>) -> Result<NodeId> {
        let prim = Primitive::LayerNorm { eps: 1e-5 };
        match affine {
            Some((g, b)) => self.apply(prim, &[x, g, b]),
            None => self.apply(prim, &[x]),
        }
    }
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Softmax, &[x])
    }
    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Gelu, &[x])
    }
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Relu, &[x])
    }
    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sigmoid, &[x])
    }
    pub fn resize(&mut self, x: NodeId, height: usize, width: usize) -> Result<NodeId> {
        self.apply(Primitive::BilinearResize { height, width }, &[x])
    }
    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        self.apply(Primitive::Concat { axis }, xs)
    }
    pub fn mean(&mut self, x: NodeId, axis: Option<usize>) -> Result<NodeId> {
        self.apply(Primitive::Mean { axis }, &[x])
    }
    pub fn sum(&mut self, x: NodeId, axis: Option<usize>) -> Result<NodeId> {
        self.apply(Primitive::Sum { axis }, &[x])
    }
    pub fn l2_normalize(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.apply(Primitive::L2Normalize { axis }, &[x])
    }
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Transpose, &[x])
    }
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.value(x).shape() == shape {
            return Ok(x);
        }
        self.apply(
            Primitive::Reshape {
                shape: shape.to_vec(),
            },
            &[x],
        )
    }
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> Result<NodeId> {
        self.apply(Primitive::ScaledDotAttention { heads }, &[q, k, v])
    }
    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Log, &[x])
    }
    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Abs, &[x])
    }
    pub fn pow(&mut self, x: NodeId, exponent: f64) -> Result<NodeId> {
        self.apply(Primitive::Pow { exponent }, &[x])
    }
    pub fn channel_affine(&mut self, x: NodeId, scale: NodeId, shift: NodeId) -> Result<NodeId> {
        self.apply(Primitive::ChannelAffine, &[x, scale, shift])
    }
    /// `c·x` for a constant `c`.
    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let s = self.scalar(c);
        self.mul(x, s)
    }
    /// `c − x` for a constant `c`.
    pub fn rsub_scalar(&mut self, c: f64, x: NodeId) -> Result<NodeId> {
        let s = self.scalar(c);
        self.sub(s, x)
    }
    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let s = self.scalar(c);
        self.add(x, s)
    }
}
