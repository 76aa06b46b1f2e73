use alloc::format;

use super::Binder;
use crate::error::Result;
use crate::real::Real;
use crate::tensor::{NodeId, Tape};

pub(crate) struct Ctx<'t, 'b, 'a, T> {
    pub tape: &'t mut Tape<T>,
    pub binder: &'b mut Binder<'a, T>,
}

impl<'t, 'b, 'a, T: Real> Ctx<'t, 'b, 'a, T> {
    pub fn p(&mut self, name: &str) -> Result<NodeId> {
        self.binder.param(self.tape, name)
    }

    pub fn linear(&mut self, prefix: &str, x: NodeId) -> Result<NodeId> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let b = self.p(&format!("{prefix}.bias"))?;
        self.tape.linear(x, w, b)
    }

    /// Layer norm over the last axis of `(rows, d)`.
    pub fn norm(&mut self, prefix: &str, x: NodeId) -> Result<NodeId> {
        let g = self.p(&format!("{prefix}.gamma"))?;
        let b = self.p(&format!("{prefix}.beta"))?;
        self.tape.layer_norm(x, Some((g, b)))
    }

    pub fn conv(&mut self, prefix: &str, x: NodeId, stride: usize, padding: usize, dilation: usize) -> Result<NodeId> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let b = self.p(&format!("{prefix}.bias"))?;
        self.tape.conv2d(x, w, Some(b), stride, padding, dilation)
    }

    /// Multi-head attention with queries from `x` and keys/values from `ctx`.
    pub fn attention(&mut self, prefix: &str, x: NodeId, ctx: NodeId, heads: usize) -> Result<NodeId> {
        let q = self.linear(&format!("{prefix}.q"), x)?;
        let k = self.linear(&format!("{prefix}.k"), ctx)?;
        let v = self.linear(&format!("{prefix}.v"), ctx)?;
        let a = self.tape.attention(q, k, v, heads)?;
        self.linear(&format!("{prefix}.o"), a)
    }

    pub fn mlp(&mut self, prefix: &str, x: NodeId) -> Result<NodeId> {
        let h = self.linear(&format!("{prefix}.mlp1"), x)?;
        let h = self.tape.gelu(h)?;
        self.linear(&format!("{prefix}.mlp2"), h)
    }
}
