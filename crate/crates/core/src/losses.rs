//! Training objectives built on the tape.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{NodeId, Tape, Tensor};

/// Stabilizer inside the focal log.
pub const FOCAL_EPS: f64 = 1e-7;

/// `Σ_k mean(1 − cos(a_k, b_k))` over corresponding `(N, D)` feature rows.
pub fn cosine_distill<T: Real>(tape: &mut Tape<T>, a: &[NodeId], b: &[NodeId]) -> Result<NodeId> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument("cosine_distill needs matching non-empty layer lists".into()));
    }
    let mut terms = Vec::with_capacity(a.len());
    for (&x, &y) in a.iter().zip(b) {
        let sim = crate::model::cosine_maps(tape, x, y)?;
        let m = tape.mean(sim, None)?;
        terms.push(tape.rsub_scalar(1.0, m)?);
    }
    sum_all(tape, &terms)
}

/// Focal loss with `p = M·Mo + (1 − M)(1 − Mo)`:
/// `−mean((1 − p)^γ · ln(p + ε))`.
pub fn focal<T: Real>(tape: &mut Tape<T>, mask: NodeId, pred: NodeId, gamma: f64) -> Result<NodeId> {
    let agree = tape.mul(mask, pred)?;
    let one_m = tape.rsub_scalar(1.0, mask)?;
    let one_o = tape.rsub_scalar(1.0, pred)?;
    let disagree = tape.mul(one_m, one_o)?;
    let p = tape.add(agree, disagree)?;
    let shifted = tape.add_scalar(p, FOCAL_EPS)?;
    let logp = tape.log(shifted)?;
    let weighted = if gamma == 0.0 {
        logp
    } else {
        let q = tape.rsub_scalar(1.0, p)?;
        let w = tape.pow(q, gamma)?;
        tape.mul(w, logp)?
    };
    let m = tape.mean(weighted, None)?;
    tape.scale(m, -1.0)
}

/// Mean absolute error between mask and prediction.
pub fn l1<T: Real>(tape: &mut Tape<T>, mask: NodeId, pred: NodeId) -> Result<NodeId> {
    let d = tape.sub(mask, pred)?;
    let a = tape.abs(d)?;
    tape.mean(a, None)
}

/// Unweighted sum of scalar loss nodes.
pub fn sum_all<T: Real>(tape: &mut Tape<T>, terms: &[NodeId]) -> Result<NodeId> {
    let (&first, rest) = terms
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("no loss terms".into()))?;
    rest.iter().try_fold(first, |acc, &t| tape.add(acc, t))
}

/// Hard pseudo-label from a teacher map.
pub fn binarize<T: Real>(map: &Tensor<T>, threshold: f64) -> Tensor<T> {
    map.map(|v| if v.to_f64() >= threshold { T::ONE } else { T::ZERO })
}

/// Distillation on mask-style maps: focal against the binarized teacher map
/// plus L1 against the soft teacher map.
pub fn logit_distill<T: Real>(tape: &mut Tape<T>, teacher: NodeId, student: NodeId, gamma: f64) -> Result<NodeId> {
    let hard = binarize(tape.value(teacher), 0.5);
    let hard = tape.constant(hard);
    let f = focal(tape, hard, student, gamma)?;
    let l = l1(tape, teacher, student)?;
    tape.add(f, l)
}
