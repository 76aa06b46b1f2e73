//! Central finite-difference verification of analytic gradients (64-bit).

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;

use super::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::stream;

pub const FD_STEP: f64 = 1e-5;
pub const DEFAULT_REL_TOL: f64 = 1e-4;
/// Differences below this are treated as exact agreement.
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct InputError {
    pub input: usize,
    pub max_rel_err: f64,
    pub probes: usize,
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub per_input: Vec<InputError>,
    pub rel_tol: f64,
}

impl CheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_input.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() <= self.rel_tol
    }
}

/// `|a − n| / max(|a|, |n|, ABS_FLOOR)`: relative away from zero,
/// absolute (scaled by the floor) near it.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    diff / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// How many coordinates of each input are probed. `None` probes all.
#[derive(Clone, Copy, Debug, Default)]
pub struct Probes(pub Option<usize>);

/// Checks `builder` at explicit inputs. All inputs are treated as variables.
pub fn grad_check_at<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    builder: F,
    rel_tol: f64,
    probes: Probes,
    seed: u64,
) -> Result<CheckReport>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    check_with_fault(name, inputs, builder, rel_tol, probes, seed, None)
}

#[doc(hidden)]
pub fn check_with_fault<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    builder: F,
    rel_tol: f64,
    probes: Probes,
    seed: u64,
    fault: Option<&'static str>,
) -> Result<CheckReport>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = vals.iter().map(|t| tape.variable(t.clone())).collect();
        let out = builder(&mut tape, &ids)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(Error::NonFinite { kind: "grad_check builder" });
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    if let Some(f) = fault {
        tape.inject_grad_fault(f);
    }
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = builder(&mut tape, &ids)?;
    if !tape.value(out).item().is_finite() {
        return Err(Error::NonFinite { kind: "grad_check builder" });
    }
    let grads = tape.backward(out)?;

    let mut rng = stream(seed, 0x9c);
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, id) in ids.iter().enumerate() {
        let n = inputs[i].numel();
        let coords: Vec<usize> = match probes.0 {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let zero = Tensor::zeros(inputs[i].shape());
        let analytic = grads.get(*id).unwrap_or(&zero);
        let mut worst: f64 = 0.0;
        for &c in &coords {
            let orig = work[i].data()[c];
            work[i].data_mut()[c] = orig + FD_STEP;
            let up = eval(&work)?;
            work[i].data_mut()[c] = orig - FD_STEP;
            let down = eval(&work)?;
            work[i].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[c], numeric));
        }
        per_input.push(InputError {
            input: i,
            max_rel_err: worst,
            probes: coords.len(),
        });
    }
    Ok(CheckReport {
        name: String::from(name),
        per_input,
        rel_tol,
    })
}

/// Checks `builder` on inputs of the given shapes drawn uniformly from
/// `[-1, 1]` with `seed`.
pub fn grad_check<F>(name: &str, shapes: &[&[usize]], builder: F, seed: u64, rel_tol: f64) -> Result<CheckReport>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut rng = stream(seed, 0x5eed);
    let inputs: Vec<Tensor<f64>> = shapes
        .iter()
        .map(|s| Tensor::from_fn(s, |_| rng.random_range(-1.0..1.0)))
        .collect();
    grad_check_at(name, &inputs, builder, rel_tol, Probes(None), seed)
}
