use alloc::vec::Vec;

use super::{FaInputMode, ModelConfig};
use crate::error::Result;
use crate::real::Real;
use crate::tensor::{NodeId, Tape};

/// Per-layer cosine similarity maps between two feature pyramids.
pub struct SimilarityMaps {
    /// One `(N,)` map per selected layer.
    pub per_layer: Vec<NodeId>,
}

/// Cosine similarity of corresponding `(N, D)` rows.
pub fn cosine_maps<T: Real>(tape: &mut Tape<T>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let na = tape.l2_normalize(a, 1)?;
    let nb = tape.l2_normalize(b, 1)?;
    let prod = tape.mul(na, nb)?;
    tape.sum(prod, Some(1))
}

pub fn similarity_maps<T: Real>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    a: &[NodeId],
    b: &[NodeId],
) -> Result<SimilarityMaps> {
    let per_layer = cfg
        .layers_used
        .indices()
        .map(|k| cosine_maps(tape, a[k], b[k]))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityMaps { per_layer })
}

fn to_grid<T: Real>(tape: &mut Tape<T>, cfg: &ModelConfig, tokens: NodeId) -> Result<NodeId> {
    let g = cfg.grid();
    let t = tape.transpose(tokens)?;
    let d = tape.value(t).shape()[0];
    tape.reshape(t, &[d, g, g])
}

/// Builds the `(C_in, h, w)` FA input from the two streams' decoder
/// layers. All layers share the token grid, so no resampling is needed.
pub fn fa_input<T: Real>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    plain: &[NodeId],
    denoising: &[NodeId],
) -> Result<NodeId> {
    let g = cfg.grid();
    let mut parts = Vec::new();
    for k in cfg.layers_used.indices() {
        match cfg.fa_input_mode {
            FaInputMode::Product | FaInputMode::Cosine => {
                let x = cosine_maps(tape, plain[k], denoising[k])?;
                let x = match cfg.fa_input_mode {
                    FaInputMode::Cosine => tape.rsub_scalar(1.0, x)?,
                    _ => x,
                };
                parts.push(tape.reshape(x, &[1, g, g])?);
            }
            FaInputMode::ResidualConcat => {
                let diff = tape.sub(plain[k], denoising[k])?;
                let sq = tape.mul(diff, diff)?;
                let ss = tape.sum(sq, Some(1))?;
                let ss = tape.add_scalar(ss, 1e-12)?;
                let dist = tape.pow(ss, 0.5)?;
                parts.push(tape.reshape(dist, &[1, g, g])?);
                parts.push(to_grid(tape, cfg, plain[k])?);
            }
            FaInputMode::Concat => {
                parts.push(to_grid(tape, cfg, plain[k])?);
                parts.push(to_grid(tape, cfg, denoising[k])?);
            }
        }
    }
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        tape.concat(&parts, 0)
    }
}
