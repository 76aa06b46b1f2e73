use alloc::format;
use alloc::vec::Vec;

use super::layers::Ctx;
use super::{Binder, ModelConfig};
use crate::error::Result;
use crate::real::Real;
use crate::tensor::{NodeId, Tape};

/// Two-way decoder over `(N, D)` image tokens. Returns the image tokens
/// after each block and the final query tokens.
pub fn decode<T: Real>(
    tape: &mut Tape<T>,
    binder: &mut Binder<'_, T>,
    cfg: &ModelConfig,
    prefix: &str,
    tokens: NodeId,
) -> Result<(Vec<NodeId>, NodeId)> {
    let mut cx = Ctx { tape, binder };
    let heads = cfg.heads;
    let mut q = cx.p(&format!("{prefix}.queries.embed"))?;
    let mut k = tokens;
    let mut layers = Vec::with_capacity(cfg.decoder_layers);
    for b in 0..cfg.decoder_layers {
        let blk = format!("{prefix}.block{b}");
        let a = cx.attention(&format!("{blk}.self_attn"), q, q, heads)?;
        let s = cx.tape.add(q, a)?;
        q = cx.norm(&format!("{blk}.norm1"), s)?;
        let a = cx.attention(&format!("{blk}.to_image"), q, k, heads)?;
        let s = cx.tape.add(q, a)?;
        q = cx.norm(&format!("{blk}.norm2"), s)?;
        let m = cx.mlp(&blk, q)?;
        let s = cx.tape.add(q, m)?;
        q = cx.norm(&format!("{blk}.norm3"), s)?;
        let a = cx.attention(&format!("{blk}.to_tokens"), k, q, heads)?;
        let s = cx.tape.add(k, a)?;
        k = cx.norm(&format!("{blk}.norm4"), s)?;
        layers.push(k);
    }
    Ok((layers, q))
}
