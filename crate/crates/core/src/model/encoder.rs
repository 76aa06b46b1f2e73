use alloc::format;

use super::layers::Ctx;
use super::{Binder, ModelConfig};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{NodeId, Tape};

/// Fixed input standardization for `[0, 1]` pixels.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

/// Patch-embedding transformer encoder: `(C, H, W)` image to `(N, dim)` tokens.
pub fn encode<T: Real>(
    tape: &mut Tape<T>,
    binder: &mut Binder<'_, T>,
    cfg: &ModelConfig,
    prefix: &str,
    depth: usize,
    image: NodeId,
) -> Result<NodeId> {
    let mut cx = Ctx { tape, binder };
    let p = cfg.patch_size;
    let shape = cx.tape.value(image).shape();
    for &e in &shape[1..] {
        if e % p != 0 {
            return Err(Error::IndivisibleExtent { extent: e, patch: p });
        }
    }
    let expected = [cfg.channels, cfg.image_size, cfg.image_size];
    if shape != expected {
        return Err(Error::ShapeMismatch {
            kind: "encode",
            shapes: alloc::vec![expected.to_vec(), shape.to_vec()],
        });
    }
    let centered = cx.tape.add_scalar(image, -PIXEL_MEAN)?;
    let scaled = cx.tape.scale(centered, 1.0 / PIXEL_STD)?;
    let grid = cx.conv(&format!("{prefix}.patch"), scaled, p, 0, 1)?;
    let dim = cx.tape.value(grid).shape()[0];
    let flat = cx.tape.reshape(grid, &[dim, cfg.tokens()])?;
    let tokens = cx.tape.transpose(flat)?;
    let pos = cx.p(&format!("{prefix}.pos.embed"))?;
    let mut x = cx.tape.add(tokens, pos)?;
    for b in 0..depth {
        let blk = format!("{prefix}.block{b}");
        let h = cx.norm(&format!("{blk}.norm1"), x)?;
        let a = cx.attention(&format!("{blk}.attn"), h, h, cfg.heads)?;
        x = cx.tape.add(x, a)?;
        let h = cx.norm(&format!("{blk}.norm2"), x)?;
        let m = cx.mlp(&blk, h)?;
        x = cx.tape.add(x, m)?;
    }
    cx.norm(&format!("{prefix}.final.norm"), x)
}
