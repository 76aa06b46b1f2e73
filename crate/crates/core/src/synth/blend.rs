use alloc::vec;
use alloc::vec::Vec;

use super::{Image, Mask};
use crate::error::{Error, Result};

/// `M(i,j) = 1` iff `noise(i,j) > threshold`.
pub fn make_mask(noise: &[f32], height: usize, width: usize, threshold: f32) -> Result<Mask> {
    Mask::new(
        height,
        width,
        noise.iter().map(|&v| (v > threshold) as u8).collect::<Vec<u8>>(),
    )
}

/// `I = M̄⊙N + (1−β)(M⊙A) + β(M⊙N)` per channel, clamped to `[0, 1]`.
pub fn blend_pseudo_anomaly(normal: &Image, source: &Image, mask: &Mask, beta: f32) -> Result<Image> {
    if !normal.same_extent(source) || normal.height != mask.height() || normal.width != mask.width() {
        return Err(Error::ShapeMismatch {
            kind: "blend_pseudo_anomaly",
            shapes: vec![
                vec![normal.channels, normal.height, normal.width],
                vec![source.channels, source.height, source.width],
                vec![mask.height(), mask.width()],
            ],
        });
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument("blend: beta must be in [0, 1]".into()));
    }
    let hw = normal.height * normal.width;
    let mut out = Vec::with_capacity(normal.data.len());
    for c in 0..normal.channels {
        for p in 0..hw {
            let n = normal.data[c * hw + p];
            let a = source.data[c * hw + p];
            let m = mask.data()[p] as f32;
            out.push((1.0 - m) * n + (1.0 - beta) * (m * a) + beta * (m * n));
        }
    }
    Image::new(normal.channels, normal.height, normal.width, out)
}
