use alloc::vec;

use rand::Rng as _;

use super::{Image, Mask};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CutPasteMode {
    /// Random rectangle covering 2–15 % of the image, moved elsewhere.
    Patch,
    /// Thin rotated strip, 2–16 px wide and 10–25 % of the short side long.
    Scar,
}

/// Brightness and contrast jitter applied to pasted content.
fn jitter(rng: &mut Rng) -> (f32, f32) {
    (rng.random_range(-0.2..0.2), rng.random_range(0.7..1.3))
}

fn jittered(v: f32, (shift, gain): (f32, f32)) -> f32 {
    ((v - 0.5) * gain + 0.5 + shift).clamp(0.0, 1.0)
}

pub fn cutpaste(normal: &Image, mode: CutPasteMode, seed: u64) -> Result<(Image, Mask)> {
    let (c, h, w) = (normal.channels, normal.height, normal.width);
    if h < 16 || w < 16 {
        return Err(Error::InvalidArgument("cutpaste: image extent must be ≥ 16".into()));
    }
    let mut rng = stream(seed, 0xc7);
    let mut out = normal.data.clone();
    let mut mask = vec![0u8; h * w];
    let jit = jitter(&mut rng);
    match mode {
        CutPasteMode::Patch => {
            let area = rng.random_range(0.02..0.15) * (h * w) as f64;
            let aspect = libm::exp(rng.random_range(libm::log(0.3)..libm::log(1.0 / 0.3)));
            let ph = (libm::round(libm::sqrt(area * aspect)) as usize).clamp(1, h);
            let pw = (libm::round(libm::sqrt(area / aspect)) as usize).clamp(1, w);
            let (sy, sx) = (rng.random_range(0..=h - ph), rng.random_range(0..=w - pw));
            let (dy, dx) = (rng.random_range(0..=h - ph), rng.random_range(0..=w - pw));
            for ch in 0..c {
                for y in 0..ph {
                    for x in 0..pw {
                        let v = normal.at(ch, sy + y, sx + x);
                        out[(ch * h + dy + y) * w + dx + x] = jittered(v, jit);
                    }
                }
            }
            for y in 0..ph {
                for x in 0..pw {
                    mask[(dy + y) * w + dx + x] = 1;
                }
            }
        }
        CutPasteMode::Scar => {
            let short = h.min(w) as f32;
            let bound = 16.0 * 0.25 * short;
            let mut width = rng.random_range(2..=16usize) as f32;
            let length = rng.random_range(0.10 * short..=0.25 * short);
            let angle = rng.random_range(-core::f32::consts::FRAC_PI_4..core::f32::consts::FRAC_PI_4);
            let (cos, sin) = (libm::cosf(angle), libm::sinf(angle));
            let (cy, cx) = (rng.random_range(0.0..h as f32), rng.random_range(0.0..w as f32));
            let (sy, sx) = (rng.random_range(0.0..h as f32), rng.random_range(0.0..w as f32));
            loop {
                mask.iter_mut().for_each(|m| *m = 0);
                let reach = (length + width) * 0.5 + 1.0;
                let y0 = (cy - reach).max(0.0) as usize;
                let y1 = ((cy + reach) as usize).min(h - 1);
                let x0 = (cx - reach).max(0.0) as usize;
                let x1 = ((cx + reach) as usize).min(w - 1);
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let (ry, rx) = (y as f32 + 0.5 - cy, x as f32 + 0.5 - cx);
                        // strip-local coordinates: u along the length, v across
                        let u = cos * rx + sin * ry;
                        let v = -sin * rx + cos * ry;
                        if u.abs() < length * 0.5 && v.abs() < width * 0.5 {
                            mask[y * w + x] = 1;
                            let srcy = ((sy + v) as isize).clamp(0, h as isize - 1) as usize;
                            let srcx = ((sx + u) as isize).clamp(0, w as isize - 1) as usize;
                            for ch in 0..c {
                                out[(ch * h + y) * w + x] = jittered(normal.at(ch, srcy, srcx), jit);
                            }
                        }
                    }
                }
                let area = mask.iter().filter(|&&m| m == 1).count() as f32;
                if area <= bound || width <= 1.0 {
                    break;
                }
                width -= 1.0;
                out.copy_from_slice(&normal.data);
            }
        }
    }
    Ok((Image::new(c, h, w, out)?, Mask::new(h, w, mask)?))
}
