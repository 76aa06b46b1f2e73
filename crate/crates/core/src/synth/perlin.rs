use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::stream;

/// Parameters of the gradient-noise field that shapes anomaly masks.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct PerlinParams {
    pub octaves: u32,
    /// Inclusive range of the coarsest lattice cell size, in pixels.
    pub base_period_range: (usize, usize),
    pub persistence: f32,
    pub threshold: f32,
}

impl Default for PerlinParams {
    fn default() -> Self {
        Self {
            octaves: 2,
            base_period_range: (16, 32),
            persistence: 0.5,
            threshold: 0.5,
        }
    }
}

impl PerlinParams {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let (lo, hi) = self.base_period_range;
        if self.octaves < 1 || lo < 1 || lo > hi {
            return Err(Error::InvalidArgument("perlin: octaves ≥ 1 and 1 ≤ lo ≤ hi required".into()));
        }
        if !(self.persistence > 0.0 && self.persistence <= 1.0) {
            return Err(Error::InvalidArgument("perlin: persistence must be in (0, 1]".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument("perlin: threshold must be in (0, 1)".into()));
        }
        let extent = height.min(width);
        if hi > extent {
            return Err(Error::PeriodTooLarge { period: hi, extent });
        }
        Ok(())
    }
}

#[inline]
fn fade(t: f32) -> f32 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// One octave of gradient noise on a lattice of `period_y × period_x` cells,
/// accumulated into `out` with weight `amp`.
fn octave(out: &mut [f32], height: usize, width: usize, period_y: f32, period_x: f32, amp: f32, seed: u64) {
    let gy = libm::ceilf(height as f32 / period_y) as usize + 1;
    let gx = libm::ceilf(width as f32 / period_x) as usize + 1;
    let mut rng = stream(seed, 0x9e71);
    let grads: Vec<(f32, f32)> = (0..gy * gx)
        .map(|_| {
            let a = rng.random_range(0.0..core::f32::consts::TAU);
            (libm::cosf(a), libm::sinf(a))
        })
        .collect();
    for y in 0..height {
        let fy = y as f32 / period_y;
        let iy = fy as usize;
        let ty = fy - iy as f32;
        let v = fade(ty);
        for x in 0..width {
            let fx = x as f32 / period_x;
            let ix = fx as usize;
            let tx = fx - ix as f32;
            let u = fade(tx);
            let corner = |cy: usize, cx: usize, dy: f32, dx: f32| {
                let (g0, g1) = grads[cy * gx + cx];
                g0 * dx + g1 * dy
            };
            let n00 = corner(iy, ix, ty, tx);
            let n01 = corner(iy, ix + 1, ty, tx - 1.0);
            let n10 = corner(iy + 1, ix, ty - 1.0, tx);
            let n11 = corner(iy + 1, ix + 1, ty - 1.0, tx - 1.0);
            out[y * width + x] += amp * lerp(lerp(n00, n01, u), lerp(n10, n11, u), v);
        }
    }
}

/// Unnormalized multi-octave field and the base periods `(py, px)` drawn.
pub fn perlin_raw(height: usize, width: usize, params: &PerlinParams, seed: u64) -> Result<(Vec<f32>, (usize, usize))> {
    if height < 8 || width < 8 {
        return Err(Error::InvalidArgument("perlin: extents must be ≥ 8".into()));
    }
    params.validate(height, width)?;
    let mut rng = stream(seed, 0x93);
    let (lo, hi) = params.base_period_range;
    let py = rng.random_range(lo..=hi);
    let px = rng.random_range(lo..=hi);
    let mut field = vec![0.0f32; height * width];
    let mut amp = 1.0f32;
    for o in 0..params.octaves {
        let div = (1u32 << o) as f32;
        let (oy, ox) = ((py as f32 / div).max(1.0), (px as f32 / div).max(1.0));
        octave(&mut field, height, width, oy, ox, amp, crate::rng::derive(seed, o as u64 + 1));
        amp *= params.persistence;
    }
    Ok((field, (py, px)))
}

/// Gradient noise min-max normalized to `[0, 1]`. A constant field maps to 0.
pub fn perlin_noise(height: usize, width: usize, params: &PerlinParams, seed: u64) -> Result<Vec<f32>> {
    let (mut field, _) = perlin_raw(height, width, params, seed)?;
    let (mn, mx) = field
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = mx - mn;
    if span > 0.0 {
        field.iter_mut().for_each(|v| *v = ((*v - mn) / span).clamp(0.0, 1.0));
    } else {
        field.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_octave_vanishes_on_lattice() {
        let params = PerlinParams {
            octaves: 1,
            base_period_range: (8, 8),
            ..Default::default()
        };
        let (raw, (py, px)) = perlin_raw(32, 40, &params, 11).unwrap();
        for y in (0..32).step_by(py) {
            for x in (0..40).step_by(px) {
                assert_eq!(raw[y * 40 + x], 0.0);
            }
        }
    }

    #[test]
    fn deterministic_and_normalized() {
        let p = PerlinParams::default();
        let a = perlin_noise(64, 64, &p, 5).unwrap();
        let b = perlin_noise(64, 64, &p, 5).unwrap();
        assert_eq!(a, b);
        let mn = a.iter().copied().fold(f32::INFINITY, f32::min);
        let mx = a.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(mn, 0.0);
        assert_eq!(mx, 1.0);
        assert_ne!(a, perlin_noise(64, 64, &p, 6).unwrap());
    }

    #[test]
    fn period_larger_than_image_is_rejected() {
        let p = PerlinParams {
            base_period_range: (8, 40),
            ..Default::default()
        };
        assert_eq!(
            perlin_noise(32, 64, &p, 0),
            Err(Error::PeriodTooLarge { period: 40, extent: 32 })
        );
    }
}
