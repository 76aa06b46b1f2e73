//! Inner loops shared by forward and backward rules.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

/// `c (m×n) {=, +=} a (m×k) · b (k×n)`, all row-major.
pub fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if !accumulate {
        c.iter_mut().for_each(|v| *v = T::ZERO);
    }
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == T::ZERO {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// Row-major transpose of an `rows × cols` matrix.
pub fn transpose<T: Real>(rows: usize, cols: usize, src: &[T]) -> Vec<T> {
    let mut out = vec![T::ZERO; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> Option<(usize, usize)> {
        let span_h = self.dilation * (self.kh - 1) + 1;
        let span_w = self.dilation * (self.kw - 1) + 1;
        let ph = self.height + 2 * self.padding;
        let pw = self.width + 2 * self.padding;
        if span_h > ph || span_w > pw || self.stride == 0 {
            return None;
        }
        Some(((ph - span_h) / self.stride + 1, (pw - span_w) / self.stride + 1))
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, Option<usize>)) {
        let (oh, ow) = self.out_hw().expect("validated geometry");
        let cols = oh * ow;
        for c in 0..self.channels {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky * self.dilation) as isize - self.padding as isize;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx * self.dilation) as isize - self.padding as isize;
                            let src = if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.height
                                && (ix as usize) < self.width
                            {
                                Some((c * self.height + iy as usize) * self.width + ix as usize)
                            } else {
                                None
                            };
                            f(row * cols + oy * ow + ox, row, src);
                        }
                    }
                }
            }
        }
    }
}

/// Unfold `(C, H, W)` into `(C·kh·kw, OH·OW)` columns.
pub fn im2col<T: Real>(g: &ConvGeom, x: &[T]) -> Vec<T> {
    let (oh, ow) = g.out_hw().expect("validated geometry");
    let mut cols = vec![T::ZERO; g.channels * g.kh * g.kw * oh * ow];
    g.for_each_tap(|dst, _, src| {
        if let Some(s) = src {
            cols[dst] = x[s];
        }
    });
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back to `(C, H, W)`.
pub fn col2im<T: Real>(g: &ConvGeom, cols: &[T]) -> Vec<T> {
    let mut x = vec![T::ZERO; g.channels * g.height * g.width];
    g.for_each_tap(|dst, _, src| {
        if let Some(s) = src {
            x[s] += cols[dst];
        }
    });
    x
}

/// Half-pixel bilinear sampling table for one axis: `(lo, hi, weight_hi)`.
pub fn bilinear_axis(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (libm::floor(src) as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let w = if hi == lo { 0.0 } else { src - lo as f64 };
            (lo, hi, w)
        })
        .collect()
}

/// Dot product with a fixed eight-lane reduction order.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::ZERO; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let o = c * 8;
        for l in 0..8 {
            acc[l] += a[o + l] * b[o + l];
        }
    }
    let mut tail = T::ZERO;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
