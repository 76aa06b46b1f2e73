//! Seeded procedural textures used as the anomaly source bank.

use alloc::vec::Vec;

use rand::Rng as _;

use super::Image;
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextureFamily {
    Sinusoid,
    Cells,
    Gradient,
}

impl TextureFamily {
    pub const ALL: [TextureFamily; 3] = [TextureFamily::Sinusoid, TextureFamily::Cells, TextureFamily::Gradient];
}

pub fn procedural_texture(family: TextureFamily, channels: usize, height: usize, width: usize, seed: u64) -> Image {
    let mut rng = stream(seed, 0x7e);
    let lo: Vec<f32> = (0..channels).map(|_| rng.random_range(0.0..1.0)).collect();
    let hi: Vec<f32> = (0..channels).map(|_| rng.random_range(0.0..1.0)).collect();
    let hw = height * width;
    let mut data = alloc::vec![0.0f32; channels * hw];
    match family {
        TextureFamily::Sinusoid => {
            let theta = rng.random_range(0.0..core::f32::consts::PI);
            let freq = rng.random_range(0.05..0.4);
            let phase = rng.random_range(0.0..core::f32::consts::TAU);
            let theta2 = rng.random_range(0.0..core::f32::consts::PI);
            let freq2 = rng.random_range(0.05..0.4);
            let (c1, s1) = (libm::cosf(theta), libm::sinf(theta));
            let (c2, s2) = (libm::cosf(theta2), libm::sinf(theta2));
            for y in 0..height {
                for x in 0..width {
                    let (fy, fx) = (y as f32, x as f32);
                    let a = libm::sinf(freq * (c1 * fx + s1 * fy) + phase);
                    let b = libm::sinf(freq2 * (c2 * fx + s2 * fy));
                    let t = 0.5 + 0.35 * a + 0.15 * b;
                    for c in 0..channels {
                        data[c * hw + y * width + x] = lo[c] + (hi[c] - lo[c]) * t;
                    }
                }
            }
        }
        TextureFamily::Cells => {
            let n = rng.random_range(6..24);
            let points: Vec<(f32, f32)> = (0..n)
                .map(|_| (rng.random_range(0.0..height as f32), rng.random_range(0.0..width as f32)))
                .collect();
            let colors: Vec<Vec<f32>> = (0..n)
                .map(|_| (0..channels).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            for y in 0..height {
                for x in 0..width {
                    let (mut best, mut second, mut idx) = (f32::INFINITY, f32::INFINITY, 0);
                    for (i, &(py, px)) in points.iter().enumerate() {
                        let d = (py - y as f32) * (py - y as f32) + (px - x as f32) * (px - x as f32);
                        if d < best {
                            second = best;
                            best = d;
                            idx = i;
                        } else if d < second {
                            second = d;
                        }
                    }
                    let edge = ((libm::sqrtf(second) - libm::sqrtf(best)) / 3.0).min(1.0);
                    for c in 0..channels {
                        data[c * hw + y * width + x] = colors[idx][c] * (0.6 + 0.4 * edge);
                    }
                }
            }
        }
        TextureFamily::Gradient => {
            let theta = rng.random_range(0.0..core::f32::consts::TAU);
            let (ct, st) = (libm::cosf(theta), libm::sinf(theta));
            let ripple = rng.random_range(0.2..0.8);
            let diag = (height + width) as f32;
            for y in 0..height {
                for x in 0..width {
                    let t = ((ct * x as f32 + st * y as f32) / diag + 0.5).clamp(0.0, 1.0);
                    let r = 0.1 * libm::sinf(ripple * (x as f32 + y as f32));
                    for c in 0..channels {
                        data[c * hw + y * width + x] = lo[c] + (hi[c] - lo[c]) * t + r;
                    }
                }
            }
        }
    }
    Image::new(channels, height, width, data).expect("consistent extents")
}
