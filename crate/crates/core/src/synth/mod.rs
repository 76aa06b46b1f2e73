//! Pseudo-anomaly synthesis and the procedural stand-in dataset.

mod blend;
mod cutpaste;
mod dataset;
mod pair;
mod perlin;
mod texture;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use blend::{blend_pseudo_anomaly, make_mask};
pub use cutpaste::{cutpaste, CutPasteMode};
pub use dataset::{make_synthetic_dataset, ClassKind, Dataset, DatasetSpec, TestSample};
pub use pair::{sample_training_pair, AnomalySpec, Generator, SourceBank, SourceKind, TrainingPair};
pub use perlin::{perlin_noise, perlin_raw, PerlinParams};
pub use texture::{procedural_texture, TextureFamily};

/// `C × H × W` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    /// Values are clamped to `[0, 1]`.
    pub fn new(channels: usize, height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        if channels * height * width != data.len() || data.is_empty() {
            return Err(Error::ShapeMismatch {
                kind: "image",
                shapes: vec![vec![channels, height, width], vec![data.len()]],
            });
        }
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value.clamp(0.0, 1.0); channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[self.channels, self.height, self.width], self.data.clone()).expect("consistent extents")
    }

    pub fn same_extent(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }
}

/// Binary `H × W` mask, 1 = anomalous.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height * width != data.len() || data.iter().any(|&v| v > 1) {
            return Err(Error::ShapeMismatch {
                kind: "mask",
                shapes: vec![vec![height, width], vec![data.len()]],
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn area(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn density(&self) -> f64 {
        self.area() as f64 / self.data.len() as f64
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[self.height, self.width], self.data.iter().map(|&v| v as f32).collect())
            .expect("consistent extents")
    }
}

/// An image with its ground-truth mask. `label` is derived from the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub image: Image,
    pub mask: Mask,
}

impl ImageSample {
    pub fn new(image: Image, mask: Mask) -> Result<Self> {
        if image.height != mask.height || image.width != mask.width {
            return Err(Error::ShapeMismatch {
                kind: "image_sample",
                shapes: vec![
                    vec![image.channels, image.height, image.width],
                    vec![mask.height, mask.width],
                ],
            });
        }
        Ok(Self { image, mask })
    }

    pub fn normal(image: Image) -> Self {
        let mask = Mask::zeros(image.height, image.width);
        Self { image, mask }
    }

    /// Image-level anomaly flag: set iff the mask has at least one pixel.
    pub fn label(&self) -> bool {
        !self.mask.is_empty()
    }
}

impl Image {
    /// Bilinear resize plus channel conversion (gray → RGB replicates,
    /// RGB → gray averages). Returns a clone when nothing changes.
    pub fn conformed(&self, channels: usize, height: usize, width: usize) -> Image {
        let resized = if self.height == height && self.width == width {
            self.clone()
        } else {
            let ty = crate::tensor::kernels::bilinear_axis(self.height, height);
            let tx = crate::tensor::kernels::bilinear_axis(self.width, width);
            let mut data = Vec::with_capacity(self.channels * height * width);
            for c in 0..self.channels {
                for &(y0, y1, wy) in &ty {
                    for &(x0, x1, wx) in &tx {
                        let (wy, wx) = (wy as f32, wx as f32);
                        let top = self.at(c, y0, x0) * (1.0 - wx) + self.at(c, y0, x1) * wx;
                        let bot = self.at(c, y1, x0) * (1.0 - wx) + self.at(c, y1, x1) * wx;
                        data.push(top * (1.0 - wy) + bot * wy);
                    }
                }
            }
            Image::new(self.channels, height, width, data).expect("consistent extents")
        };
        if resized.channels == channels {
            return resized;
        }
        let hw = height * width;
        let data: Vec<f32> = if resized.channels == 1 {
            (0..channels).flat_map(|_| resized.data.iter().copied()).collect()
        } else {
            let gray: Vec<f32> = (0..hw)
                .map(|p| (0..resized.channels).map(|c| resized.data[c * hw + p]).sum::<f32>() / resized.channels as f32)
                .collect();
            (0..channels).flat_map(|_| gray.iter().copied()).collect()
        };
        Image::new(channels, height, width, data).expect("consistent extents")
    }
}

#[cfg(test)]
mod tests;
