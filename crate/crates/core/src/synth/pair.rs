use alloc::vec::Vec;

use rand::Rng as _;

use super::{blend_pseudo_anomaly, cutpaste, make_mask, perlin_noise, procedural_texture};
use super::{CutPasteMode, Image, ImageSample, Mask, PerlinParams, TextureFamily};
use crate::error::{Error, Result};
use crate::rng::{derive, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum SourceKind {
    ProceduralTextureBank,
    ImageDirectory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Generator {
    PerlinBlend,
    CutPastePatch,
    CutPasteScar,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct AnomalySpec {
    pub activation_prob: f64,
    /// Opacity β is drawn uniformly from this closed interval.
    pub beta_range: (f32, f32),
    pub source: SourceKind,
    pub generator: Generator,
}

impl Default for AnomalySpec {
    fn default() -> Self {
        Self {
            activation_prob: 0.5,
            beta_range: (0.15, 1.0),
            source: SourceKind::ProceduralTextureBank,
            generator: Generator::PerlinBlend,
        }
    }
}

impl AnomalySpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.activation_prob) {
            return Err(Error::InvalidConfig {
                key: "anomaly.activation_prob".into(),
                reason: "must lie in [0, 1]".into(),
            });
        }
        let (lo, hi) = self.beta_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::InvalidConfig {
                key: "anomaly.beta_range".into(),
                reason: "must be an interval inside [0, 1]".into(),
            });
        }
        Ok(())
    }
}

/// Where anomaly content `A` comes from.
#[derive(Clone, Debug)]
pub enum SourceBank {
    Procedural,
    Images(Vec<Image>),
}

impl SourceBank {
    fn draw(&self, like: &Image, seed: u64) -> Result<Image> {
        let mut rng = stream(seed, 0xa5);
        match self {
            SourceBank::Procedural => {
                let family = TextureFamily::ALL[rng.random_range(0..TextureFamily::ALL.len())];
                Ok(procedural_texture(family, like.channels(), like.height(), like.width(), rng.random()))
            }
            SourceBank::Images(images) => {
                if images.is_empty() {
                    return Err(Error::EmptySourceBank);
                }
                let img = &images[rng.random_range(0..images.len())];
                Ok(img.conformed(like.channels(), like.height(), like.width()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub clean: ImageSample,
    pub corrupted: ImageSample,
}

impl TrainingPair {
    pub fn activated(&self) -> bool {
        self.corrupted.label()
    }
}

const MASK_RETRIES: u64 = 8;

/// Draws a `(clean, corrupted)` pair from a normal sample. All randomness
/// (activation, β, mask, source) comes from `seed`.
pub fn sample_training_pair(
    normal: &ImageSample,
    spec: &AnomalySpec,
    params: &PerlinParams,
    bank: &SourceBank,
    seed: u64,
) -> Result<TrainingPair> {
    if normal.label() {
        return Err(Error::InvalidArgument("training pair source must be a normal sample".into()));
    }
    spec.validate()?;
    if spec.source == SourceKind::ImageDirectory {
        if let SourceBank::Images(v) = bank {
            if v.is_empty() {
                return Err(Error::EmptySourceBank);
            }
        } else {
            return Err(Error::EmptySourceBank);
        }
    }
    let mut rng = stream(seed, 0xb1);
    let activate = rng.random_bool(spec.activation_prob);
    let clean = normal.clone();
    if !activate {
        return Ok(TrainingPair {
            corrupted: clean.clone(),
            clean,
        });
    }
    let image = &normal.image;
    let (h, w) = (image.height(), image.width());
    for attempt in 0..=MASK_RETRIES {
        let sub = derive(seed, attempt + 1);
        let (corrupted, mask): (Image, Mask) = match spec.generator {
            Generator::PerlinBlend => {
                let noise = perlin_noise(h, w, params, sub)?;
                let mask = make_mask(&noise, h, w, params.threshold)?;
                if mask.is_empty() {
                    continue;
                }
                let source = bank.draw(image, derive(sub, 0xa))?;
                let (lo, hi) = spec.beta_range;
                let beta = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                (blend_pseudo_anomaly(image, &source, &mask, beta)?, mask)
            }
            Generator::CutPastePatch => cutpaste(image, CutPasteMode::Patch, sub)?,
            Generator::CutPasteScar => cutpaste(image, CutPasteMode::Scar, sub)?,
        };
        if mask.is_empty() {
            continue;
        }
        return Ok(TrainingPair {
            clean,
            corrupted: ImageSample::new(corrupted, mask)?,
        });
    }
    Ok(TrainingPair {
        corrupted: clean.clone(),
        clean,
    })
}
