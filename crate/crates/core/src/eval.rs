//! Teacher-free evaluation over a labelled test set.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::metrics::{
    auroc, average_precision, default_top_k, fnr, image_score, pro_score, youden_threshold, ConfusionCounts,
    Connectivity, MapView,
};
use crate::model::Model;
use crate::real::Real;
use crate::synth::ImageSample;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct EvalOptions {
    /// Pixels averaged for the image score; `None` scales with resolution.
    pub top_k: Option<usize>,
    pub fpr_limit: f64,
    pub connectivity: Connectivity,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            top_k: None,
            fpr_limit: 0.3,
            connectivity: Connectivity::Eight,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub image_auroc: f64,
    pub pixel_auroc: f64,
    pub pro: f64,
    pub ap: f64,
    pub fnr: f64,
    /// Image-score threshold the FNR is reported at.
    pub threshold: f64,
}

/// Metrics of precomputed `H×W` maps against their samples' masks.
pub fn metrics_from_maps(maps: &[Vec<f64>], samples: &[&ImageSample], opts: &EvalOptions) -> Result<Metrics> {
    if maps.len() != samples.len() || maps.is_empty() {
        return Err(Error::InvalidArgument("one map per test sample required".into()));
    }
    let masks: Vec<Vec<bool>> = samples.iter().map(|s| s.mask.data().iter().map(|&m| m != 0).collect()).collect();
    let mut pix_scores = Vec::new();
    let mut pix_labels = Vec::new();
    let mut img_scores = Vec::with_capacity(maps.len());
    let mut img_labels = Vec::with_capacity(maps.len());
    let mut views = Vec::with_capacity(maps.len());
    for ((map, s), mask) in maps.iter().zip(samples).zip(&masks) {
        let (h, w) = (s.mask.height(), s.mask.width());
        if map.len() != h * w {
            return Err(Error::InvalidArgument("map extent differs from mask".into()));
        }
        let k = opts.top_k.unwrap_or_else(|| default_top_k(h, w));
        img_scores.push(image_score(map, k)?);
        img_labels.push(s.label());
        pix_scores.extend_from_slice(map);
        pix_labels.extend_from_slice(mask);
        views.push(MapView {
            scores: map,
            mask,
            height: h,
            width: w,
        });
    }
    if !img_labels.iter().any(|&l| l) {
        return Err(Error::NoPositives);
    }
    let threshold = youden_threshold(&img_scores, &img_labels)?;
    Ok(Metrics {
        image_auroc: auroc(&img_scores, &img_labels)?,
        pixel_auroc: auroc(&pix_scores, &pix_labels)?,
        pro: pro_score(&views, opts.fpr_limit, opts.connectivity)?,
        ap: average_precision(&pix_scores, &pix_labels)?,
        fnr: fnr(&ConfusionCounts::at(&img_scores, &img_labels, threshold))?,
        threshold,
    })
}

/// Anomaly maps for every sample, in order.
pub fn infer_all<T: Real>(model: &Model<T>, samples: &[&ImageSample]) -> Result<Vec<Tensor<T>>> {
    samples.iter().map(|s| model.anomaly_map(&s.image.to_tensor().cast())).collect()
}

pub fn evaluate<T: Real>(
    model: &Model<T>,
    samples: &[&ImageSample],
    opts: &EvalOptions,
) -> Result<(Metrics, Vec<Tensor<T>>)> {
    if !samples.iter().any(|s| s.label()) {
        return Err(Error::NoPositives);
    }
    let maps = infer_all(model, samples)?;
    let flat: Vec<Vec<f64>> = maps.iter().map(|m| m.data().iter().map(|v| v.to_f64()).collect()).collect();
    Ok((metrics_from_maps(&flat, samples, opts)?, maps))
}
