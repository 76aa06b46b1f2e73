use std::path::Path;

use serde::{Deserialize, Serialize};
use stlm_core::eval::Metrics;

use crate::error::{IoContext, Result, StlmError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub image_auroc: f64,
    pub pixel_auroc: f64,
    pub pro: f64,
    pub ap: f64,
    pub fnr: f64,
    /// Image-score operating point used for `fnr`.
    pub threshold: f64,
    pub top_k: usize,
    pub n_test: usize,
    pub n_defective: usize,
}

impl ClassMetrics {
    pub fn new(class: &str, m: &Metrics, top_k: usize, n_test: usize, n_defective: usize) -> Self {
        Self {
            class: class.into(),
            image_auroc: m.image_auroc,
            pixel_auroc: m.pixel_auroc,
            pro: m.pro,
            ap: m.ap,
            fnr: m.fnr,
            threshold: m.threshold,
            top_k,
            n_test,
            n_defective,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub class: String,
    pub id: String,
    pub label: bool,
    pub score: f64,
}

/// Evaluation result. Top-level metrics are means over classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub image_auroc: f64,
    pub pixel_auroc: f64,
    pub pro: f64,
    pub ap: f64,
    pub fnr: f64,
    pub per_class: Vec<ClassMetrics>,
    pub images: Vec<ImageScore>,
    pub config_digest: String,
    pub seed: u64,
}

impl MetricsReport {
    pub fn from_classes(per_class: Vec<ClassMetrics>, images: Vec<ImageScore>, config_digest: String, seed: u64) -> Self {
        let n = per_class.len().max(1) as f64;
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
        Self {
            image_auroc: mean(|c| c.image_auroc),
            pixel_auroc: mean(|c| c.pixel_auroc),
            pro: mean(|c| c.pro),
            ap: mean(|c| c.ap),
            fnr: mean(|c| c.fnr),
            per_class,
            images,
            config_digest,
            seed,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("report serializes")).at(path)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text).map_err(|e| StlmError::format(path, e.to_string()))
    }

    /// One row per class.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.per_class)
    }
}

pub fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| StlmError::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| StlmError::format(path, e.to_string()))?;
    }
    w.flush().at(path)
}
