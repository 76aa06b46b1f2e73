//! Detection and localization metrics.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};

fn desc(a: &f64, b: &f64) -> Ordering {
    b.total_cmp(a)
}

/// Indices sorted by descending score, then the `[start, end)` runs of tied scores.
fn tie_groups(scores: &[f64]) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| desc(&scores[a], &scores[b]));
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        if i == order.len() || scores[order[i]] != scores[order[start]] {
            groups.push((start, i));
            start = i;
        }
    }
    (order, groups)
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { kind: "metric scores" });
    }
    Ok(())
}

/// Area under the ROC curve by a descending threshold sweep with
/// trapezoidal integration; tied scores count one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let (order, groups) = tie_groups(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    for (a, b) in groups {
        let (tp0, fp0) = (tp, fp);
        for &i in &order[a..b] {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
    }
    Ok(area / (pos as f64 * neg as f64))
}

/// `Σ (R_n − R_{n−1})·P_n` over descending unique thresholds.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, _) = class_counts(labels);
    if pos == 0 {
        return Err(Error::NoPositives);
    }
    let (order, groups) = tie_groups(scores);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    for (a, b) in groups {
        let tp0 = tp;
        for &i in &order[a..b] {
            tp += labels[i] as usize;
        }
        seen += b - a;
        if tp > tp0 {
            ap += (tp - tp0) as f64 / pos as f64 * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Connectivity {
    Four,
    Eight,
}

/// Labels the set pixels of a row-major `h×w` mask. Returns per-pixel labels
/// (0 = background, regions numbered from 1) and the region count.
pub fn connected_components(mask: &[bool], h: usize, w: usize, conn: Connectivity) -> (Vec<usize>, usize) {
    let mut labels = vec![0usize; h * w];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    if (dy == 0 && dx == 0) || (conn == Connectivity::Four && dy != 0 && dx != 0) {
                        continue;
                    }
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask[q] && labels[q] == 0 {
                        labels[q] = count;
                        stack.push(q);
                    }
                }
            }
        }
    }
    (labels, count)
}

/// One score map with its ground truth, both row-major `h×w`.
#[derive(Clone, Copy, Debug)]
pub struct MapView<'a> {
    pub scores: &'a [f64],
    pub mask: &'a [bool],
    pub height: usize,
    pub width: usize,
}

/// Region-overlap score: mean per-region coverage against global false
/// positive rate, integrated up to `fpr_limit` and normalized by it.
pub fn pro_score(maps: &[MapView<'_>], fpr_limit: f64, conn: Connectivity) -> Result<f64> {
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(Error::InvalidArgument("fpr_limit must lie in (0, 1]".into()));
    }
    // Every pixel: score, region id (global, 0 = normal).
    let mut scores = Vec::new();
    let mut region = Vec::new();
    let mut sizes = vec![0usize];
    for m in maps {
        if m.scores.len() != m.height * m.width || m.mask.len() != m.scores.len() {
            return Err(Error::InvalidArgument("map and mask extents differ".into()));
        }
        let (labels, n) = connected_components(m.mask, m.height, m.width, conn);
        let base = sizes.len() - 1;
        sizes.resize(base + n + 1, 0);
        for (&s, &l) in m.scores.iter().zip(&labels) {
            if !s.is_finite() {
                return Err(Error::NonFinite { kind: "metric scores" });
            }
            scores.push(s);
            let g = if l == 0 { 0 } else { base + l };
            sizes[g] += 1;
            region.push(g);
        }
    }
    let regions = sizes.len() - 1;
    if regions == 0 {
        return Err(Error::NoRegions);
    }
    let negatives = sizes[0];
    let (order, groups) = tie_groups(&scores);
    let mut covered = vec![0usize; sizes.len()];
    let mut fp = 0usize;
    let overlap = |covered: &[usize]| -> f64 {
        (1..sizes.len()).map(|r| covered[r] as f64 / sizes[r] as f64).sum::<f64>() / regions as f64
    };
    let (mut prev_fpr, mut prev_pro) = (0.0, 0.0);
    let mut area = 0.0;
    for (a, b) in groups {
        for &i in &order[a..b] {
            covered[region[i]] += 1;
            if region[i] == 0 {
                fp += 1;
            }
        }
        let fpr = if negatives == 0 { 0.0 } else { fp as f64 / negatives as f64 };
        let pro = overlap(&covered);
        if fpr >= fpr_limit {
            let t = if fpr > prev_fpr { (fpr_limit - prev_fpr) / (fpr - prev_fpr) } else { 0.0 };
            let at_limit = prev_pro + t * (pro - prev_pro);
            area += (fpr_limit - prev_fpr) * (prev_pro + at_limit) / 2.0;
            return Ok(area / fpr_limit);
        }
        area += (fpr - prev_fpr) * (prev_pro + pro) / 2.0;
        prev_fpr = fpr;
        prev_pro = pro;
    }
    // Only reachable without negatives: the curve ends at FPR 0.
    area += (fpr_limit - prev_fpr) * prev_pro;
    Ok(area / fpr_limit)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    /// Counts with `score ≥ threshold` predicted positive.
    pub fn at(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Self::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l) {
                (true, true) => c.tp += 1,
                (false, true) => c.fn_ += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

/// False negative rate `FN / (TP + FN)`.
pub fn fnr(c: &ConfusionCounts) -> Result<f64> {
    let p = c.tp + c.fn_;
    if p == 0 {
        return Err(Error::NoPositives);
    }
    Ok(c.fn_ as f64 / p as f64)
}

/// Score threshold maximizing `TPR − FPR`; the highest such threshold wins ties.
pub fn youden_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let (order, groups) = tie_groups(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for (a, b) in groups {
        for &i in &order[a..b] {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let j = tp as f64 / pos as f64 - fp as f64 / neg as f64;
        if j > best.0 {
            best = (j, scores[order[a]]);
        }
    }
    Ok(best.1)
}

/// Mean of the `k` largest values (all of them if fewer than `k`).
pub fn image_score(map: &[f64], k: usize) -> Result<f64> {
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be ≥ 1".into()));
    }
    let mut v = map.to_vec();
    let k = k.min(v.len());
    if k < v.len() {
        v.select_nth_unstable_by(k - 1, desc);
    }
    let top = &mut v[..k];
    top.sort_by(desc);
    Ok(top.iter().sum::<f64>() / k as f64)
}

/// Top-K count at a resolution: the reference 100 pixels at 1024², scaled
/// by pixel count, at least 5.
pub fn default_top_k(height: usize, width: usize) -> usize {
    let k = libm::round(100.0 * (height * width) as f64 / (1024.0 * 1024.0)) as usize;
    k.max(5)
}
