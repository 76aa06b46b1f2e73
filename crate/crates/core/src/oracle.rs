//! Brute-force reference implementations of the ranking and region
//! metrics. Quadratic or worse; meant for checking `metrics` on small inputs.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

/// Mann-Whitney statistic by explicit pair counting.
pub fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn unique_desc(scores: &[f64]) -> Vec<f64> {
    let mut t = scores.to_vec();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

/// AP from the PR point at every distinct threshold.
pub fn ap_enumerated(scores: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in unique_desc(scores) {
        let predicted: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = predicted.iter().filter(|&&i| labels[i]).count() as f64;
        let precision = tp / predicted.len() as f64;
        let recall = tp / pos;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// 8-connected regions by union-find, as lists of flat pixel indices.
pub fn regions(mask: &[bool], h: usize, w: usize) -> Vec<Vec<usize>> {
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut parent: Vec<usize> = (0..h * w).collect();
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            for (dy, dx) in [(0i64, 1i64), (1, -1), (1, 0), (1, 1)] {
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                if ny < h as i64 && nx >= 0 && nx < w as i64 && mask[ny as usize * w + nx as usize] {
                    let (a, b) = (find(&mut parent, y * w + x), find(&mut parent, ny as usize * w + nx as usize));
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..h * w {
        if mask[i] {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
    }
    groups.into_values().collect()
}

/// PRO from an explicit threshold sweep, looping over every region at
/// every distinct score.
pub fn pro_explicit(maps: &[(Vec<f64>, Vec<bool>)], h: usize, w: usize, limit: f64) -> f64 {
    let all: Vec<f64> = maps.iter().flat_map(|(s, _)| s.iter().copied()).collect();
    let regs: Vec<Vec<Vec<usize>>> = maps.iter().map(|(_, m)| regions(m, h, w)).collect();
    let n_regions: usize = regs.iter().map(|r| r.len()).sum();
    let negatives: usize = maps.iter().map(|(_, m)| m.iter().filter(|&&v| !v).count()).sum();
    let mut curve = vec![(0.0, 0.0)];
    for t in unique_desc(&all) {
        let mut fp = 0;
        let mut overlap = 0.0;
        for ((s, m), rs) in maps.iter().zip(&regs) {
            fp += (0..h * w).filter(|&i| !m[i] && s[i] >= t).count();
            for r in rs {
                overlap += r.iter().filter(|&&i| s[i] >= t).count() as f64 / r.len() as f64;
            }
        }
        curve.push((fp as f64 / negatives as f64, overlap / n_regions as f64));
    }
    let mut area = 0.0;
    for win in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (win[0], win[1]);
        if x0 >= limit {
            break;
        }
        if x1 > limit {
            let y = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y) / 2.0;
            break;
        }
        area += (x1 - x0) * (y0 + y1) / 2.0;
    }
    area / limit
}
