//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod grad;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random probability vector of length `k`; `spikiness` > 1 concentrates mass.
pub fn random_probs(rng: &mut ChaCha8Rng, k: usize, spikiness: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k)
        .map(|_| rng.random_range(0.0f64..1.0).powf(spikiness))
        .collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return vec![1.0 / k as f64; k];
    }
    raw.iter().map(|v| v / total).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Lowest index among the maxima.
pub fn first_argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Tries every prefix length k of the ascending non-target order and keeps
/// the largest whose mass fits under the maximum.
pub fn negatives_oracle(p: &[f64]) -> BTreeSet<usize> {
    let target = first_argmax(p);
    let mut order: Vec<usize> = (0..p.len()).filter(|&c| c != target).collect();
    // insertion sort: stable, ties keep index order
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && p[order[j - 1]] > p[order[j]] {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let max = p[target];
    let mut best_k = 0;
    for k in 0..=order.len() {
        let mass: f64 = order[..k].iter().map(|&c| p[c]).sum();
        if mass <= max {
            best_k = k;
        }
    }
    order[..best_k].iter().copied().collect()
}

pub fn positives_oracle(p: &[f64], negatives: &BTreeSet<usize>, lambda: f64) -> BTreeSet<usize> {
    let target = first_argmax(p);
    let max = p[target];
    (0..p.len())
        .filter(|&c| c != target && !negatives.contains(&c) && p[c] >= lambda * max)
        .collect()
}

/// Per-coordinate comparison of an analytic gradient with a numeric one.
/// Returns the first offending coordinate, if any.
pub fn compare_gradients(
    analytic: &[f64],
    numeric: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> Option<(usize, f64, f64)> {
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .find(|(_, (a, n))| {
            let diff = (*a - *n).abs();
            let scale = a.abs().max(n.abs());
            diff > abs_tol && diff > rel_tol * scale
        })
        .map(|(i, (a, n))| (i, *a, *n))
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Scene element for the mAP oracle: (video, start, end, score).
pub type Span = (usize, usize, usize, f64);

fn iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    let inter = if hi >= lo { (hi - lo + 1) as f64 } else { 0.0 };
    inter / ((a.1 - a.0 + 1) as f64 + (b.1 - b.0 + 1) as f64 - inter)
}

/// Average precision for one class by explicit enumeration of the
/// precision-recall points. Detections are ranked by score, ties by
/// (video, start, end); each detection claims the unmatched ground truth
/// with the highest overlap. AP sums, over every rank where recall grows,
/// the recall increment times the best precision at that rank or later.
pub fn average_precision_oracle(dets: &[Span], truth: &[(usize, usize, usize)], threshold: f64) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let mut ranked: Vec<Span> = dets.to_vec();
    ranked.sort_by(|a, b| {
        b.3.partial_cmp(&a.3)
            .unwrap()
            .then((a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)))
    });
    let mut used = vec![false; truth.len()];
    let mut points = Vec::new(); // (precision, recall)
    let mut tp = 0;
    for (rank, d) in ranked.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, t) in truth.iter().enumerate() {
            if used[g] || t.0 != d.0 {
                continue;
            }
            let o = iou((d.1, d.2), (t.1, t.2));
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, o)) = best {
            if o >= threshold {
                used[g] = true;
                tp += 1;
            }
        }
        points.push((tp as f64 / (rank + 1) as f64, tp as f64 / truth.len() as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..points.len() {
        let recall = points[i].1;
        if recall > prev_recall {
            let best_precision = points[i..].iter().map(|p| p.0).fold(0.0, f64::max);
            ap += (recall - prev_recall) * best_precision;
            prev_recall = recall;
        }
    }
    ap
}
