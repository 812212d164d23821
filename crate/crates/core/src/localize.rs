//! Inference-time localization and evaluation: candidate segments from
//! per-snippet class and mask scores, Gaussian Soft-NMS, and mAP over a tIoU
//! grid.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::types::{ActionInstance, ClassDistribution};

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub video: String,
    pub start: usize,
    pub end: usize,
    /// 0-based action class (never background).
    pub class: usize,
    pub score: f64,
}

impl Detection {
    fn key(&self) -> (&str, usize, usize, usize) {
        (&self.video, self.start, self.end, self.class)
    }
}

/// Highest score first; ties by (video, start, end, class).
fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.key().cmp(&b.key()))
}

/// Ground-truth instance tagged with its video.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub video: String,
    pub instance: ActionInstance,
}

/// Overlap of two inclusive snippet spans over their union.
pub fn span_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    let inter = if hi >= lo { hi - lo + 1 } else { 0 };
    let union = (a.1 - a.0 + 1) + (b.1 - b.0 + 1) - inter;
    inter as f64 / union as f64
}

pub fn temporal_iou(a: &Detection, b: &Detection) -> f64 {
    span_iou((a.start, a.end), (b.start, b.end))
}

/// Candidate segments for one video.
///
/// For every `(class threshold, mask threshold)` pair, each snippet whose best
/// action probability and mask score clear the thresholds seeds a candidate
/// spanning the maximal run of snippets with mask score above the mask
/// threshold. The candidate is scored as seed class probability times the
/// mean mask score of the run. Duplicate `(start, end, class)` candidates keep
/// the highest score.
pub fn generate_candidates(
    video: &str,
    dists: &[ClassDistribution],
    mask_scores: &[f64],
    class_thresholds: &[f64],
    mask_thresholds: &[f64],
) -> Result<Vec<Detection>> {
    if dists.len() != mask_scores.len() {
        return Err(Error::LengthMismatch {
            expected: dists.len(),
            actual: mask_scores.len(),
        });
    }
    let n = dists.len();
    let best: Vec<(usize, f64)> = dists.iter().map(|d| d.best_action()).collect();
    let mut found: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for &theta_m in mask_thresholds {
        // run id per snippet, runs as (start, end, mean mask)
        let mut runs: Vec<(usize, usize, f64)> = Vec::new();
        let mut run_of = vec![usize::MAX; n];
        let mut i = 0;
        while i < n {
            if mask_scores[i] < theta_m {
                i += 1;
                continue;
            }
            let start = i;
            while i < n && mask_scores[i] >= theta_m {
                run_of[i] = runs.len();
                i += 1;
            }
            let mean = mask_scores[start..i].iter().sum::<f64>() / (i - start) as f64;
            runs.push((start, i - 1, mean));
        }
        for &theta_c in class_thresholds {
            for (s, &(class, prob)) in best.iter().enumerate() {
                if prob < theta_c || run_of[s] == usize::MAX {
                    continue;
                }
                let (start, end, mean) = runs[run_of[s]];
                let score = prob * mean;
                let slot = found.entry((start, end, class)).or_insert(score);
                if score > *slot {
                    *slot = score;
                }
            }
        }
    }
    Ok(found
        .into_iter()
        .map(|((start, end, class), score)| Detection {
            video: video.to_string(),
            start,
            end,
            class,
            score,
        })
        .collect())
}

/// Gaussian Soft-NMS over detections of one video and class.
///
/// Repeatedly keeps the highest-scoring remaining detection and multiplies
/// every other remaining score by `exp(-iou^2 / sigma)`. With `sigma == 0`
/// any overlap zeroes the score (hard NMS). Detections whose final score is
/// below `score_floor` are dropped. Output is in selection order.
pub fn soft_nms(detections: Vec<Detection>, sigma: f64, score_floor: f64) -> Vec<Detection> {
    let mut remaining = detections;
    let mut kept = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let best = (0..remaining.len())
            .min_by(|&a, &b| rank_order(&remaining[a], &remaining[b]))
            .expect("non-empty");
        let top = remaining.swap_remove(best);
        if top.score < score_floor {
            // Everything left scores no higher and can only decay further.
            break;
        }
        for det in &mut remaining {
            let iou = temporal_iou(&top, det);
            if iou <= 0.0 {
                continue;
            }
            let decay = if sigma > 0.0 {
                (-(iou * iou) / sigma).exp()
            } else {
                0.0
            };
            det.score *= decay;
        }
        kept.push(top);
    }
    kept
}

/// Applies [`soft_nms`] independently per (video, class) group.
pub fn soft_nms_per_class(detections: Vec<Detection>, sigma: f64, score_floor: f64) -> Vec<Detection> {
    let mut groups: BTreeMap<(String, usize), Vec<Detection>> = BTreeMap::new();
    for d in detections {
        groups.entry((d.video.clone(), d.class)).or_default().push(d);
    }
    groups
        .into_values()
        .flat_map(|g| soft_nms(g, sigma, score_floor))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub thresholds: Vec<f64>,
    /// mAP at each tIoU threshold.
    pub per_threshold: Vec<f64>,
    /// Mean over the tIoU grid.
    pub average: f64,
    /// Classes without ground truth; excluded from the mean.
    pub skipped: Vec<Error>,
}

/// Average precision of one class at one threshold with all-points
/// interpolation. `dets` must already be in rank order.
fn average_precision(dets: &[&Detection], truth: &[&GroundTruth], threshold: f64) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let mut by_video: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in truth.iter().enumerate() {
        by_video.entry(g.video.as_str()).or_default().push(i);
    }
    let mut matched = vec![false; truth.len()];
    let mut tp = 0usize;
    let mut precisions = Vec::with_capacity(dets.len());
    let mut hits = Vec::with_capacity(dets.len());
    for (rank, det) in dets.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        if let Some(candidates) = by_video.get(det.video.as_str()) {
            for &g in candidates {
                if matched[g] {
                    continue;
                }
                let inst = &truth[g].instance;
                let iou = span_iou((det.start, det.end), (inst.start, inst.end));
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
        }
        let hit = match best {
            Some((g, iou)) if iou >= threshold => {
                matched[g] = true;
                true
            }
            _ => false,
        };
        if hit {
            tp += 1;
        }
        hits.push(hit);
        precisions.push(tp as f64 / (rank + 1) as f64);
    }
    // Monotone precision envelope, swept from the tail.
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let step = 1.0 / truth.len() as f64;
    hits.iter()
        .zip(&precisions)
        .filter(|(h, _)| **h)
        .map(|(_, p)| p * step)
        .sum()
}

pub fn mean_average_precision(
    detections: &[Detection],
    ground_truth: &[GroundTruth],
    tiou_grid: &[f64],
    class_count: usize,
) -> MapReport {
    let mut per_threshold = vec![0.0; tiou_grid.len()];
    let mut skipped = Vec::new();
    let mut evaluated = 0usize;
    for class in 0..class_count {
        let truth: Vec<&GroundTruth> = ground_truth
            .iter()
            .filter(|g| g.instance.class == class)
            .collect();
        if truth.is_empty() {
            skipped.push(Error::EmptyGroundTruth { class: class + 1 });
            continue;
        }
        let mut dets: Vec<&Detection> = detections.iter().filter(|d| d.class == class).collect();
        dets.sort_by(|a, b| rank_order(a, b));
        for (slot, &thr) in per_threshold.iter_mut().zip(tiou_grid) {
            *slot += average_precision(&dets, &truth, thr);
        }
        evaluated += 1;
    }
    if evaluated > 0 {
        for v in &mut per_threshold {
            *v /= evaluated as f64;
        }
    }
    let average = if per_threshold.is_empty() {
        0.0
    } else {
        per_threshold.iter().sum::<f64>() / per_threshold.len() as f64
    };
    MapReport {
        thresholds: tiou_grid.to_vec(),
        per_threshold,
        average,
        skipped,
    }
}

/// One detection per line: `video start end class score`, tab-separated,
/// 1-based class ids.
pub fn format_detections(detections: &[Detection]) -> String {
    let mut sorted: Vec<&Detection> = detections.iter().collect();
    sorted.sort_by(|a, b| a.key().cmp(&b.key()).then(b.score.total_cmp(&a.score)));
    let mut out = String::from("video\tstart\tend\tclass\tscore\n");
    for d in sorted {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.9}\n",
            d.video,
            d.start,
            d.end,
            d.class + 1,
            d.score
        ));
    }
    out
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if n == 0 && line.starts_with("video") || line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::CorruptRecord {
            video: line.split('\t').next().map(str::to_string),
            offset: n as u64,
            reason: format!("line {}: {reason}", n + 1),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 tab-separated fields"));
        }
        let start: usize = f[1].parse().map_err(|_| bad("bad start"))?;
        let end: usize = f[2].parse().map_err(|_| bad("bad end"))?;
        let class: usize = f[3].parse().map_err(|_| bad("bad class"))?;
        let score: f64 = f[4].parse().map_err(|_| bad("bad score"))?;
        if start > end || class == 0 || !(0.0..=1.0).contains(&score) {
            return Err(bad("invalid detection"));
        }
        out.push(Detection {
            video: f[0].to_string(),
            start,
            end,
            class: class - 1,
            score,
        });
    }
    Ok(out)
}

pub fn detections_to_ground_truth(detections: &[Detection]) -> Result<Vec<GroundTruth>> {
    detections
        .iter()
        .map(|d| {
            Ok(GroundTruth {
                video: d.video.clone(),
                instance: ActionInstance::ground_truth(d.start, d.end, d.class)?,
            })
        })
        .collect()
}

pub fn ground_truth_as_detections(truth: &[GroundTruth]) -> Vec<Detection> {
    truth
        .iter()
        .map(|g| Detection {
            video: g.video.clone(),
            start: g.instance.start,
            end: g.instance.end,
            class: g.instance.class,
            score: 1.0,
        })
        .collect()
}

/// Classes that appear in the ground truth, 0-based.
pub fn classes_present(truth: &[GroundTruth]) -> BTreeSet<usize> {
    truth.iter().map(|g| g.instance.class).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn det(video: &str, start: usize, end: usize, class: usize, score: f64) -> Detection {
        Detection {
            video: video.into(),
            start,
            end,
            class,
            score,
        }
    }

    fn gt(video: &str, start: usize, end: usize, class: usize) -> GroundTruth {
        GroundTruth {
            video: video.into(),
            instance: ActionInstance::ground_truth(start, end, class).unwrap(),
        }
    }

    fn peaked(class: usize, p: f64, len: usize) -> ClassDistribution {
        let rest = (1.0 - p) / (len - 1) as f64;
        let mut v = vec![rest; len];
        v[class] = p;
        ClassDistribution::new(v).unwrap()
    }

    #[test]
    fn tiou_examples() {
        assert_eq!(span_iou((0, 9), (0, 9)), 1.0);
        assert_eq!(span_iou((0, 4), (5, 9)), 0.0);
        assert_abs_diff_eq!(span_iou((0, 9), (5, 14)), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn candidate_expansion_example() {
        // 1-based class 2 is index 1; label space of 4 (3 actions + background).
        let dists = vec![peaked(1, 0.8, 4), peaked(1, 0.8, 4), peaked(3, 0.9, 4)];
        let c = generate_candidates("v", &dists, &[0.9, 0.9, 0.1], &[0.5], &[0.5]).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].start, c[0].end, c[0].class), (0, 1, 1));
        assert_abs_diff_eq!(c[0].score, 0.8 * 0.9, epsilon = 1e-15);
    }

    #[test]
    fn no_foreground_no_candidates() {
        let dists = vec![peaked(0, 0.9, 3); 4];
        let c = generate_candidates("v", &dists, &[0.0; 4], &[0.1, 0.5], &[0.1, 0.5]).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn whole_video_candidate_is_deduplicated() {
        let dists = vec![peaked(0, 0.9, 3); 5];
        let c = generate_candidates("v", &dists, &[0.95; 5], &[0.1, 0.5, 0.9], &[0.1, 0.5, 0.9])
            .unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].start, c[0].end), (0, 4));
    }

    #[test]
    fn soft_nms_examples() {
        let out = soft_nms(vec![det("v", 0, 4, 0, 0.9), det("v", 5, 9, 0, 0.8)], 0.5, 0.0);
        assert_eq!(out[0].score, 0.9);
        assert_eq!(out[1].score, 0.8);
        let out = soft_nms(vec![det("v", 0, 4, 0, 0.8), det("v", 0, 4, 0, 0.9)], 0.5, 0.0);
        assert_eq!(out[0].score, 0.9);
        assert_abs_diff_eq!(out[1].score, 0.8 * (-2.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(out[1].score, 0.10827, epsilon = 1e-5);
        let out = soft_nms(vec![det("v", 0, 4, 0, 0.3)], 0.5, 0.0);
        assert_eq!(out, vec![det("v", 0, 4, 0, 0.3)]);
    }

    #[test]
    fn soft_nms_floor_drops_and_hard_limit() {
        // (0,5) overlaps the winner at 5/6 and decays to 0.85 * exp(-(25/36)/0.5) < 0.4.
        let dets = vec![
            det("v", 0, 4, 0, 0.9),
            det("v", 0, 5, 0, 0.85),
            det("v", 20, 25, 0, 0.5),
            det("v", 40, 45, 0, 0.3),
        ];
        let out = soft_nms(dets.clone(), 0.5, 0.4);
        let kept: Vec<_> = out.iter().map(|d| d.start).collect();
        assert_eq!(kept, vec![0, 20]);
        let hard = soft_nms(dets, 0.0, 1e-9);
        assert_eq!(hard.len(), 3);
        assert!(hard.iter().all(|d| d.start != 0 || d.end != 5));
    }

    #[test]
    fn perfect_and_empty_detectors() {
        let truth = vec![gt("a", 0, 4, 0), gt("a", 10, 14, 1), gt("b", 3, 8, 0)];
        let perfect = ground_truth_as_detections(&truth);
        let r = mean_average_precision(&perfect, &truth, &[0.3, 0.5, 0.7], 3);
        assert_eq!(r.per_threshold, vec![1.0, 1.0, 1.0]);
        assert_eq!(r.average, 1.0);
        assert_eq!(r.skipped, vec![Error::EmptyGroundTruth { class: 3 }]);
        let r = mean_average_precision(&[], &truth, &[0.3, 0.5], 3);
        assert_eq!(r.average, 0.0);
    }

    #[test]
    fn hand_enumerated_pr_curve() {
        // Ranked: TP, FP, TP over 2 GT -> precisions 1, 1/2, 2/3; recall 1/2, 1/2, 1.
        // AP = 1/2 * 1 + 1/2 * 2/3 = 5/6.
        let truth = vec![gt("a", 0, 9, 0), gt("a", 20, 29, 0)];
        let dets = vec![
            det("a", 0, 9, 0, 0.9),
            det("a", 50, 59, 0, 0.8),
            det("a", 21, 29, 0, 0.7),
        ];
        let r = mean_average_precision(&dets, &truth, &[0.5], 1);
        assert_abs_diff_eq!(r.average, 5.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn duplicate_detections_are_false_positives() {
        let truth = vec![gt("a", 0, 9, 0)];
        let dets = vec![det("a", 0, 9, 0, 0.9), det("a", 0, 9, 0, 0.8)];
        let r = mean_average_precision(&dets, &truth, &[0.5], 1);
        assert_eq!(r.average, 1.0);
        let dets = vec![det("a", 0, 9, 0, 0.8), det("a", 40, 49, 0, 0.9)];
        let r = mean_average_precision(&dets, &truth, &[0.5], 1);
        assert_abs_diff_eq!(r.average, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn detection_dump_round_trip() {
        let dets = vec![det("b", 3, 4, 2, 0.25), det("a", 0, 9, 0, 0.5)];
        let text = format_detections(&dets);
        assert!(text.lines().nth(1).unwrap().starts_with("a\t0\t9\t1\t0.5"));
        let mut back = parse_detections(&text).unwrap();
        back.sort_by(|a, b| a.video.cmp(&b.video));
        assert_eq!(back[0], dets[1]);
        assert_eq!(back[1], dets[0]);
        assert!(parse_detections("video\tstart\tend\tclass\tscore\nx\t1\t0\t1\t0.5\n").is_err());
    }
}
