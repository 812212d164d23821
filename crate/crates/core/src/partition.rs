//! Adaptive label-space partition of a predicted class distribution.
//!
//! The target is the argmax class. Negatives are the longest run of
//! lowest-confidence non-target classes whose cumulative probability stays at
//! or below the target confidence, so a confident prediction gives away more
//! negatives. Positives are the remaining non-target classes whose confidence
//! reaches `lambda` times the target confidence. Everything else is ambiguous
//! and receives no loss.

use std::collections::BTreeSet;

use crate::types::{ClassDistribution, LabelPartition};

/// Probabilities in non-decreasing order plus the sorted-position → class map.
/// Ties keep their original index order.
pub fn sort_ascending(dist: &ClassDistribution) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    // `sort_by` is stable, so equal probabilities stay in index order.
    order.sort_by(|&a, &b| dist.prob(a).total_cmp(&dist.prob(b)));
    let sorted = order.iter().map(|&c| dist.prob(c)).collect();
    (sorted, order)
}

/// Bottom-k negatives: the largest `k` such that the `k` lowest non-target
/// probabilities sum to at most `max(p)`.
pub fn select_negatives(dist: &ClassDistribution) -> BTreeSet<usize> {
    let target = dist.argmax();
    let ceiling = dist.prob(target);
    let (_, order) = sort_ascending(dist);
    let mut negatives = BTreeSet::new();
    let mut cumulative = 0.0;
    for class in order.into_iter().filter(|&c| c != target) {
        cumulative += dist.prob(class);
        if cumulative > ceiling {
            break;
        }
        negatives.insert(class);
    }
    negatives
}

/// Non-target, non-negative classes with `p_c >= lambda * max(p)`.
pub fn select_positives(
    dist: &ClassDistribution,
    negatives: &BTreeSet<usize>,
    lambda: f64,
) -> BTreeSet<usize> {
    let target = dist.argmax();
    let floor = lambda * dist.prob(target);
    (0..dist.len())
        .filter(|&c| c != target && !negatives.contains(&c) && dist.prob(c) >= floor)
        .collect()
}

pub fn partition_label_space(dist: &ClassDistribution, lambda: f64) -> LabelPartition {
    let target = dist.argmax();
    let negatives = select_negatives(dist);
    let positives = select_positives(dist, &negatives, lambda);
    LabelPartition::with_remainder_ambiguous(dist.len(), target, positives, negatives)
        .expect("selection rules always produce a disjoint cover")
}
