//! Loss family for hybrid positive-negative learning.
//!
//! Every classification loss returns its gradient with respect to the logits
//! that produced the distribution (softmax folded in). Probabilities are
//! clamped at [`PROB_CLAMP`] before every logarithm.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::types::{ClassDistribution, Supervision};

pub const PROB_CLAMP: f64 = 1e-12;

fn clamped_ln(p: f64) -> f64 {
    p.max(PROB_CLAMP).ln()
}

/// Cross-entropy against a single class: `-ln p_target`.
pub fn target_loss(dist: &ClassDistribution, target: usize) -> (f64, Vec<f64>) {
    let loss = -clamped_ln(dist.prob(target));
    let mut grad = dist.probs().to_vec();
    grad[target] -= 1.0;
    (loss, grad)
}

/// `1 - p_c`, computed as the mass of the other classes so it keeps precision
/// when `p_c` is close to one.
fn complement(dist: &ClassDistribution, class: usize) -> f64 {
    dist.probs()
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != class)
        .map(|(_, p)| p)
        .sum()
}

/// Negative learning: `-sum_{c in negatives} ln(1 - p_c)`.
pub fn negative_loss(dist: &ClassDistribution, negatives: &BTreeSet<usize>) -> (f64, Vec<f64>) {
    let p = dist.probs();
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.len()];
    for &c in negatives {
        let rest = complement(dist, c).max(PROB_CLAMP);
        loss -= rest.ln();
        // d/dz_j [-ln(1 - p_c)] = p_c (delta_jc - p_j) / (1 - p_c)
        let scale = p[c] / rest;
        for (j, g) in grad.iter_mut().enumerate() {
            let delta = if j == c { 1.0 } else { 0.0 };
            *g += scale * (delta - p[j]);
        }
    }
    (loss, grad)
}

/// Positive learning: `-sum_{c in positives} ln p_c`.
pub fn positive_loss(dist: &ClassDistribution, positives: &BTreeSet<usize>) -> (f64, Vec<f64>) {
    let p = dist.probs();
    let k = positives.len() as f64;
    let loss = positives.iter().map(|&c| -clamped_ln(p[c])).sum();
    let mut grad: Vec<f64> = p.iter().map(|&pj| k * pj).collect();
    for &c in positives {
        grad[c] -= 1.0;
    }
    (loss, grad)
}

/// Cross-entropy against a full target distribution `q`: `-sum q_c ln p_c`.
pub fn soft_target_loss(dist: &ClassDistribution, soft: &ClassDistribution) -> (f64, Vec<f64>) {
    let p = dist.probs();
    let q = soft.probs();
    let loss = p.iter().zip(q).map(|(&pc, &qc)| -qc * clamped_ln(pc)).sum();
    let q_mass: f64 = q.iter().sum();
    let grad = p.iter().zip(q).map(|(&pc, &qc)| q_mass * pc - qc).collect();
    (loss, grad)
}

/// Mean binary cross-entropy of per-snippet foreground scores. The gradient
/// is with respect to the scores themselves.
pub fn mask_loss(scores: &[f64], targets: &[bool]) -> Result<(f64, Vec<f64>)> {
    if scores.len() != targets.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            actual: targets.len(),
        });
    }
    if scores.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (&s, &t) in scores.iter().zip(targets) {
        if t {
            let q = s.max(PROB_CLAMP);
            loss -= q.ln();
            grad.push(-1.0 / (q * n));
        } else {
            let q = (1.0 - s).max(PROB_CLAMP);
            loss -= q.ln();
            grad.push(1.0 / (q * n));
        }
    }
    Ok((loss / n, grad))
}

/// Which loss terms are active and how the unlabeled part is weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub alpha: f64,
    pub use_negative: bool,
    pub use_positive: bool,
    pub normalize_sets: bool,
}

impl LossSettings {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            alpha: config.alpha,
            use_negative: config.objective.uses_negative(),
            use_positive: config.objective.uses_positive(),
            normalize_sets: config.normalize_sets,
        }
    }

    /// Supervised objective used during pre-training.
    pub fn supervised(normalize_sets: bool) -> Self {
        Self {
            alpha: 0.0,
            use_negative: true,
            use_positive: false,
            normalize_sets,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Terms {
    pub target: f64,
    pub positive: f64,
    pub negative: f64,
}

impl Terms {
    pub fn sum(&self) -> f64 {
        self.target + self.positive + self.negative
    }

    fn scaled(&self, k: f64) -> Terms {
        Terms {
            target: self.target * k,
            positive: self.positive * k,
            negative: self.negative * k,
        }
    }
}

/// Per-batch loss components. `labeled` and `unlabeled` are already averaged
/// over their snippet counts; `alpha` weights the unlabeled part.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub labeled: Terms,
    pub unlabeled: Terms,
    pub mask: f64,
    pub alpha: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn recomputed_total(&self) -> f64 {
        self.labeled.sum() + self.alpha * self.unlabeled.sum() + self.mask
    }

    pub fn target(&self) -> f64 {
        self.labeled.target + self.alpha * self.unlabeled.target
    }

    pub fn positive(&self) -> f64 {
        self.labeled.positive + self.alpha * self.unlabeled.positive
    }

    pub fn negative(&self) -> f64 {
        self.labeled.negative + self.alpha * self.unlabeled.negative
    }
}

/// One snippet's prediction and supervision as seen by [`combined_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LossInput<'a> {
    pub supervision: &'a Supervision,
    pub dist: &'a ClassDistribution,
    pub mask_score: f64,
    /// Foreground target for the mask head, when known.
    pub mask_target: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    /// Gradient of the total loss with respect to each snippet's logits.
    pub logits: Vec<Vec<f64>>,
    /// Gradient of the total loss with respect to each snippet's mask score.
    pub mask: Vec<f64>,
}

fn add_scaled(acc: &mut [f64], grad: &[f64], k: f64) {
    for (a, g) in acc.iter_mut().zip(grad) {
        *a += k * g;
    }
}

/// Batch objective: labeled snippets get target CE plus negative learning on
/// every non-target class; pseudo-labeled snippets get target CE plus
/// positive and negative learning on their partition, weighted by `alpha`.
/// Each half is averaged over its own snippet count and the mask loss is
/// added once.
pub fn combined_loss(
    inputs: &[LossInput<'_>],
    settings: &LossSettings,
) -> Result<(LossBreakdown, LossGradients)> {
    let n_labeled = inputs
        .iter()
        .filter(|i| matches!(i.supervision, Supervision::GroundTruth(_)))
        .count();
    let n_unlabeled = inputs.len() - n_labeled;
    let mut labeled = Terms::default();
    let mut unlabeled = Terms::default();
    let mut grads: Vec<Vec<f64>> = inputs.iter().map(|i| vec![0.0; i.dist.len()]).collect();

    let set_weight = |len: usize| {
        if settings.normalize_sets && len > 0 {
            1.0 / len as f64
        } else {
            1.0
        }
    };

    for (index, (input, grad)) in inputs.iter().zip(grads.iter_mut()).enumerate() {
        let dist = input.dist;
        match input.supervision {
            Supervision::Unlabeled => return Err(Error::UnresolvedSupervision { index }),
            Supervision::GroundTruth(class) => {
                let w = 1.0 / n_labeled as f64;
                let (l, g) = target_loss(dist, *class);
                labeled.target += l;
                add_scaled(grad, &g, w);
                if settings.use_negative {
                    let others: BTreeSet<usize> = (0..dist.len()).filter(|c| c != class).collect();
                    let k = set_weight(others.len());
                    let (l, g) = negative_loss(dist, &others);
                    labeled.negative += k * l;
                    add_scaled(grad, &g, k * w);
                }
            }
            Supervision::Pseudo { class, partition } => {
                if settings.alpha == 0.0 {
                    continue;
                }
                let w = settings.alpha / n_unlabeled as f64;
                let (l, g) = target_loss(dist, *class);
                unlabeled.target += l;
                add_scaled(grad, &g, w);
                if settings.use_negative && !partition.negatives().is_empty() {
                    let k = set_weight(partition.negatives().len());
                    let (l, g) = negative_loss(dist, partition.negatives());
                    unlabeled.negative += k * l;
                    add_scaled(grad, &g, k * w);
                }
                if settings.use_positive && !partition.positives().is_empty() {
                    let k = set_weight(partition.positives().len());
                    let (l, g) = positive_loss(dist, partition.positives());
                    unlabeled.positive += k * l;
                    add_scaled(grad, &g, k * w);
                }
            }
            Supervision::Soft(soft) => {
                if settings.alpha == 0.0 {
                    continue;
                }
                let w = settings.alpha / n_unlabeled as f64;
                let (l, g) = soft_target_loss(dist, soft);
                unlabeled.target += l;
                add_scaled(grad, &g, w);
            }
        }
    }
    if n_labeled > 0 {
        labeled = labeled.scaled(1.0 / n_labeled as f64);
    }
    if n_unlabeled > 0 {
        unlabeled = unlabeled.scaled(1.0 / n_unlabeled as f64);
    }

    let masked: Vec<(usize, f64, bool)> = inputs
        .iter()
        .enumerate()
        .filter_map(|(i, x)| x.mask_target.map(|t| (i, x.mask_score, t)))
        .collect();
    let scores: Vec<f64> = masked.iter().map(|m| m.1).collect();
    let targets: Vec<bool> = masked.iter().map(|m| m.2).collect();
    let (mask, mask_grad) = mask_loss(&scores, &targets)?;
    let mut grad_mask = vec![0.0; inputs.len()];
    for ((i, _, _), g) in masked.iter().zip(mask_grad) {
        grad_mask[*i] = g;
    }

    let mut breakdown = LossBreakdown {
        labeled,
        unlabeled,
        mask,
        alpha: settings.alpha,
        total: 0.0,
    };
    breakdown.total = breakdown.recomputed_total();
    Ok((
        breakdown,
        LossGradients {
            logits: grads,
            mask: grad_mask,
        },
    ))
}
