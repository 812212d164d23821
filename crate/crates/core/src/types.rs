//! Domain types shared by every stage of the pipeline.
//!
//! Class indices are stored 0-based. For a problem with `C` action classes the
//! label space is `0..=C` and index `C` is the background class. Anything that
//! is written to disk uses 1-based ids (background = `C + 1`).

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Absolute tolerance on `sum(probs) == 1`.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector over `C` action classes plus background.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    /// Wraps an already-normalized vector, checking every invariant.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_entries(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        if let Some(index) = probs.iter().position(|&p| p > 1.0) {
            return Err(Error::InvalidDistribution(format!(
                "entry {index} exceeds 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes a non-negative mass vector into a distribution.
    pub fn from_mass(raw: &[f64]) -> Result<Self> {
        check_entries(raw)?;
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(Error::ZeroMass);
        }
        Ok(Self {
            probs: raw.iter().map(|&v| v / sum).collect(),
        })
    }

    /// Numerically stable softmax of a logit vector.
    pub fn softmax(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::EmptyVector);
        }
        if logits.len() < 2 {
            return Err(Error::InvalidDistribution(
                "need at least one action class plus background".into(),
            ));
        }
        if let Some(index) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            probs: softmax_unchecked(logits),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, class: usize) -> f64 {
        self.probs[class]
    }

    /// Size of the full label space, `C + 1`.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Number of action classes `C`.
    pub fn class_count(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn background(&self) -> usize {
        self.probs.len() - 1
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn max_prob(&self) -> f64 {
        self.probs[self.argmax()]
    }

    /// Highest-probability action class, ignoring background.
    pub fn best_action(&self) -> (usize, f64) {
        let actions = &self.probs[..self.background()];
        let c = argmax(actions);
        (c, actions[c])
    }
}

fn check_entries(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyVector);
    }
    if values.len() < 2 {
        return Err(Error::InvalidDistribution(
            "need at least one action class plus background".into(),
        ));
    }
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index });
        }
        if value < 0.0 {
            return Err(Error::NegativeEntry { index, value });
        }
    }
    Ok(())
}

/// Softmax without validation; callers guarantee finite, non-empty input.
pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Which of the four label subspaces a class falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subspace {
    Target,
    Positive,
    Ambiguous,
    Negative,
}

impl Subspace {
    pub const ALL: [Subspace; 4] = [
        Subspace::Target,
        Subspace::Positive,
        Subspace::Ambiguous,
        Subspace::Negative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subspace::Target => "target",
            Subspace::Positive => "positive",
            Subspace::Ambiguous => "ambiguous",
            Subspace::Negative => "negative",
        }
    }
}

/// Disjoint cover of the label space into target, positive, negative and
/// ambiguous classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelPartition {
    target: usize,
    positives: BTreeSet<usize>,
    negatives: BTreeSet<usize>,
    ambiguous: BTreeSet<usize>,
    label_space: usize,
}

impl LabelPartition {
    pub fn new(
        label_space: usize,
        target: usize,
        positives: BTreeSet<usize>,
        negatives: BTreeSet<usize>,
        ambiguous: BTreeSet<usize>,
    ) -> Result<Self> {
        if target >= label_space {
            return Err(Error::InvalidPartition(format!(
                "target {target} outside label space of {label_space}"
            )));
        }
        let mut seen = vec![false; label_space];
        seen[target] = true;
        for (name, set) in [
            ("positive", &positives),
            ("negative", &negatives),
            ("ambiguous", &ambiguous),
        ] {
            for &c in set {
                if c >= label_space {
                    return Err(Error::InvalidPartition(format!(
                        "{name} class {c} outside label space of {label_space}"
                    )));
                }
                if seen[c] {
                    return Err(Error::InvalidPartition(format!(
                        "class {c} appears in more than one subspace"
                    )));
                }
                seen[c] = true;
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!(
                "class {c} is not covered"
            )));
        }
        Ok(Self {
            target,
            positives,
            negatives,
            ambiguous,
            label_space,
        })
    }

    /// Builds a partition where everything outside `target`, `positives` and
    /// `negatives` is ambiguous.
    pub fn with_remainder_ambiguous(
        label_space: usize,
        target: usize,
        positives: BTreeSet<usize>,
        negatives: BTreeSet<usize>,
    ) -> Result<Self> {
        let ambiguous = (0..label_space)
            .filter(|c| *c != target && !positives.contains(c) && !negatives.contains(c))
            .collect();
        Self::new(label_space, target, positives, negatives, ambiguous)
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn positives(&self) -> &BTreeSet<usize> {
        &self.positives
    }

    pub fn negatives(&self) -> &BTreeSet<usize> {
        &self.negatives
    }

    pub fn ambiguous(&self) -> &BTreeSet<usize> {
        &self.ambiguous
    }

    pub fn label_space(&self) -> usize {
        self.label_space
    }

    pub fn subspace_of(&self, class: usize) -> Subspace {
        if class == self.target {
            Subspace::Target
        } else if self.positives.contains(&class) {
            Subspace::Positive
        } else if self.negatives.contains(&class) {
            Subspace::Negative
        } else {
            Subspace::Ambiguous
        }
    }
}

/// How a snippet is supervised during training.
#[derive(Debug, Clone, PartialEq)]
pub enum Supervision {
    GroundTruth(usize),
    Pseudo {
        class: usize,
        partition: LabelPartition,
    },
    /// Full-distribution soft pseudo-label (baseline objective only).
    Soft(ClassDistribution),
    Unlabeled,
}

impl Supervision {
    pub fn pseudo(partition: LabelPartition) -> Self {
        Supervision::Pseudo {
            class: partition.target(),
            partition,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snippet {
    feature: Vec<f64>,
    supervision: Supervision,
}

impl Snippet {
    pub fn new(feature: Vec<f64>, supervision: Supervision) -> Result<Self> {
        if let Some(index) = feature.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if let Supervision::Pseudo { class, partition } = &supervision {
            if partition.target() != *class {
                return Err(Error::InvalidPartition(format!(
                    "pseudo class {class} differs from partition target {}",
                    partition.target()
                )));
            }
        }
        Ok(Self {
            feature,
            supervision,
        })
    }

    pub fn feature(&self) -> &[f64] {
        &self.feature
    }

    pub fn supervision(&self) -> &Supervision {
        &self.supervision
    }

    pub fn with_supervision(&self, supervision: Supervision) -> Result<Self> {
        Snippet::new(self.feature.clone(), supervision)
    }
}

/// An action segment over inclusive snippet indices `[start, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionInstance {
    pub start: usize,
    pub end: usize,
    pub class: usize,
    pub score: f64,
}

impl ActionInstance {
    pub fn new(start: usize, end: usize, class: usize, score: f64) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidInstance(format!(
                "start {start} after end {end}"
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidInstance(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            start,
            end,
            class,
            score,
        })
    }

    pub fn ground_truth(start: usize, end: usize, class: usize) -> Result<Self> {
        Self::new(start, end, class, 1.0)
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, snippet: usize) -> bool {
        (self.start..=self.end).contains(&snippet)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub snippets: Vec<Snippet>,
    pub instances: Vec<ActionInstance>,
    pub labeled: bool,
}

impl VideoRecord {
    /// Validates instance bounds, ordering, class ids and non-overlap.
    pub fn new(
        id: impl Into<String>,
        snippets: Vec<Snippet>,
        instances: Vec<ActionInstance>,
        labeled: bool,
        class_count: usize,
    ) -> Result<Self> {
        let n = snippets.len();
        for inst in &instances {
            if inst.start > inst.end || inst.end >= n {
                return Err(Error::InvalidInstance(format!(
                    "[{}, {}] outside video of {n} snippets",
                    inst.start, inst.end
                )));
            }
            if inst.class >= class_count {
                return Err(Error::InvalidInstance(format!(
                    "class {} is not an action class",
                    inst.class
                )));
            }
        }
        let mut spans: Vec<_> = instances.iter().map(|i| (i.start, i.end)).collect();
        spans.sort_unstable();
        if spans.windows(2).any(|w| w[1].0 <= w[0].1) {
            return Err(Error::InvalidInstance("overlapping instances".into()));
        }
        Ok(Self {
            id: id.into(),
            snippets,
            instances,
            labeled,
        })
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }
}

/// Per-snippet labels implied by a set of instances; background elsewhere.
pub fn snippet_labels(
    instances: &[ActionInstance],
    snippet_count: usize,
    class_count: usize,
) -> Vec<usize> {
    let mut labels = vec![class_count; snippet_count];
    for inst in instances {
        for label in &mut labels[inst.start..=inst.end.min(snippet_count - 1)] {
            *label = inst.class;
        }
    }
    labels
}
