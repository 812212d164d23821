//! Experiment configuration: one flat, typed record with every hyper-parameter.
//!
//! Config files are flat TOML (`key = value`). Unknown keys are rejected so a
//! misspelled hyper-parameter fails the run instead of silently using a default.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training objective applied during self-training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Target CE + negative + positive learning.
    Hybrid,
    /// Target CE + negative learning (no positive term).
    TargetNegative,
    /// Vanilla cross-entropy on the target class only.
    TargetOnly,
    /// Cross-entropy against the full sharpened distribution on unlabeled data.
    SoftPseudo,
    /// Target CE plus one uniformly drawn non-target negative per unlabeled snippet.
    Complementary,
}

impl Objective {
    pub const ALL: [Objective; 5] = [
        Objective::Hybrid,
        Objective::TargetNegative,
        Objective::TargetOnly,
        Objective::SoftPseudo,
        Objective::Complementary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Hybrid => "hybrid",
            Objective::TargetNegative => "target-negative",
            Objective::TargetOnly => "target-only",
            Objective::SoftPseudo => "soft-pseudo",
            Objective::Complementary => "complementary",
        }
    }

    /// Whether the negative term is active (labeled and unlabeled data).
    pub fn uses_negative(self) -> bool {
        !matches!(self, Objective::TargetOnly)
    }

    pub fn uses_positive(self) -> bool {
        matches!(self, Objective::Hybrid)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::bad_config("objective", format!("unknown objective `{s}`")))
    }
}

/// When pseudo-labels and partitions are recomputed during self-training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionRefresh {
    Epoch,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Positive-class threshold, as a fraction of the target confidence.
    pub lambda: f64,
    /// Weight of the unlabeled loss.
    pub alpha: f64,
    pub objective: Objective,
    /// Divide the positive/negative sums by the set sizes.
    pub normalize_sets: bool,
    pub partition_refresh: PartitionRefresh,
    pub sharpen_temperature: f64,
    /// Refinement and feature-reconstruction losses. Not implemented; must
    /// stay false so saved configs record that they were left out.
    pub auxiliary_losses: bool,

    pub class_count: usize,
    pub feature_dim: usize,
    pub snippets_per_video: usize,
    /// Training videos (labeled + unlabeled).
    pub video_count: usize,
    pub test_video_count: usize,
    pub labeled_ratio: f64,
    pub noise_sigma: f64,
    /// Distance of each class prototype from its cluster centre, before
    /// renormalization. Small values make sibling classes hard to separate.
    pub prototype_separation: f64,
    /// Number of classes sharing a cluster centre.
    pub cluster_size: usize,
    pub max_instances_per_video: usize,
    pub mean_instance_length: f64,
    pub seed: u64,

    pub hidden_width: usize,
    /// Half-width of the optional feature context window (0 = per-snippet).
    pub context_window: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_pretrain: usize,
    pub epochs_self_train: usize,

    pub soft_nms_sigma: f64,
    /// Detections whose final Soft-NMS score falls below this are dropped.
    pub soft_nms_threshold: f64,
    pub tiou_grid: Vec<f64>,
    pub classification_thresholds: Vec<f64>,
    pub mask_thresholds: Vec<f64>,
}

fn tenths() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            lambda: 0.85,
            alpha: 1.0,
            objective: Objective::Hybrid,
            normalize_sets: false,
            partition_refresh: PartitionRefresh::Epoch,
            sharpen_temperature: 0.5,
            auxiliary_losses: false,
            class_count: 10,
            feature_dim: 16,
            snippets_per_video: 100,
            video_count: 200,
            test_video_count: 50,
            labeled_ratio: 0.1,
            noise_sigma: 0.1,
            prototype_separation: 0.3,
            cluster_size: 3,
            max_instances_per_video: 5,
            mean_instance_length: 12.0,
            seed: 0,
            hidden_width: 64,
            context_window: 0,
            learning_rate: 3e-3,
            batch_size: 64,
            epochs_pretrain: 40,
            epochs_self_train: 15,
            soft_nms_sigma: 0.5,
            soft_nms_threshold: 0.4,
            tiou_grid: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            classification_thresholds: tenths(),
            mask_thresholds: tenths(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .unwrap_or("<file>")
                .to_string();
            Error::BadConfig {
                field,
                reason: e.message().trim().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact {
                    path: path.to_path_buf(),
                }
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Size of the label space, `C + 1`.
    pub fn label_space(&self) -> usize {
        self.class_count + 1
    }

    /// Input width seen by the model once context concatenation is applied.
    pub fn input_dim(&self) -> usize {
        self.feature_dim * (2 * self.context_window + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |field: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::bad_config(field, format!("{v} outside [0, 1]")))
            }
        };
        let positive = |field: &str, v: usize| -> Result<()> {
            if v > 0 {
                Ok(())
            } else {
                Err(Error::bad_config(field, "must be at least 1"))
            }
        };
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::bad_config("lambda", "must lie in (0, 1]"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::bad_config("alpha", "must be finite and >= 0"));
        }
        if !(self.labeled_ratio > 0.0 && self.labeled_ratio <= 1.0) {
            return Err(Error::bad_config("labeled_ratio", "must lie in (0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::bad_config("noise_sigma", "must be finite and >= 0"));
        }
        if !(self.sharpen_temperature > 0.0 && self.sharpen_temperature.is_finite()) {
            return Err(Error::bad_config("sharpen_temperature", "must be > 0"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::bad_config("learning_rate", "must be finite and >= 0"));
        }
        if !(self.soft_nms_sigma >= 0.0 && self.soft_nms_sigma.is_finite()) {
            return Err(Error::bad_config("soft_nms_sigma", "must be finite and >= 0"));
        }
        if !(self.prototype_separation > 0.0 && self.prototype_separation.is_finite()) {
            return Err(Error::bad_config("prototype_separation", "must be > 0"));
        }
        if self.mean_instance_length.is_nan() || self.mean_instance_length < 1.0 {
            return Err(Error::bad_config("mean_instance_length", "must be >= 1"));
        }
        if self.auxiliary_losses {
            return Err(Error::bad_config(
                "auxiliary_losses",
                "refinement and reconstruction losses are not implemented",
            ));
        }
        unit("soft_nms_threshold", self.soft_nms_threshold)?;
        positive("class_count", self.class_count)?;
        positive("feature_dim", self.feature_dim)?;
        positive("snippets_per_video", self.snippets_per_video)?;
        positive("video_count", self.video_count)?;
        positive("hidden_width", self.hidden_width)?;
        positive("batch_size", self.batch_size)?;
        positive("cluster_size", self.cluster_size)?;
        positive("max_instances_per_video", self.max_instances_per_video)?;
        for (field, grid) in [
            ("tiou_grid", &self.tiou_grid),
            ("classification_thresholds", &self.classification_thresholds),
            ("mask_thresholds", &self.mask_thresholds),
        ] {
            if grid.is_empty() {
                return Err(Error::bad_config(field, "must not be empty"));
            }
            for &v in grid {
                unit(field, v)?;
            }
        }
        Ok(())
    }
}
