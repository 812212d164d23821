//! Experiment drivers: per-seed preparation (benchmark + shared pre-training),
//! self-training variants, evaluation, and the sweeps behind the CLI.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Objective};
use crate::datagen::{generate_benchmark, Benchmark};
use crate::error::{Error, Result};
use crate::localize::{
    generate_candidates, mean_average_precision, soft_nms_per_class, Detection, GroundTruth,
    MapReport,
};
use crate::model::ModelParams;
use crate::selftrain::{pretrain, self_train, snippet_accuracy, EpochLog, PseudoAudit};
use crate::types::VideoRecord;

/// Benchmark and pre-trained model for one seed, shared by every variant
/// trained on that seed.
pub struct SeedRun {
    pub config: ExperimentConfig,
    pub benchmark: Benchmark,
    pub pretrained: ModelParams,
    pub pretrain_logs: Vec<EpochLog>,
}

pub fn prepare(config: &ExperimentConfig) -> Result<SeedRun> {
    config.validate()?;
    let benchmark = generate_benchmark(config)?;
    let (pretrained, pretrain_logs) = pretrain(&benchmark.labeled, config)?;
    Ok(SeedRun {
        config: config.clone(),
        benchmark,
        pretrained,
        pretrain_logs,
    })
}

/// Post-processed detections for every video.
pub fn detect(
    params: &ModelParams,
    videos: &[VideoRecord],
    config: &ExperimentConfig,
) -> Result<Vec<Detection>> {
    let per_video: Vec<Vec<Detection>> = videos
        .par_iter()
        .map(|v| {
            let (dists, masks) = crate::selftrain::predict_video(params, v, config)?;
            let candidates = generate_candidates(
                &v.id,
                &dists,
                &masks,
                &config.classification_thresholds,
                &config.mask_thresholds,
            )?;
            Ok(soft_nms_per_class(
                candidates,
                config.soft_nms_sigma,
                config.soft_nms_threshold,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(per_video.into_iter().flatten().collect())
}

/// Annotated instances of the given videos.
pub fn ground_truth(videos: &[VideoRecord]) -> Vec<GroundTruth> {
    videos
        .iter()
        .flat_map(|v| {
            v.instances.iter().map(|inst| GroundTruth {
                video: v.id.clone(),
                instance: inst.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub map: MapReport,
    pub snippet_accuracy: f64,
    pub detections: Vec<Detection>,
}

pub fn evaluate(
    params: &ModelParams,
    videos: &[VideoRecord],
    config: &ExperimentConfig,
) -> Result<Evaluation> {
    let detections = detect(params, videos, config)?;
    let map = mean_average_precision(
        &detections,
        &ground_truth(videos),
        &config.tiou_grid,
        config.class_count,
    );
    Ok(Evaluation {
        map,
        snippet_accuracy: snippet_accuracy(params, videos, config)?,
        detections,
    })
}

/// One trained-and-evaluated variant. Serialized as a metrics record, so it
/// deliberately carries no timing information.
#[derive(Debug, Clone, Serialize)]
pub struct VariantOutcome {
    pub variant: String,
    pub seed: u64,
    pub objective: Objective,
    pub lambda: f64,
    pub alpha: f64,
    pub average_map: f64,
    pub map_per_tiou: Vec<(f64, f64)>,
    pub test_snippet_accuracy: f64,
    pub pretrain_test_snippet_accuracy: f64,
    pub final_loss: Option<f64>,
    /// Pseudo-label audits per self-training epoch, when requested.
    pub audits: Vec<PseudoAudit>,
}

fn check_compatible(run: &SeedRun, config: &ExperimentConfig) -> Result<()> {
    let base = &run.config;
    let same_data = base.seed == config.seed
        && base.class_count == config.class_count
        && base.feature_dim == config.feature_dim
        && base.context_window == config.context_window
        && base.hidden_width == config.hidden_width
        && base.labeled_ratio == config.labeled_ratio;
    if same_data {
        Ok(())
    } else {
        Err(Error::bad_config(
            "seed",
            "variant config must share the data and model shape of the prepared run",
        ))
    }
}

/// Self-trains a copy of the shared pre-trained model under `config` and
/// evaluates it on the test split. With `audited`, the sealed ground truth
/// of the unlabeled videos is used to audit each pseudo-label refresh.
pub fn run_variant(
    run: &SeedRun,
    variant: &str,
    config: &ExperimentConfig,
    audited: bool,
) -> Result<VariantOutcome> {
    check_compatible(run, config)?;
    config.validate()?;
    let b = &run.benchmark;
    let audit = audited.then_some(&b.sealed as &dyn crate::selftrain::PseudoLabelAudit);
    let (params, logs) = self_train(&run.pretrained, &b.labeled, &b.unlabeled, config, audit)?;
    let eval = evaluate(&params, &b.test, config)?;
    Ok(VariantOutcome {
        variant: variant.to_string(),
        seed: config.seed,
        objective: config.objective,
        lambda: config.lambda,
        alpha: config.alpha,
        average_map: eval.map.average,
        map_per_tiou: eval
            .map
            .thresholds
            .iter()
            .copied()
            .zip(eval.map.per_threshold.iter().copied())
            .collect(),
        test_snippet_accuracy: eval.snippet_accuracy,
        pretrain_test_snippet_accuracy: snippet_accuracy(&run.pretrained, &b.test, config)?,
        final_loss: logs.last().map(|l| l.loss.total),
        audits: logs.iter().filter_map(|l| l.audit).collect(),
    })
}

/// A named config override applied on top of the base config.
pub struct Variant {
    pub name: String,
    pub apply: Box<dyn Fn(&mut ExperimentConfig) + Sync>,
}

impl Variant {
    pub fn new(name: impl Into<String>, apply: impl Fn(&mut ExperimentConfig) + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            apply: Box::new(apply),
        }
    }

    pub fn config(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        (self.apply)(&mut c);
        c
    }
}

pub fn objective_variant(objective: Objective) -> Variant {
    Variant::new(objective.name(), move |c| c.objective = objective)
}

/// Loss ablation: target only, target + negative, full hybrid.
pub fn loss_ablation_variants() -> Vec<Variant> {
    [Objective::TargetOnly, Objective::TargetNegative, Objective::Hybrid]
        .into_iter()
        .map(objective_variant)
        .collect()
}

pub const LAMBDA_GRID: [f64; 4] = [0.75, 0.80, 0.85, 0.90];

pub fn lambda_variants(grid: &[f64]) -> Vec<Variant> {
    grid.iter()
        .map(|&l| {
            Variant::new(format!("lambda={l:.2}"), move |c| {
                c.objective = Objective::Hybrid;
                c.lambda = l;
            })
        })
        .collect()
}

pub fn baseline_variants() -> Vec<Variant> {
    [Objective::SoftPseudo, Objective::Complementary, Objective::Hybrid]
        .into_iter()
        .map(objective_variant)
        .collect()
}

/// Runs every variant on every seed. Pre-training is done once per seed.
/// `progress` is called after each variant finishes.
pub fn sweep(
    base: &ExperimentConfig,
    seeds: &[u64],
    variants: &[Variant],
    audited: bool,
    mut progress: impl FnMut(&VariantOutcome),
) -> Result<Vec<VariantOutcome>> {
    let mut out = Vec::with_capacity(seeds.len() * variants.len());
    for &seed in seeds {
        let mut seeded = base.clone();
        seeded.seed = seed;
        let run = prepare(&seeded)?;
        for v in variants {
            let outcome = run_variant(&run, &v.name, &v.config(&seeded), audited)?;
            progress(&outcome);
            out.push(outcome);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub seeds: usize,
    pub mean_average_map: f64,
    pub std_average_map: f64,
    pub mean_test_snippet_accuracy: f64,
}

/// Mean and sample standard deviation per variant, in first-seen order.
pub fn summarize(outcomes: &[VariantOutcome]) -> Vec<VariantSummary> {
    let mut names: Vec<&str> = Vec::new();
    for o in outcomes {
        if !names.contains(&o.variant.as_str()) {
            names.push(&o.variant);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rows: Vec<&VariantOutcome> = outcomes.iter().filter(|o| o.variant == name).collect();
            let n = rows.len() as f64;
            let mean = rows.iter().map(|o| o.average_map).sum::<f64>() / n;
            let var = if rows.len() > 1 {
                rows.iter().map(|o| (o.average_map - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            VariantSummary {
                variant: name.to_string(),
                seeds: rows.len(),
                mean_average_map: mean,
                std_average_map: var.sqrt(),
                mean_test_snippet_accuracy: rows.iter().map(|o| o.test_snippet_accuracy).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Per-seed outcomes as CSV: one row per (variant, seed) with average mAP
/// and mAP at each tIoU threshold.
pub fn outcomes_csv(outcomes: &[VariantOutcome]) -> String {
    let mut out = String::from("variant,seed,objective,lambda,alpha,average_map,test_snippet_accuracy");
    if let Some(first) = outcomes.first() {
        for (t, _) in &first.map_per_tiou {
            out.push_str(&format!(",map@{t:.2}"));
        }
    }
    out.push('\n');
    for o in outcomes {
        out.push_str(&format!(
            "{},{},{},{:.4},{:.4},{:.6},{:.6}",
            o.variant,
            o.seed,
            o.objective,
            o.lambda,
            o.alpha,
            o.average_map,
            o.test_snippet_accuracy
        ));
        for (_, m) in &o.map_per_tiou {
            out.push_str(&format!(",{m:.6}"));
        }
        out.push('\n');
    }
    out
}

pub fn summary_csv(summary: &[VariantSummary]) -> String {
    let mut out = String::from("variant,seeds,mean_average_map,std_average_map,mean_test_snippet_accuracy\n");
    for s in summary {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            s.variant, s.seeds, s.mean_average_map, s.std_average_map, s.mean_test_snippet_accuracy
        ));
    }
    out
}
