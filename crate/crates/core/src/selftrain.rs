//! Two-phase training: supervised pre-training on labeled videos, then
//! self-training that re-labels unlabeled snippets with the current model
//! and optimizes the hybrid objective.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Objective, PartitionRefresh};
use crate::datagen::{mix_seed, SealedTruth};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, LossBreakdown, LossInput, LossSettings};
use crate::model::{
    backward_into, context_input, forward, step, CosineSchedule, ForwardOutput, ModelParams,
    ModelShape, OptimizerState, ParamSet,
};
use crate::partition::partition_label_space;
use crate::types::{ClassDistribution, LabelPartition, Subspace, Supervision, VideoRecord};

const STREAM_INIT: u64 = 11;
const STREAM_PRETRAIN: u64 = 12;
const STREAM_SELF_LABELED: u64 = 13;
const STREAM_SELF_UNLABELED: u64 = 14;
const STREAM_COMPLEMENTARY: u64 = 15;

pub fn model_shape(config: &ExperimentConfig) -> ModelShape {
    ModelShape {
        input_dim: config.input_dim(),
        hidden: config.hidden_width,
        classes: config.label_space(),
    }
}

pub fn init_params(config: &ExperimentConfig) -> ModelParams {
    ModelParams::init(model_shape(config), mix_seed(config.seed, STREAM_INIT, 0))
}

/// Power sharpening: `q_c ∝ p_c^(1/T)`.
pub fn sharpen(dist: &ClassDistribution, temperature: f64) -> ClassDistribution {
    if temperature == 1.0 {
        return dist.clone();
    }
    let top = dist.max_prob().ln();
    let powered: Vec<f64> = dist
        .probs()
        .iter()
        .map(|&p| {
            if p > 0.0 {
                ((p.ln() - top) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    ClassDistribution::from_mass(&powered).expect("max entry maps to 1")
}

/// Model inputs for every snippet of a video, with the configured context.
pub fn video_inputs(video: &VideoRecord, context_window: usize) -> Vec<Vec<f64>> {
    let feats: Vec<&[f64]> = video.snippets.iter().map(|s| s.feature()).collect();
    (0..feats.len())
        .map(|i| context_input(&feats, i, context_window))
        .collect()
}

/// Class distributions and mask scores for every snippet of a video.
pub fn predict_video(
    params: &ModelParams,
    video: &VideoRecord,
    config: &ExperimentConfig,
) -> Result<(Vec<ClassDistribution>, Vec<f64>)> {
    let mut dists = Vec::with_capacity(video.len());
    let mut masks = Vec::with_capacity(video.len());
    for input in video_inputs(video, config.context_window) {
        let out = forward(params, &input)?;
        dists.push(out.dist);
        masks.push(out.mask_score);
    }
    Ok((dists, masks))
}

/// Pseudo supervision for one unlabeled prediction under the configured objective.
fn pseudo_supervision(
    dist: &ClassDistribution,
    config: &ExperimentConfig,
    rng: &mut ChaCha8Rng,
) -> Supervision {
    let sharp = sharpen(dist, config.sharpen_temperature);
    match config.objective {
        Objective::SoftPseudo => Supervision::Soft(sharp),
        Objective::Complementary => {
            let target = sharp.argmax();
            let mut negative = rng.random_range(0..sharp.len() - 1);
            if negative >= target {
                negative += 1;
            }
            let partition = LabelPartition::with_remainder_ambiguous(
                sharp.len(),
                target,
                Default::default(),
                [negative].into(),
            )
            .expect("single negative differs from target");
            Supervision::pseudo(partition)
        }
        Objective::Hybrid | Objective::TargetNegative | Objective::TargetOnly => {
            Supervision::pseudo(partition_label_space(&sharp, config.lambda))
        }
    }
}

/// Re-labels every unlabeled snippet with the current model. Returns copies
/// of the videos with `Pseudo` (or `Soft`) supervision; `round` only varies
/// the draws of the complementary-label baseline.
pub fn assign_pseudo_labels(
    params: &ModelParams,
    unlabeled: &[VideoRecord],
    config: &ExperimentConfig,
    round: u64,
) -> Result<Vec<VideoRecord>> {
    unlabeled
        .par_iter()
        .enumerate()
        .map(|(vi, video)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                config.seed ^ round.wrapping_mul(0x2545_F491_4F6C_DD1D),
                STREAM_COMPLEMENTARY,
                vi as u64,
            ));
            let (dists, _) = predict_video(params, video, config)?;
            let snippets = video
                .snippets
                .iter()
                .zip(&dists)
                .map(|(s, d)| s.with_supervision(pseudo_supervision(d, config, &mut rng)))
                .collect::<Result<Vec<_>>>()?;
            Ok(VideoRecord {
                id: video.id.clone(),
                snippets,
                instances: video.instances.clone(),
                labeled: false,
            })
        })
        .collect()
}

/// How often the ground truth of pseudo-labeled snippets lands in each subspace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SubspaceStats {
    pub snippets: usize,
    pub target: f64,
    pub positive: f64,
    pub ambiguous: f64,
    pub negative: f64,
    /// Snippets whose ground truth is not the target class.
    pub mistaken: usize,
    /// Among mistaken snippets, share with ground truth in the positive set.
    pub positive_given_mistake: f64,
    pub ambiguous_given_mistake: f64,
    pub negative_given_mistake: f64,
    /// Average positive/negative set sizes.
    pub mean_positives: f64,
    pub mean_negatives: f64,
}

impl SubspaceStats {
    pub fn frequency(&self, subspace: Subspace) -> f64 {
        match subspace {
            Subspace::Target => self.target,
            Subspace::Positive => self.positive,
            Subspace::Ambiguous => self.ambiguous,
            Subspace::Negative => self.negative,
        }
    }
}

/// Tallies which subspace holds the hidden ground-truth label of every
/// pseudo-labeled snippet. Snippets with soft supervision are skipped.
pub fn subspace_statistics(annotated: &[VideoRecord], sealed: &SealedTruth) -> Result<SubspaceStats> {
    let mut counts = [0usize; 4];
    let mut total = 0usize;
    let mut pos_sizes = 0usize;
    let mut neg_sizes = 0usize;
    let mut offset = 0usize;
    for video in annotated {
        let labels = sealed
            .labels(&video.id)
            .ok_or(Error::MissingGroundTruth { index: offset })?;
        if labels.len() != video.snippets.len() {
            return Err(Error::MissingGroundTruth {
                index: offset + labels.len().min(video.snippets.len()),
            });
        }
        for (snippet, &truth) in video.snippets.iter().zip(labels) {
            if let Supervision::Pseudo { partition, .. } = snippet.supervision() {
                let slot = Subspace::ALL
                    .iter()
                    .position(|s| *s == partition.subspace_of(truth))
                    .expect("four subspaces");
                counts[slot] += 1;
                total += 1;
                pos_sizes += partition.positives().len();
                neg_sizes += partition.negatives().len();
            }
        }
        offset += video.snippets.len();
    }
    if total == 0 {
        return Ok(SubspaceStats::default());
    }
    let n = total as f64;
    let mistaken = total - counts[0];
    let given = |k: usize| {
        if mistaken == 0 {
            0.0
        } else {
            counts[k] as f64 / mistaken as f64
        }
    };
    Ok(SubspaceStats {
        snippets: total,
        target: counts[0] as f64 / n,
        positive: counts[1] as f64 / n,
        ambiguous: counts[2] as f64 / n,
        negative: counts[3] as f64 / n,
        mistaken,
        positive_given_mistake: given(1),
        ambiguous_given_mistake: given(2),
        negative_given_mistake: given(3),
        mean_positives: pos_sizes as f64 / n,
        mean_negatives: neg_sizes as f64 / n,
    })
}

/// Evaluation hook called after each pseudo-label refresh. Keeps hidden
/// ground truth out of the training entry points.
pub trait PseudoLabelAudit {
    fn audit(&self, annotated: &[VideoRecord]) -> Result<PseudoAudit>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PseudoAudit {
    pub pseudo_accuracy: f64,
    pub subspaces: SubspaceStats,
}

impl PseudoLabelAudit for SealedTruth {
    fn audit(&self, annotated: &[VideoRecord]) -> Result<PseudoAudit> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for video in annotated {
            let labels = self
                .labels(&video.id)
                .ok_or(Error::MissingGroundTruth { index: total })?;
            for (snippet, &truth) in video.snippets.iter().zip(labels) {
                let predicted = match snippet.supervision() {
                    Supervision::Pseudo { class, .. } => *class,
                    Supervision::Soft(d) => d.argmax(),
                    _ => continue,
                };
                correct += usize::from(predicted == truth);
                total += 1;
            }
        }
        Ok(PseudoAudit {
            pseudo_accuracy: if total == 0 {
                0.0
            } else {
                correct as f64 / total as f64
            },
            subspaces: subspace_statistics(annotated, self)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub phase: &'static str,
    pub epoch: usize,
    /// Mean of the per-step loss breakdowns.
    pub loss: LossBreakdown,
    pub learning_rate: f64,
    pub audit: Option<PseudoAudit>,
}

/// One training example: model input plus supervision.
struct Example {
    input: Vec<f64>,
    supervision: Supervision,
    mask_target: Option<bool>,
}

fn labeled_examples(videos: &[VideoRecord], config: &ExperimentConfig) -> Result<Vec<Example>> {
    let bg = config.class_count;
    let mut out = Vec::new();
    for video in videos {
        for (i, input) in video_inputs(video, config.context_window).into_iter().enumerate() {
            let sup = video.snippets[i].supervision().clone();
            let label = match sup {
                Supervision::GroundTruth(label) => label,
                _ => return Err(Error::UnresolvedSupervision { index: out.len() }),
            };
            out.push(Example {
                input,
                supervision: sup,
                mask_target: Some(label != bg),
            });
        }
    }
    Ok(out)
}

fn unlabeled_examples(videos: &[VideoRecord], config: &ExperimentConfig) -> Vec<Example> {
    videos
        .iter()
        .flat_map(|v| {
            video_inputs(v, config.context_window)
                .into_iter()
                .zip(&v.snippets)
                .map(|(input, s)| Example {
                    input,
                    supervision: s.supervision().clone(),
                    mask_target: None,
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

struct Optimizer {
    state: OptimizerState,
    schedule: CosineSchedule,
    grads: ParamSet,
}

/// Forward, loss and accumulated gradients for one mixed batch.
fn batch_gradients(
    params: &ModelParams,
    batch: &[&Example],
    settings: &LossSettings,
    grads: &mut ParamSet,
    refresh: Option<&ExperimentConfig>,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let outputs: Vec<ForwardOutput> = batch
        .iter()
        .map(|ex| forward(params, &ex.input))
        .collect::<Result<_>>()?;
    let refreshed: Vec<Option<Supervision>> = batch
        .iter()
        .zip(&outputs)
        .map(|(ex, out)| match (refresh, &ex.supervision) {
            (Some(config), Supervision::Pseudo { .. } | Supervision::Soft(_)) => {
                Some(pseudo_supervision(&out.dist, config, rng))
            }
            _ => None,
        })
        .collect();
    let inputs: Vec<LossInput<'_>> = batch
        .iter()
        .zip(&outputs)
        .zip(&refreshed)
        .map(|((ex, out), fresh)| LossInput {
            supervision: fresh.as_ref().unwrap_or(&ex.supervision),
            dist: &out.dist,
            mask_score: out.mask_score,
            mask_target: ex.mask_target,
        })
        .collect();
    let (breakdown, g) = combined_loss(&inputs, settings)?;
    grads.fill_zero();
    for ((out, gl), &gm) in outputs.iter().zip(&g.logits).zip(&g.mask) {
        if gm == 0.0 && gl.iter().all(|&v| v == 0.0) {
            continue;
        }
        backward_into(params, &out.cache, gl, gm, grads)?;
    }
    Ok(breakdown)
}

fn accumulate(sum: &mut LossBreakdown, b: &LossBreakdown) {
    sum.labeled.target += b.labeled.target;
    sum.labeled.positive += b.labeled.positive;
    sum.labeled.negative += b.labeled.negative;
    sum.unlabeled.target += b.unlabeled.target;
    sum.unlabeled.positive += b.unlabeled.positive;
    sum.unlabeled.negative += b.unlabeled.negative;
    sum.mask += b.mask;
    sum.alpha = b.alpha;
}

fn mean_breakdown(mut sum: LossBreakdown, steps: usize) -> LossBreakdown {
    let k = 1.0 / steps.max(1) as f64;
    for t in [&mut sum.labeled, &mut sum.unlabeled] {
        t.target *= k;
        t.positive *= k;
        t.negative *= k;
    }
    sum.mask *= k;
    sum.total = sum.recomputed_total();
    sum
}

/// Runs `epochs` passes over the labeled examples. Unlabeled examples (if
/// any) ride along: each step draws `ceil(N_u / steps)` of them from an
/// independent shuffle, so the labeled batch order never depends on them.
/// `relabel` is called at the start of each epoch to refresh pseudo-labels.
#[allow(clippy::too_many_arguments)]
fn run_epochs(
    params: &mut ModelParams,
    labeled: &[Example],
    unlabeled: &mut [Example],
    config: &ExperimentConfig,
    settings: &LossSettings,
    epochs: usize,
    streams: (u64, u64),
    phase: &'static str,
    mut relabel: impl FnMut(&ModelParams, usize, &mut [Example]) -> Result<Option<PseudoAudit>>,
) -> Result<Vec<EpochLog>> {
    if labeled.is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    let steps_per_epoch = labeled.len().div_ceil(config.batch_size);
    let per_step_unlabeled = if unlabeled.is_empty() {
        0
    } else {
        unlabeled.len().div_ceil(steps_per_epoch)
    };
    let mut opt = Optimizer {
        state: OptimizerState::new(params.shape()),
        schedule: CosineSchedule {
            base: config.learning_rate,
            total_steps: (steps_per_epoch * epochs) as u64,
        },
        grads: ParamSet::zeros(params.shape()),
    };
    let mut rng_l = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, streams.0, 0));
    let mut rng_u = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, streams.1, 0));
    let use_unlabeled = settings.alpha != 0.0 && !unlabeled.is_empty();
    let step_refresh =
        (config.partition_refresh == PartitionRefresh::Step).then_some(config);
    let mut logs = Vec::with_capacity(epochs);
    let mut order_l: Vec<usize> = (0..labeled.len()).collect();
    let mut order_u: Vec<usize> = (0..unlabeled.len()).collect();

    for epoch in 0..epochs {
        let audit = relabel(params, epoch, unlabeled)?;
        order_l.shuffle(&mut rng_l);
        order_u.shuffle(&mut rng_u);
        let mut sum = LossBreakdown::default();
        let mut lr = 0.0;
        for s in 0..steps_per_epoch {
            let mut batch: Vec<&Example> = order_l
                [s * config.batch_size..((s + 1) * config.batch_size).min(labeled.len())]
                .iter()
                .map(|&i| &labeled[i])
                .collect();
            if use_unlabeled {
                let lo = (s * per_step_unlabeled).min(unlabeled.len());
                let hi = ((s + 1) * per_step_unlabeled).min(unlabeled.len());
                batch.extend(order_u[lo..hi].iter().map(|&i| &unlabeled[i]));
            }
            let breakdown = batch_gradients(
                params,
                &batch,
                settings,
                &mut opt.grads,
                step_refresh,
                &mut rng_u,
            )?;
            accumulate(&mut sum, &breakdown);
            lr = opt.schedule.rate_at(opt.state.steps_taken());
            step(params, &opt.grads, &mut opt.state, lr)?;
        }
        logs.push(EpochLog {
            phase,
            epoch,
            loss: mean_breakdown(sum, steps_per_epoch),
            learning_rate: lr,
            audit,
        });
    }
    Ok(logs)
}

/// Supervised training from the current parameters on labeled videos only,
/// with target CE, negative learning on every non-target class and the mask
/// loss.
pub fn train_supervised(
    params: &mut ModelParams,
    labeled: &[VideoRecord],
    config: &ExperimentConfig,
    epochs: usize,
    stream: u64,
) -> Result<Vec<EpochLog>> {
    let examples = labeled_examples(labeled, config)?;
    let settings = LossSettings::supervised(config.normalize_sets);
    run_epochs(
        params,
        &examples,
        &mut [],
        config,
        &settings,
        epochs,
        (stream, stream + 100),
        "pretrain",
        |_, _, _| Ok(None),
    )
}

/// Initializes a model from the config seed and pre-trains it for
/// `epochs_pretrain` epochs.
pub fn pretrain(labeled: &[VideoRecord], config: &ExperimentConfig) -> Result<(ModelParams, Vec<EpochLog>)> {
    if labeled.is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    let mut params = init_params(config);
    let logs = train_supervised(&mut params, labeled, config, config.epochs_pretrain, STREAM_PRETRAIN)?;
    Ok((params, logs))
}

/// Self-training from `params`. Pseudo-labels and partitions are refreshed
/// once per epoch (or every step when configured) and the configured
/// objective is optimized over labeled and pseudo-labeled snippets.
pub fn self_train(
    params: &ModelParams,
    labeled: &[VideoRecord],
    unlabeled: &[VideoRecord],
    config: &ExperimentConfig,
    audit: Option<&dyn PseudoLabelAudit>,
) -> Result<(ModelParams, Vec<EpochLog>)> {
    let mut params = params.clone();
    let examples = labeled_examples(labeled, config)?;
    let mut pool = unlabeled_examples(unlabeled, config);
    let settings = LossSettings::from_config(config);
    let logs = run_epochs(
        &mut params,
        &examples,
        &mut pool,
        config,
        &settings,
        config.epochs_self_train,
        (STREAM_SELF_LABELED, STREAM_SELF_UNLABELED),
        "self-train",
        |current, epoch, pool| {
            if unlabeled.is_empty() {
                return Ok(None);
            }
            let annotated = assign_pseudo_labels(current, unlabeled, config, epoch as u64 + 1)?;
            let mut k = 0;
            for video in &annotated {
                for s in &video.snippets {
                    pool[k].supervision = s.supervision().clone();
                    k += 1;
                }
            }
            audit.map(|a| a.audit(&annotated)).transpose()
        },
    )?;
    Ok((params, logs))
}

/// Snippet-level classification accuracy against per-snippet labels.
pub fn snippet_accuracy(
    params: &ModelParams,
    videos: &[VideoRecord],
    config: &ExperimentConfig,
) -> Result<f64> {
    let per_video: Vec<(usize, usize)> = videos
        .par_iter()
        .map(|v| {
            let (dists, _) = predict_video(params, v, config)?;
            let mut correct = 0;
            let mut total = 0;
            for (d, s) in dists.iter().zip(&v.snippets) {
                if let Supervision::GroundTruth(label) = s.supervision() {
                    correct += usize::from(d.argmax() == *label);
                    total += 1;
                }
            }
            Ok((correct, total))
        })
        .collect::<Result<_>>()?;
    let (c, t) = per_video
        .into_iter()
        .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(if t == 0 { 0.0 } else { c as f64 / t as f64 })
}
