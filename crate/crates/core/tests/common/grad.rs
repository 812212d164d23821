//! Finite-difference checks of every analytic gradient. Each check returns
//! the first mismatch as an error message.

use std::collections::BTreeSet;

use hybrid_pn::losses::{
    combined_loss, mask_loss, negative_loss, positive_loss, soft_target_loss, target_loss,
    LossInput, LossSettings,
};
use hybrid_pn::model::{backward, backward_into, forward, ModelParams, ModelShape, ParamSet};
use hybrid_pn::partition::partition_label_space;
use hybrid_pn::types::{ClassDistribution, Supervision};
use rand::Rng;

use super::{central_differences, compare_gradients, random_probs, rng, softmax};

const H: f64 = 1e-5;
const REL: f64 = 1e-5;
const ABS: f64 = 1e-8;

fn random_logits(r: &mut impl Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| r.random_range(-3.0..3.0)).collect()
}

fn random_subset(r: &mut impl Rng, k: usize) -> BTreeSet<usize> {
    (0..k).filter(|_| r.random_bool(0.4)).collect()
}

fn dist_of(z: &[f64]) -> ClassDistribution {
    ClassDistribution::softmax(z).unwrap()
}

pub type Check = std::result::Result<(), String>;

fn check(name: &str, case: usize, analytic: &[f64], numeric: &[f64]) -> Check {
    match compare_gradients(analytic, numeric, REL, ABS) {
        Some((i, a, n)) => Err(format!("{name} case {case}: coordinate {i} analytic {a} numeric {n}")),
        None => Ok(()),
    }
}

pub fn target(cases: usize) -> Check {
    let mut r = rng(1);
    for case in 0..cases {
        let k = r.random_range(2..=12);
        let z = random_logits(&mut r, k);
        let t = r.random_range(0..k);
        let (_, g) = target_loss(&dist_of(&z), t);
        let n = central_differences(&z, H, |zz| -softmax(zz)[t].ln());
        check("target", case, &g, &n)?;
    }
    Ok(())
}

pub fn negative(cases: usize) -> Check {
    let mut r = rng(2);
    for case in 0..cases {
        let k = r.random_range(2..=12);
        let z = random_logits(&mut r, k);
        let neg = random_subset(&mut r, k);
        let (_, g) = negative_loss(&dist_of(&z), &neg);
        let n = central_differences(&z, H, |zz| {
            let p = softmax(zz);
            neg.iter().map(|&c| -(1.0 - p[c]).ln()).sum()
        });
        check("negative", case, &g, &n)?;
    }
    Ok(())
}

pub fn positive(cases: usize) -> Check {
    let mut r = rng(3);
    for case in 0..cases {
        let k = r.random_range(2..=12);
        let z = random_logits(&mut r, k);
        let pos = random_subset(&mut r, k);
        let (_, g) = positive_loss(&dist_of(&z), &pos);
        let n = central_differences(&z, H, |zz| {
            let p = softmax(zz);
            pos.iter().map(|&c| -p[c].ln()).sum()
        });
        check("positive", case, &g, &n)?;
    }
    Ok(())
}

pub fn soft_target(cases: usize) -> Check {
    let mut r = rng(4);
    for case in 0..cases {
        let k = r.random_range(2..=12);
        let z = random_logits(&mut r, k);
        let q = softmax(&random_logits(&mut r, k));
        let soft = ClassDistribution::new(q.clone()).unwrap();
        let (_, g) = soft_target_loss(&dist_of(&z), &soft);
        let n = central_differences(&z, H, |zz| {
            let p = softmax(zz);
            -p.iter().zip(&q).map(|(pc, qc)| qc * pc.ln()).sum::<f64>()
        });
        check("soft", case, &g, &n)?;
    }
    Ok(())
}

pub fn mask(cases: usize) -> Check {
    let mut r = rng(5);
    for case in 0..cases {
        let n = r.random_range(1..=8);
        let s: Vec<f64> = (0..n).map(|_| r.random_range(0.02..0.98)).collect();
        let t: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        let (_, g) = mask_loss(&s, &t).unwrap();
        let num = central_differences(&s, H, |ss| {
            let total: f64 = ss
                .iter()
                .zip(&t)
                .map(|(&v, &y)| if y { -v.ln() } else { -(1.0 - v).ln() })
                .sum();
            total / ss.len() as f64
        });
        check("mask", case, &g, &num)?;
    }
    Ok(())
}

fn flatten(p: &ParamSet) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.iter().copied()).collect()
}

fn unflatten(shape: ModelShape, flat: &[f64]) -> ParamSet {
    let mut p = ParamSet::zeros(shape);
    let mut k = 0;
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = flat[k];
            k += 1;
        }
    }
    p
}

fn random_params(r: &mut impl Rng, shape: ModelShape) -> ModelParams {
    let mut p = ModelParams::init(shape, r.random());
    for t in p.values.tensors_mut() {
        for v in t.iter_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    p
}

/// Model backward against differences of a fixed linear functional of the
/// outputs: sum_j a_j z_j + b * mask_score.
pub fn model_backward(cases: usize) -> Check {
    let mut r = rng(6);
    for case in 0..cases {
        let shape = ModelShape {
            input_dim: r.random_range(1..=5),
            hidden: r.random_range(1..=6),
            classes: r.random_range(2..=5),
        };
        let params = random_params(&mut r, shape);
        let x: Vec<f64> = (0..shape.input_dim).map(|_| r.random_range(-2.0..2.0)).collect();
        let a: Vec<f64> = (0..shape.classes).map(|_| r.random_range(-1.0..1.0)).collect();
        let b = r.random_range(-1.0..1.0);
        let out = forward(&params, &x).unwrap();
        let g = backward(&params, &out.cache, &a, b).unwrap();
        let numeric = central_differences(&flatten(&params.values), H, |flat| {
            let p = ModelParams::from_values(shape, unflatten(shape, flat)).unwrap();
            let z = hybrid_pn::model::class_logits(&p, &x).unwrap();
            let m = forward(&p, &x).unwrap().mask_score;
            z.iter().zip(&a).map(|(zi, ai)| zi * ai).sum::<f64>() + b * m
        });
        check("model", case, &flatten(&g), &numeric)?;
    }
    Ok(())
}

/// Forward, combined loss and backward on a 3-snippet batch (one labeled,
/// one pseudo-labeled, one soft) against differences of the total loss.
pub fn end_to_end(cases: usize) -> Check {
    let mut r = rng(7);
    for case in 0..cases {
        let shape = ModelShape {
            input_dim: 4,
            hidden: 5,
            classes: 4,
        };
        let params = random_params(&mut r, shape);
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let settings = LossSettings {
            alpha: r.random_range(0.1..2.0),
            use_negative: true,
            use_positive: true,
            normalize_sets: r.random_bool(0.5),
        };
        let partition_source = ClassDistribution::new(random_probs(&mut r, 4, 1.0)).unwrap();
        let sups = vec![
            Supervision::GroundTruth(r.random_range(0..4)),
            Supervision::pseudo(partition_label_space(&partition_source, 0.5)),
            Supervision::Soft(ClassDistribution::new(random_probs(&mut r, 4, 2.0)).unwrap()),
        ];
        let masks = [Some(true), None, Some(false)];

        let loss_at = |p: &ModelParams| {
            let outs: Vec<_> = xs.iter().map(|x| forward(p, x).unwrap()).collect();
            let inputs: Vec<LossInput> = outs
                .iter()
                .zip(&sups)
                .zip(masks)
                .map(|((o, s), m)| LossInput {
                    supervision: s,
                    dist: &o.dist,
                    mask_score: o.mask_score,
                    mask_target: m,
                })
                .collect();
            combined_loss(&inputs, &settings).unwrap().0.total
        };

        let outs: Vec<_> = xs.iter().map(|x| forward(&params, x).unwrap()).collect();
        let inputs: Vec<LossInput> = outs
            .iter()
            .zip(&sups)
            .zip(masks)
            .map(|((o, s), m)| LossInput {
                supervision: s,
                dist: &o.dist,
                mask_score: o.mask_score,
                mask_target: m,
            })
            .collect();
        let (_, grads) = combined_loss(&inputs, &settings).unwrap();
        let mut total = ParamSet::zeros(shape);
        for ((o, gl), gm) in outs.iter().zip(&grads.logits).zip(&grads.mask) {
            backward_into(&params, &o.cache, gl, *gm, &mut total).unwrap();
        }
        let numeric = central_differences(&flatten(&params.values), H, |flat| {
            loss_at(&ModelParams::from_values(shape, unflatten(shape, flat)).unwrap())
        });
        if let Some((i, a, n)) = compare_gradients(&flatten(&total), &numeric, 1e-4, ABS) {
            return Err(format!("end-to-end case {case}: coordinate {i} analytic {a} numeric {n}"));
        }
    }
    Ok(())
}
