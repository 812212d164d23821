//! Per-snippet model: a one-hidden-layer ReLU trunk feeding a softmax
//! classification head over `C + 1` classes and a sigmoid mask head, trained
//! with Adam under cosine learning-rate decay.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{softmax_unchecked, ClassDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden: usize,
    /// Label-space size `C + 1`.
    pub classes: usize,
}

/// The six parameter tensors, stored row-major. Used for both parameters and
/// their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    /// `input_dim x hidden`
    pub trunk_weight: Vec<f64>,
    pub trunk_bias: Vec<f64>,
    /// `hidden x classes`
    pub class_weight: Vec<f64>,
    pub class_bias: Vec<f64>,
    pub mask_weight: Vec<f64>,
    pub mask_bias: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 6] = [
    "trunk_weight",
    "trunk_bias",
    "class_weight",
    "class_bias",
    "mask_weight",
    "mask_bias",
];

impl ParamSet {
    pub fn zeros(shape: ModelShape) -> Self {
        let ModelShape {
            input_dim,
            hidden,
            classes,
        } = shape;
        Self {
            trunk_weight: vec![0.0; input_dim * hidden],
            trunk_bias: vec![0.0; hidden],
            class_weight: vec![0.0; hidden * classes],
            class_bias: vec![0.0; classes],
            mask_weight: vec![0.0; hidden],
            mask_bias: vec![0.0; 1],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            &self.trunk_weight,
            &self.trunk_bias,
            &self.class_weight,
            &self.class_bias,
            &self.mask_weight,
            &self.mask_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.trunk_weight,
            &mut self.trunk_bias,
            &mut self.class_weight,
            &mut self.class_bias,
            &mut self.mask_weight,
            &mut self.mask_bias,
        ]
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors()
            .iter()
            .zip(TENSOR_NAMES)
            .find(|(t, _)| t.iter().any(|v| !v.is_finite()))
            .map(|(_, name)| name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    shape: ModelShape,
    pub values: ParamSet,
    /// Bumped on every optimizer update so stale caches can be detected.
    version: u64,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = ParamSet::zeros(shape);
        let mut fill = |w: &mut [f64], fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(&mut values.trunk_weight, shape.input_dim, shape.hidden);
        fill(&mut values.class_weight, shape.hidden, shape.classes);
        fill(&mut values.mask_weight, shape.hidden, 1);
        Self {
            shape,
            values,
            version: 0,
        }
    }

    pub fn zeros(shape: ModelShape) -> Self {
        Self {
            shape,
            values: ParamSet::zeros(shape),
            version: 0,
        }
    }

    pub fn from_values(shape: ModelShape, values: ParamSet) -> Result<Self> {
        let expected = ParamSet::zeros(shape);
        for ((name, got), want) in TENSOR_NAMES
            .iter()
            .zip(values.tensors())
            .zip(expected.tensors())
        {
            if got.len() != want.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{name} has {} values, expected {}",
                    got.len(),
                    want.len()
                )));
            }
        }
        if let Some(name) = values.first_non_finite() {
            return Err(Error::ShapeMismatch(format!("{name} holds non-finite values")));
        }
        Ok(Self {
            shape,
            values,
            version: 0,
        })
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Marks the parameters as changed outside the optimizer.
    pub fn touch(&mut self) {
        self.version += 1;
    }
}

/// Activations saved by [`forward`] for the matching [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
    mask_score: f64,
    version: u64,
}

impl ForwardCache {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mask_score(&self) -> f64 {
        self.mask_score
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub dist: ClassDistribution,
    pub mask_score: f64,
    pub cache: ForwardCache,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Class logits and mask logit for one input, plus the hidden activation.
fn logits(params: &ModelParams, input: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
    let ModelShape {
        input_dim,
        hidden,
        classes,
    } = params.shape;
    let v = &params.values;
    let mut h = v.trunk_bias.clone();
    for (i, &x) in input.iter().enumerate().take(input_dim) {
        if x == 0.0 {
            continue;
        }
        let row = &v.trunk_weight[i * hidden..(i + 1) * hidden];
        for (hj, w) in h.iter_mut().zip(row) {
            *hj += x * w;
        }
    }
    for hj in &mut h {
        *hj = hj.max(0.0);
    }
    let mut z = v.class_bias.clone();
    let mut mask_logit = v.mask_bias[0];
    for (j, &hj) in h.iter().enumerate() {
        if hj == 0.0 {
            continue;
        }
        let row = &v.class_weight[j * classes..(j + 1) * classes];
        for (zc, w) in z.iter_mut().zip(row) {
            *zc += hj * w;
        }
        mask_logit += hj * v.mask_weight[j];
    }
    (z, mask_logit, h)
}

/// Raw class logits, mainly for gradient checks.
pub fn class_logits(params: &ModelParams, input: &[f64]) -> Result<Vec<f64>> {
    check_input(params, input)?;
    Ok(logits(params, input).0)
}

fn check_input(params: &ModelParams, input: &[f64]) -> Result<()> {
    if input.len() != params.shape.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "input has {} features, model expects {}",
            input.len(),
            params.shape.input_dim
        )));
    }
    Ok(())
}

pub fn forward(params: &ModelParams, input: &[f64]) -> Result<ForwardOutput> {
    check_input(params, input)?;
    let (z, mask_logit, hidden) = logits(params, input);
    if let Some(index) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let probs = softmax_unchecked(&z);
    let mask_score = sigmoid(mask_logit);
    let dist = ClassDistribution::new(probs.clone())?;
    Ok(ForwardOutput {
        dist,
        mask_score,
        cache: ForwardCache {
            input: input.to_vec(),
            hidden,
            probs,
            mask_score,
            version: params.version,
        },
    })
}

/// Accumulates parameter gradients for one snippet into `grads`.
///
/// `grad_logits` is the loss gradient with respect to the class logits and
/// `grad_mask` the gradient with respect to the mask score (post-sigmoid).
pub fn backward_into(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_logits: &[f64],
    grad_mask: f64,
    grads: &mut ParamSet,
) -> Result<()> {
    if cache.version != params.version {
        return Err(Error::StaleCache {
            cache: cache.version,
            params: params.version,
        });
    }
    let ModelShape {
        input_dim,
        hidden,
        classes,
    } = params.shape;
    if grad_logits.len() != classes {
        return Err(Error::ShapeMismatch(format!(
            "logit gradient has {} entries, model has {classes} classes",
            grad_logits.len()
        )));
    }
    let v = &params.values;
    let s = cache.mask_score;
    let grad_mask_logit = grad_mask * s * (1.0 - s);

    let mut grad_hidden = vec![0.0; hidden];
    for (j, &hj) in cache.hidden.iter().enumerate() {
        if hj <= 0.0 {
            continue;
        }
        let row = &v.class_weight[j * classes..(j + 1) * classes];
        let grow = &mut grads.class_weight[j * classes..(j + 1) * classes];
        let mut acc = 0.0;
        for ((g, w), &dz) in grow.iter_mut().zip(row).zip(grad_logits) {
            *g += hj * dz;
            acc += w * dz;
        }
        grads.mask_weight[j] += hj * grad_mask_logit;
        acc += v.mask_weight[j] * grad_mask_logit;
        grad_hidden[j] = acc;
    }
    for (g, &dz) in grads.class_bias.iter_mut().zip(grad_logits) {
        *g += dz;
    }
    grads.mask_bias[0] += grad_mask_logit;

    for (g, &dh) in grads.trunk_bias.iter_mut().zip(&grad_hidden) {
        *g += dh;
    }
    for (i, &x) in cache.input.iter().enumerate().take(input_dim) {
        if x == 0.0 {
            continue;
        }
        let grow = &mut grads.trunk_weight[i * hidden..(i + 1) * hidden];
        for (g, &dh) in grow.iter_mut().zip(&grad_hidden) {
            *g += x * dh;
        }
    }
    Ok(())
}

pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_logits: &[f64],
    grad_mask: f64,
) -> Result<ParamSet> {
    let mut grads = ParamSet::zeros(params.shape);
    backward_into(params, cache, grad_logits, grad_mask, &mut grads)?;
    Ok(grads)
}

/// Cosine decay from `base` to zero over `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub base: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn rate_at(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.base;
        }
        let t = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// First and second moment accumulators for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    first: ParamSet,
    second: ParamSet,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(shape: ModelShape) -> Self {
        Self {
            first: ParamSet::zeros(shape),
            second: ParamSet::zeros(shape),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. A non-finite gradient aborts the step
/// before anything is modified.
pub fn step(
    params: &mut ModelParams,
    grads: &ParamSet,
    state: &mut OptimizerState,
    learning_rate: f64,
) -> Result<()> {
    if let Some(tensor) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient { tensor });
    }
    if grads.len() != params.values.len() {
        return Err(Error::ShapeMismatch(
            "gradient shape does not match parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let correct1 = 1.0 - b1.powi(t);
    let correct2 = 1.0 - b2.powi(t);
    let tensors = params.values.tensors_mut();
    let firsts = state.first.tensors_mut();
    let seconds = state.second.tensors_mut();
    for (((w, g), m), v) in tensors
        .into_iter()
        .zip(grads.tensors())
        .zip(firsts)
        .zip(seconds)
    {
        for i in 0..w.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / correct1;
            let v_hat = v[i] / correct2;
            w[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    params.version += 1;
    Ok(())
}

/// Input vector for snippet `index` with `window` neighbours on each side
/// concatenated; out-of-range neighbours are zero.
pub fn context_input(features: &[&[f64]], index: usize, window: usize) -> Vec<f64> {
    if window == 0 {
        return features[index].to_vec();
    }
    let d = features[index].len();
    let mut out = Vec::with_capacity(d * (2 * window + 1));
    for offset in 0..=(2 * window) {
        let pos = index as isize + offset as isize - window as isize;
        if pos < 0 || pos as usize >= features.len() {
            out.extend(std::iter::repeat_n(0.0, d));
        } else {
            out.extend_from_slice(features[pos as usize]);
        }
    }
    out
}

const CHECKPOINT_MAGIC: &str = "hpnl-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Text checkpoint: a magic/version line, a shape line, then one
/// `name count` line per tensor followed by its row-major values.
pub fn checkpoint_to_string(params: &ModelParams) -> String {
    let s = params.shape;
    let mut out = format!(
        "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nshape {} {} {}\n",
        s.input_dim, s.hidden, s.classes
    );
    for (name, tensor) in TENSOR_NAMES.iter().zip(params.values.tensors()) {
        let _ = writeln!(out, "{name} {}", tensor.len());
        let line: Vec<String> = tensor.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn checkpoint_from_str(text: &str, expected: ModelShape) -> Result<ModelParams> {
    let corrupt = |line: usize, reason: &str| Error::CorruptRecord {
        video: None,
        offset: line as u64,
        reason: format!("checkpoint line {}: {reason}", line + 1),
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::BadMagic)?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(CHECKPOINT_MAGIC) {
        return Err(Error::BadMagic);
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| corrupt(0, "missing version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (n, shape_line) = lines.next().ok_or_else(|| corrupt(1, "missing shape"))?;
    let dims: Vec<usize> = shape_line
        .split_whitespace()
        .skip(1)
        .map(|v| v.parse().map_err(|_| corrupt(n, "bad shape")))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(corrupt(n, "shape needs three dimensions"));
    }
    let shape = ModelShape {
        input_dim: dims[0],
        hidden: dims[1],
        classes: dims[2],
    };
    if shape != expected {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint shape {shape:?} differs from configured {expected:?}"
        )));
    }
    let mut values = ParamSet::zeros(shape);
    for (name, tensor) in TENSOR_NAMES.iter().zip(values.tensors_mut()) {
        let (n, head) = lines
            .next()
            .ok_or_else(|| corrupt(usize::MAX - 1, "truncated"))?;
        let mut head = head.split_whitespace();
        if head.next() != Some(*name) {
            return Err(corrupt(n, &format!("expected tensor {name}")));
        }
        let count: usize = head
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| corrupt(n, "bad tensor length"))?;
        if count != tensor.len() {
            return Err(Error::ShapeMismatch(format!(
                "{name} has {count} values, expected {}",
                tensor.len()
            )));
        }
        let (n, body) = lines.next().ok_or_else(|| corrupt(n + 1, "truncated"))?;
        let parsed: Vec<f64> = body
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| corrupt(n, "bad number")))
            .collect::<Result<_>>()?;
        if parsed.len() != count {
            return Err(Error::ShapeMismatch(format!(
                "{name} lists {} values, header says {count}",
                parsed.len()
            )));
        }
        *tensor = parsed;
    }
    ModelParams::from_values(shape, values)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, expected: ModelShape) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact {
                path: path.to_path_buf(),
            }
        } else {
            Error::io(path, e)
        }
    })?;
    checkpoint_from_str(&text, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const SHAPE: ModelShape = ModelShape {
        input_dim: 4,
        hidden: 5,
        classes: 3,
    };

    #[test]
    fn zero_weights_give_uniform_output() {
        let p = ModelParams::zeros(SHAPE);
        let out = forward(&p, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        for &q in out.dist.probs() {
            assert_abs_diff_eq!(q, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_eq!(out.mask_score, 0.5);
    }

    #[test]
    fn saturated_logit_gives_one_hot() {
        let mut p = ModelParams::zeros(SHAPE);
        p.values.trunk_weight[0] = 1.0; // input 0 -> hidden 0
        p.values.class_weight[1] = 100.0; // hidden 0 -> class 1
        let out = forward(&p, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(out.dist.prob(1) > 1.0 - 1e-12);
        assert_eq!(out.dist.argmax(), 1);
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let a = ModelParams::init(SHAPE, 0);
        let b = ModelParams::init(SHAPE, 0);
        assert_eq!(a, b);
        let x = [0.3, -0.7, 1.1, 0.2];
        let oa = forward(&a, &x).unwrap();
        let ob = forward(&b, &x).unwrap();
        assert_eq!(oa.dist.probs(), ob.dist.probs());
        assert_eq!(oa.mask_score.to_bits(), ob.mask_score.to_bits());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = ModelParams::zeros(SHAPE);
        assert!(matches!(forward(&p, &[1.0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = ModelParams::init(SHAPE, 3);
        let out = forward(&p, &[0.3, -0.7, 1.1, 0.2]).unwrap();
        let g = backward(&p, &out.cache, &[0.0; 3], 0.0).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn duplicate_snippet_doubles_gradient() {
        let p = ModelParams::init(SHAPE, 3);
        let out = forward(&p, &[0.3, -0.7, 1.1, 0.2]).unwrap();
        let up = [0.2, -0.5, 0.3];
        let once = backward(&p, &out.cache, &up, 0.4).unwrap();
        let mut twice = ParamSet::zeros(SHAPE);
        backward_into(&p, &out.cache, &up, 0.4, &mut twice).unwrap();
        backward_into(&p, &out.cache, &up, 0.4, &mut twice).unwrap();
        for (a, b) in once.tensors().iter().zip(twice.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(2.0 * x, *y);
            }
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut p = ModelParams::init(SHAPE, 3);
        let out = forward(&p, &[0.3, -0.7, 1.1, 0.2]).unwrap();
        let mut state = OptimizerState::new(SHAPE);
        let g = backward(&p, &out.cache, &[0.1, 0.0, -0.1], 0.0).unwrap();
        step(&mut p, &g, &mut state, 0.01).unwrap();
        assert_eq!(
            backward(&p, &out.cache, &[0.1, 0.0, -0.1], 0.0).unwrap_err(),
            Error::StaleCache {
                cache: 0,
                params: 1
            }
        );
    }

    #[test]
    fn zero_gradient_and_zero_rate_leave_params() {
        let mut p = ModelParams::init(SHAPE, 1);
        let before = p.values.clone();
        let mut state = OptimizerState::new(SHAPE);
        step(&mut p, &ParamSet::zeros(SHAPE), &mut state, 0.1).unwrap();
        assert_eq!(p.values, before);
        let mut g = ParamSet::zeros(SHAPE);
        g.class_bias[0] = 3.0;
        step(&mut p, &g, &mut state, 0.0).unwrap();
        assert_eq!(p.values, before);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = ModelParams::init(SHAPE, 1);
        let before = p.clone();
        let mut state = OptimizerState::new(SHAPE);
        let mut g = ParamSet::zeros(SHAPE);
        g.mask_weight[2] = f64::NAN;
        assert_eq!(
            step(&mut p, &g, &mut state, 0.1),
            Err(Error::NonFiniteGradient {
                tensor: "mask_weight"
            })
        );
        assert_eq!(p, before);
        assert_eq!(state.steps_taken(), 0);
    }

    /// Adam on one scalar with gradients 1, -2, 0.5, lr 0.1, evaluated by hand:
    /// m1 = 0.1, v1 = 0.001, mh = 1, vh = 1 -> w -= 0.1 * 1/(1+1e-8)
    /// m2 = 0.09 - 0.2 = -0.11, v2 = 0.000999 + 0.004 = 0.004999,
    ///   mh = -0.11/0.19, vh = 0.004999/0.001999
    /// m3 = -0.099 + 0.05 = -0.049, v3 = 0.004994001 + 0.00025 = 0.005244001,
    ///   mh = -0.049/0.271, vh = 0.005244001/0.002997001
    #[test]
    fn adam_scalar_trajectory() {
        let shape = ModelShape {
            input_dim: 1,
            hidden: 1,
            classes: 2,
        };
        let mut p = ModelParams::zeros(shape);
        let mut state = OptimizerState::new(shape);
        let mut expected = 0.0;
        let hand = [
            (1.0, 1.0),
            (-0.11 / 0.19, 0.004999 / 0.001999),
            (-0.049 / 0.271, 0.005244001 / 0.002997001),
        ];
        for (g, (mh, vh)) in [1.0, -2.0, 0.5].into_iter().zip(hand) {
            let mut grads = ParamSet::zeros(shape);
            grads.mask_bias[0] = g;
            step(&mut p, &grads, &mut state, 0.1).unwrap();
            expected -= 0.1 * mh / (f64::sqrt(vh) + 1e-8);
            assert_abs_diff_eq!(p.values.mask_bias[0], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = CosineSchedule {
            base: 0.01,
            total_steps: 100,
        };
        assert_eq!(s.rate_at(0), 0.01);
        assert_abs_diff_eq!(s.rate_at(50), 0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(s.rate_at(100), 0.0, epsilon = 1e-18);
        assert_abs_diff_eq!(s.rate_at(200), 0.0, epsilon = 1e-18);
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let p = ModelParams::init(SHAPE, 9);
        let text = checkpoint_to_string(&p);
        let back = checkpoint_from_str(&text, SHAPE).unwrap();
        assert_eq!(back.values, p.values);
        let other = ModelShape {
            hidden: 6,
            ..SHAPE
        };
        assert!(matches!(
            checkpoint_from_str(&text, other),
            Err(Error::ShapeMismatch(_))
        ));
        assert_eq!(checkpoint_from_str("nope 1\n", SHAPE).unwrap_err(), Error::BadMagic);
        assert!(matches!(
            checkpoint_from_str("hpnl-checkpoint 7\n", SHAPE),
            Err(Error::VersionMismatch { found: 7, .. })
        ));
        let truncated: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(checkpoint_from_str(&truncated, SHAPE).is_err());
    }

    #[test]
    fn context_window_pads_with_zeros() {
        let a = [1.0, 2.0];
        let b = [3.0, 4.0];
        let feats: Vec<&[f64]> = vec![&a, &b];
        assert_eq!(context_input(&feats, 0, 1), vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(context_input(&feats, 1, 0), vec![3.0, 4.0]);
    }
}
