//! A one-hidden-layer tanh classifier trained with plain mini-batch SGD.
//!
//! Parameters live in a single flat [`ParamVector`] laid out as
//! `W1 | b1 | W2 | b2`, each weight matrix row-major with one row per
//! output unit:
//!
//! | block | shape                      | flat offset                          |
//! |-------|----------------------------|--------------------------------------|
//! | `W1`  | `hidden_dim × input_dim`   | `0`                                  |
//! | `b1`  | `hidden_dim`               | `hidden·input`                       |
//! | `W2`  | `num_classes × hidden_dim` | `hidden·input + hidden`              |
//! | `b2`  | `num_classes`              | `hidden·input + hidden + classes·hidden` |
//!
//! Flat indices are what the covert channel agrees on, so this order is part
//! of the wire contract between sender and receiver.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

/// Flat ranges of the four parameter blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dim,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::config("input_dim and hidden_dim must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.input_dim * self.hidden_dim
            + self.hidden_dim
            + self.hidden_dim * self.num_classes
            + self.num_classes
    }

    pub fn layout(&self) -> Layout {
        let w1 = 0..self.input_dim * self.hidden_dim;
        let b1 = w1.end..w1.end + self.hidden_dim;
        let w2 = b1.end..b1.end + self.hidden_dim * self.num_classes;
        let b2 = w2.end..w2.end + self.num_classes;
        Layout { w1, b1, w2, b2 }
    }
}

/// Flat model parameters tied to the [`ModelSpec`] that shapes them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    spec: ModelSpec,
}

impl ParamVector {
    /// Wraps `values`, checking length and finiteness.
    pub fn new(spec: ModelSpec, values: Vec<f64>) -> Result<Self> {
        let expected = spec.parameter_count();
        if values.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("parameter {i} is not finite")));
        }
        Ok(Self { values, spec })
    }

    pub fn zeros(spec: ModelSpec) -> Self {
        Self {
            values: vec![0.0; spec.parameter_count()],
            spec,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Returns `self * factor` coordinate-wise.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            spec: self.spec,
        }
    }
}

/// Labelled samples, features stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
    num_classes: usize,
    seed: u64,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        input_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(Error::Dimension {
                expected: labels.len() * input_dim,
                actual: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::config(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(Self {
            features,
            labels,
            input_dim,
            num_classes,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Rows picked by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            labels,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            seed: self.seed,
        }
    }

    /// Same features with replacement labels.
    pub fn relabeled(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(
            self.features.clone(),
            labels,
            self.input_dim,
            self.num_classes,
            self.seed,
        )
    }

    fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        if self.input_dim != spec.input_dim {
            return Err(Error::Dimension {
                expected: spec.input_dim,
                actual: self.input_dim,
            });
        }
        if self.num_classes != spec.num_classes {
            return Err(Error::Dimension {
                expected: spec.num_classes,
                actual: self.num_classes,
            });
        }
        Ok(())
    }
}

/// Gaussian-blob classification task: fixed class means, samples drawn on
/// demand. Train and validation sets drawn from one task share their means.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    spec: ModelSpec,
    means: Vec<f64>,
}

impl SyntheticTask {
    /// Class means uniform in `[-1, 1]^input_dim`, drawn class by class.
    pub fn new(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let means = (0..spec.num_classes * spec.input_dim)
            .map(|_| rng.uniform(-1.0, 1.0))
            .collect();
        Self { spec, means }
    }

    pub fn class_mean(&self, class: usize) -> &[f64] {
        let d = self.spec.input_dim;
        &self.means[class * d..(class + 1) * d]
    }

    /// `samples_per_class` points per class, interleaved by class
    /// (`0, 1, …, k-1, 0, 1, …`), each `mean + spread · N(0, I)`.
    pub fn sample(&self, samples_per_class: usize, cluster_spread: f64, seed: u64) -> Dataset {
        let d = self.spec.input_dim;
        let k = self.spec.num_classes;
        let mut rng = SplitMix64::new(seed);
        let mut features = Vec::with_capacity(samples_per_class * k * d);
        let mut labels = Vec::with_capacity(samples_per_class * k);
        for _ in 0..samples_per_class {
            for class in 0..k {
                let mean = self.class_mean(class);
                features.extend(mean.iter().map(|m| m + cluster_spread * rng.next_gaussian()));
                labels.push(class);
            }
        }
        Dataset {
            features,
            labels,
            input_dim: d,
            num_classes: k,
            seed,
        }
    }
}

pub fn generate_dataset(
    spec: ModelSpec,
    samples_per_class: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    spec.validate()?;
    if samples_per_class == 0 {
        return Err(Error::config("samples_per_class must be at least 1"));
    }
    if !(cluster_spread > 0.0 && cluster_spread.is_finite()) {
        return Err(Error::config("cluster_spread must be positive"));
    }
    let task = SyntheticTask::new(spec, seed);
    Ok(task.sample(samples_per_class, cluster_spread, derive_seed(seed, 1)))
}

/// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
pub fn init_params(spec: ModelSpec, seed: u64) -> ParamVector {
    let mut rng = SplitMix64::new(seed);
    let layout = spec.layout();
    let mut values = vec![0.0; spec.parameter_count()];
    let bound1 = 1.0 / (spec.input_dim as f64).sqrt();
    for v in &mut values[layout.w1] {
        *v = rng.uniform(-bound1, bound1);
    }
    let bound2 = 1.0 / (spec.hidden_dim as f64).sqrt();
    for v in &mut values[layout.w2] {
        *v = rng.uniform(-bound2, bound2);
    }
    ParamVector { values, spec }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            learning_rate: 0.1,
            batch_size: 32,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be non-negative"));
        }
        Ok(())
    }
}

/// Scratch buffers for one forward/backward pass.
struct Workspace {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    d_hidden: Vec<f64>,
}

impl Workspace {
    fn new(spec: &ModelSpec) -> Self {
        Self {
            hidden: vec![0.0; spec.hidden_dim],
            logits: vec![0.0; spec.num_classes],
            d_hidden: vec![0.0; spec.hidden_dim],
        }
    }
}

fn forward(spec: &ModelSpec, layout: &Layout, params: &[f64], x: &[f64], ws: &mut Workspace) {
    let d = spec.input_dim;
    let h = spec.hidden_dim;
    let w1 = &params[layout.w1.clone()];
    let b1 = &params[layout.b1.clone()];
    let w2 = &params[layout.w2.clone()];
    let b2 = &params[layout.b2.clone()];
    for (j, out) in ws.hidden.iter_mut().enumerate() {
        let row = &w1[j * d..(j + 1) * d];
        let a: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b1[j];
        *out = a.tanh();
    }
    for (c, out) in ws.logits.iter_mut().enumerate() {
        let row = &w2[c * h..(c + 1) * h];
        *out = row.iter().zip(&ws.hidden).map(|(w, hj)| w * hj).sum::<f64>() + b2[c];
    }
}

/// Converts logits to probabilities in place, returning `-ln p[label]`.
fn softmax_xent(logits: &mut [f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
    -logits[label].max(f64::MIN_POSITIVE).ln()
}

/// Mean cross-entropy over `rows` and its gradient, accumulated into `grad`
/// (which is overwritten).
fn loss_and_grad_into(
    spec: &ModelSpec,
    layout: &Layout,
    params: &[f64],
    data: &Dataset,
    rows: &[usize],
    grad: &mut [f64],
    ws: &mut Workspace,
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let d = spec.input_dim;
    let h = spec.hidden_dim;
    let w2 = &params[layout.w2.clone()];
    let mut loss = 0.0;
    for &i in rows {
        let x = data.row(i);
        let label = data.labels[i];
        forward(spec, layout, params, x, ws);
        loss += softmax_xent(&mut ws.logits, label);
        ws.logits[label] -= 1.0;
        let dz = &ws.logits;

        ws.d_hidden.iter_mut().for_each(|v| *v = 0.0);
        {
            let (_, rest) = grad.split_at_mut(layout.w2.start);
            let (gw2, gb2) = rest.split_at_mut(layout.b2.start - layout.w2.start);
            for (c, &dzc) in dz.iter().enumerate() {
                gb2[c] += dzc;
                let grow = &mut gw2[c * h..(c + 1) * h];
                let wrow = &w2[c * h..(c + 1) * h];
                for j in 0..h {
                    grow[j] += dzc * ws.hidden[j];
                    ws.d_hidden[j] += dzc * wrow[j];
                }
            }
        }
        let (gw1, rest) = grad.split_at_mut(layout.b1.start);
        let gb1 = &mut rest[..h];
        for j in 0..h {
            let hj = ws.hidden[j];
            let da = ws.d_hidden[j] * (1.0 - hj * hj);
            gb1[j] += da;
            let grow = &mut gw1[j * d..(j + 1) * d];
            for (g, xi) in grow.iter_mut().zip(x) {
                *g += da * xi;
            }
        }
    }
    let scale = 1.0 / rows.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    loss * scale
}

/// Mean softmax cross-entropy over the whole dataset and its analytic
/// gradient with respect to every parameter.
pub fn loss_and_gradient(params: &ParamVector, data: &Dataset) -> Result<(f64, Vec<f64>)> {
    let spec = params.spec();
    data.check_spec(&spec)?;
    let layout = spec.layout();
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; spec.parameter_count()];
    let mut ws = Workspace::new(&spec);
    let loss = loss_and_grad_into(&spec, &layout, params.values(), data, &rows, &mut grad, &mut ws);
    Ok((loss, grad))
}

/// Mean softmax cross-entropy over the whole dataset.
pub fn loss(params: &ParamVector, data: &Dataset) -> Result<f64> {
    let spec = params.spec();
    data.check_spec(&spec)?;
    let layout = spec.layout();
    let mut ws = Workspace::new(&spec);
    let mut total = 0.0;
    for i in 0..data.len() {
        forward(&spec, &layout, params.values(), data.row(i), &mut ws);
        total += softmax_xent(&mut ws.logits, data.labels[i]);
    }
    Ok(total / data.len().max(1) as f64)
}

/// Runs `epochs` passes of mini-batch SGD. Each epoch visits the rows in a
/// fresh seeded shuffle; the last batch of an epoch may be short.
pub fn train_local(
    params: &ParamVector,
    data: &Dataset,
    training: &TrainingConfig,
    seed: u64,
) -> Result<ParamVector> {
    training.validate()?;
    let spec = params.spec();
    data.check_spec(&spec)?;
    let mut out = params.clone();
    if training.epochs == 0 || training.learning_rate == 0.0 || data.is_empty() {
        return Ok(out);
    }
    let layout = spec.layout();
    let mut rng = SplitMix64::new(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; spec.parameter_count()];
    let mut ws = Workspace::new(&spec);
    for _ in 0..training.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(training.batch_size) {
            loss_and_grad_into(&spec, &layout, &out.values, data, batch, &mut grad, &mut ws);
            for (w, g) in out.values.iter_mut().zip(&grad) {
                *w -= training.learning_rate * g;
            }
        }
    }
    Ok(out)
}

/// Class scores for one input.
pub fn predict_logits(params: &ParamVector, x: &[f64]) -> Vec<f64> {
    let spec = params.spec();
    let mut ws = Workspace::new(&spec);
    forward(&spec, &spec.layout(), params.values(), x, &mut ws);
    ws.logits
}

/// Fraction of rows whose argmax logit equals the label. Ties go to the
/// lowest class index.
pub fn evaluate(params: &ParamVector, data: &Dataset) -> Result<f64> {
    let spec = params.spec();
    data.check_spec(&spec)?;
    if data.is_empty() {
        return Err(Error::config("cannot evaluate on an empty dataset"));
    }
    let layout = spec.layout();
    let mut ws = Workspace::new(&spec);
    let mut correct = 0usize;
    for i in 0..data.len() {
        forward(&spec, &layout, params.values(), data.row(i), &mut ws);
        let mut best = 0;
        for c in 1..ws.logits.len() {
            if ws.logits[c] > ws.logits[best] {
                best = c;
            }
        }
        if best == data.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(i: usize, h: usize, c: usize) -> ModelSpec {
        ModelSpec::new(i, h, c).unwrap()
    }

    #[test]
    fn parameter_count_matches_layout() {
        let s = spec(10, 16, 10);
        assert_eq!(s.parameter_count(), 10 * 16 + 16 + 16 * 10 + 10);
        let l = s.layout();
        assert_eq!(l.b2.end, s.parameter_count());
        assert_eq!(init_params(s, 0).len(), s.parameter_count());
    }

    #[test]
    fn rejects_single_class() {
        assert!(ModelSpec::new(2, 2, 1).is_err());
        assert!(ModelSpec::new(0, 2, 2).is_err());
    }

    #[test]
    fn param_vector_checks_length_and_finiteness() {
        let s = spec(2, 2, 2);
        assert!(matches!(
            ParamVector::new(s, vec![0.0; 3]),
            Err(Error::Dimension { .. })
        ));
        let mut v = vec![0.0; s.parameter_count()];
        v[1] = f64::NAN;
        assert!(ParamVector::new(s, v).is_err());
    }

    #[test]
    fn one_sample_per_class() {
        let d = generate_dataset(spec(2, 8, 2), 1, 0.1, 7).unwrap();
        assert_eq!(d.len(), 2);
        let mut labels = d.labels().to_vec();
        labels.sort();
        assert_eq!(labels, vec![0, 1]);
    }

    #[test]
    fn dataset_is_deterministic() {
        let a = generate_dataset(spec(2, 8, 2), 5, 0.1, 7).unwrap();
        let b = generate_dataset(spec(2, 8, 2), 5, 0.1, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(spec(2, 8, 2), 5, 0.1, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_biases_zero_and_seeded() {
        let s = spec(2, 2, 2);
        let p = init_params(s, 11);
        let l = s.layout();
        assert!(p.values()[l.b1].iter().all(|&b| b == 0.0));
        assert!(p.values()[l.b2].iter().all(|&b| b == 0.0));
        assert_eq!(p, init_params(s, 11));
        assert_ne!(init_params(s, 3), init_params(s, 4));
    }

    #[test]
    fn init_weights_within_fan_in_bound() {
        let s = spec(16, 9, 3);
        let p = init_params(s, 2);
        let l = s.layout();
        assert!(p.values()[l.w1].iter().all(|w| w.abs() <= 0.25));
        assert!(p.values()[l.w2].iter().all(|w| w.abs() <= 1.0 / 3.0));
    }

    #[test]
    fn zero_step_training_is_identity() {
        let s = spec(3, 4, 2);
        let data = generate_dataset(s, 10, 0.3, 1).unwrap();
        let p = init_params(s, 5);
        let lr0 = TrainingConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert_eq!(train_local(&p, &data, &lr0, 9).unwrap(), p);
        let e0 = TrainingConfig {
            epochs: 0,
            ..Default::default()
        };
        assert_eq!(train_local(&p, &data, &e0, 9).unwrap(), p);
    }

    #[test]
    fn training_rejects_dimension_mismatch() {
        let data = generate_dataset(spec(3, 4, 2), 2, 0.3, 1).unwrap();
        let p = init_params(spec(4, 4, 2), 5);
        assert!(matches!(
            train_local(&p, &data, &TrainingConfig::default(), 0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let s = spec(4, 6, 3);
        let data = generate_dataset(s, 20, 0.5, 3).unwrap();
        let p = init_params(s, 1);
        let cfg = TrainingConfig::default();
        let a = train_local(&p, &data, &cfg, 77).unwrap();
        let b = train_local(&p, &data, &cfg, 77).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, train_local(&p, &data, &cfg, 78).unwrap());
    }

    #[test]
    fn evaluate_single_correct_sample() {
        let s = spec(2, 2, 2);
        let data = Dataset::new(vec![1.0, 0.0], vec![0], 2, 2, 0).unwrap();
        // All logits tie at zero, so the lowest class wins.
        let p = ParamVector::zeros(s);
        assert_eq!(evaluate(&p, &data).unwrap(), 1.0);
    }

    #[test]
    fn evaluate_rejects_empty_dataset() {
        let s = spec(2, 2, 2);
        let data = Dataset::new(vec![], vec![], 2, 2, 0).unwrap();
        assert!(evaluate(&ParamVector::zeros(s), &data).is_err());
    }

    #[test]
    fn linear_separable_blobs_train_above_ninety_percent() {
        let s = spec(10, 16, 10);
        let data = generate_dataset(s, 50, 0.5, 1).unwrap();
        let cfg = TrainingConfig {
            epochs: 30,
            learning_rate: 0.1,
            batch_size: 32,
        };
        let trained = train_local(&init_params(s, 2), &data, &cfg, 3).unwrap();
        let acc = evaluate(&trained, &data).unwrap();
        assert!(acc > 0.9, "train accuracy {acc}");
    }

    #[test]
    fn perfect_fit_scores_zero_on_shifted_labels() {
        let s = spec(2, 8, 3);
        let data = generate_dataset(s, 20, 0.05, 9).unwrap();
        let cfg = TrainingConfig {
            epochs: 50,
            learning_rate: 0.2,
            batch_size: 8,
        };
        let trained = train_local(&init_params(s, 1), &data, &cfg, 2).unwrap();
        assert_eq!(evaluate(&trained, &data).unwrap(), 1.0);
        let shifted: Vec<usize> = data.labels().iter().map(|l| (l + 1) % 3).collect();
        let wrong = data.relabeled(shifted).unwrap();
        assert_eq!(evaluate(&trained, &wrong).unwrap(), 0.0);
    }

    #[test]
    fn training_reduces_loss() {
        let s = spec(5, 8, 3);
        let data = generate_dataset(s, 30, 0.5, 4).unwrap();
        let p = init_params(s, 0);
        let before = loss(&p, &data).unwrap();
        let after = loss(
            &train_local(&p, &data, &TrainingConfig::default(), 1).unwrap(),
            &data,
        )
        .unwrap();
        assert!(after < before);
    }
}
