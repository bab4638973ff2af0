//! Two-layer perceptron trained with mini-batch SGD, and FedAvg.
//!
//! `probs = softmax(W2 relu(W1 x + b1) + b2)`, cross-entropy loss, all in f64.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ModelDims {
    fn w1_len(&self) -> usize {
        self.hidden * self.input
    }

    fn w2_len(&self) -> usize {
        self.classes * self.hidden
    }

    pub fn num_params(&self) -> usize {
        self.w1_len() + self.hidden + self.w2_len() + self.classes
    }
}

/// Flat parameter vector laid out as `[W1 | b1 | W2 | b2]`, matrices row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.num_params()],
        }
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let d = self.dims;
        let (w1, rest) = self.data.split_at(d.w1_len());
        let (b1, rest) = rest.split_at(d.hidden);
        let (w2, b2) = rest.split_at(d.w2_len());
        (w1, b1, w2, b2)
    }

    fn split_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let d = self.dims;
        let (w1, rest) = self.data.split_at_mut(d.w1_len());
        let (b1, rest) = rest.split_at_mut(d.hidden);
        let (w2, b2) = rest.split_at_mut(d.w2_len());
        (w1, b1, w2, b2)
    }

    pub fn w1(&self) -> &[f64] {
        self.split().0
    }

    pub fn b1(&self) -> &[f64] {
        self.split().1
    }

    pub fn w2(&self) -> &[f64] {
        self.split().2
    }

    pub fn b2(&self) -> &[f64] {
        self.split().3
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(dims: ModelDims, rng: &mut RngStream) -> ModelParams {
    let mut p = ModelParams::zeros(dims);
    let bound1 = (6.0 / (dims.input + dims.hidden) as f64).sqrt();
    let bound2 = (6.0 / (dims.hidden + dims.classes) as f64).sqrt();
    let (w1, _, w2, _) = p.split_mut();
    for w in w1.iter_mut() {
        *w = rng.random_range(-bound1..=bound1);
    }
    for w in w2.iter_mut() {
        *w = rng.random_range(-bound2..=bound2);
    }
    p
}

/// Rows of a dataset paired with the labels a party trains or is scored on.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub dataset: &'a Dataset,
    pub indices: &'a [usize],
    /// Aligned with `indices`.
    pub labels: &'a [u8],
}

impl<'a> Samples<'a> {
    pub fn new(dataset: &'a Dataset, indices: &'a [usize], labels: &'a [u8]) -> Self {
        assert_eq!(indices.len(), labels.len());
        Self {
            dataset,
            indices,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn row(&self, j: usize) -> (&'a [f64], u8) {
        (self.dataset.features(self.indices[j]), self.labels[j])
    }
}

struct Activations {
    pre_hidden: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

fn forward_one(params: &ModelParams, x: &[f64]) -> Activations {
    let d = params.dims;
    let (w1, b1, w2, b2) = params.split();
    let mut pre_hidden = b1.to_vec();
    for (h, z) in pre_hidden.iter_mut().enumerate() {
        let row = &w1[h * d.input..(h + 1) * d.input];
        *z += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
    }
    let hidden: Vec<f64> = pre_hidden.iter().map(|&z| z.max(0.0)).collect();
    let mut logits = b2.to_vec();
    for (c, z) in logits.iter_mut().enumerate() {
        let row = &w2[c * d.hidden..(c + 1) * d.hidden];
        *z += row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Activations {
        pre_hidden,
        hidden,
        probs,
    }
}

/// Class probabilities for one input.
pub fn predict_proba(params: &ModelParams, x: &[f64]) -> Vec<f64> {
    forward_one(params, x).probs
}

/// Class probabilities for every row of `batch`.
pub fn forward(params: &ModelParams, batch: &Samples<'_>) -> Vec<Vec<f64>> {
    (0..batch.len())
        .map(|j| forward_one(params, batch.row(j).0).probs)
        .collect()
}

/// Index of the largest probability; the lowest class wins ties.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (c, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = c;
        }
    }
    best
}

/// Mean cross-entropy over the rows `rows` of `samples` and its exact
/// gradient with respect to every parameter.
pub fn loss_and_gradient(params: &ModelParams, samples: &Samples<'_>, rows: &[usize]) -> (f64, ModelParams) {
    let d = params.dims;
    let mut grad = ModelParams::zeros(d);
    let mut loss = 0.0;
    let (_, _, w2, _) = params.split();
    {
        let (gw1, gb1, gw2, gb2) = grad.split_mut();
        let mut d_hidden = vec![0.0; d.hidden];
        for &j in rows {
            let (x, y) = samples.row(j);
            let act = forward_one(params, x);
            loss -= act.probs[y as usize].max(f64::MIN_POSITIVE).ln();

            let mut d_logits = act.probs;
            d_logits[y as usize] -= 1.0;
            d_hidden.iter_mut().for_each(|v| *v = 0.0);
            for (c, &dz) in d_logits.iter().enumerate() {
                gb2[c] += dz;
                let row = c * d.hidden;
                for h in 0..d.hidden {
                    gw2[row + h] += dz * act.hidden[h];
                    d_hidden[h] += dz * w2[row + h];
                }
            }
            for h in 0..d.hidden {
                if act.pre_hidden[h] <= 0.0 {
                    continue;
                }
                let dz = d_hidden[h];
                gb1[h] += dz;
                let row = &mut gw1[h * d.input..(h + 1) * d.input];
                for (g, &xi) in row.iter_mut().zip(x) {
                    if xi != 0.0 {
                        *g += dz * xi;
                    }
                }
            }
        }
    }
    let n = rows.len().max(1) as f64;
    grad.data.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

/// Fraction of rows whose argmax prediction equals the paired label.
pub fn accuracy(params: &ModelParams, samples: &Samples<'_>) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = (0..samples.len())
        .filter(|&j| {
            let (x, y) = samples.row(j);
            argmax(&forward_one(params, x).probs) == y as usize
        })
        .count();
    correct as f64 / samples.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
}

/// Mini-batch SGD over `samples`; returns the trained parameters and their
/// accuracy on the same samples (the party's own labels).
pub fn local_train(
    params: &ModelParams,
    samples: &Samples<'_>,
    settings: &TrainSettings,
    rng: &mut RngStream,
) -> (ModelParams, f64) {
    let mut model = params.clone();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    if settings.learning_rate > 0.0 && !samples.is_empty() {
        for _ in 0..settings.epochs {
            order.shuffle(rng);
            for batch in order.chunks(settings.batch_size.max(1)) {
                let (_, grad) = loss_and_gradient(&model, samples, batch);
                for (p, g) in model.data.iter_mut().zip(&grad.data) {
                    *p -= settings.learning_rate * g;
                }
            }
        }
    }
    let acc = accuracy(&model, samples);
    (model, acc)
}

/// Dataset-size weighted average of model updates, summed in the given
/// order (callers pass updates sorted by UE id).
pub fn fedavg(updates: &[(&ModelParams, usize)]) -> Result<ModelParams> {
    let (first, _) = updates.first().ok_or(Error::EmptyAggregation)?;
    let total: usize = updates.iter().map(|u| u.1).sum();
    let mut out = ModelParams::zeros(first.dims);
    for (model, size) in updates {
        assert_eq!(model.dims, first.dims, "inconsistent model dimensions");
        let weight = if total == 0 {
            1.0 / updates.len() as f64
        } else {
            *size as f64 / total as f64
        };
        for (o, p) in out.data.iter_mut().zip(&model.data) {
            *o += weight * p;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `None` for classes absent from the evaluated set.
    pub per_class_recall: Vec<Option<f64>>,
    pub class_counts: Vec<usize>,
}

impl Evaluation {
    pub fn recall(&self, class: usize) -> Option<f64> {
        self.per_class_recall.get(class).copied().flatten()
    }
}

/// Accuracy and per-class recall against the given labels.
pub fn evaluate(params: &ModelParams, samples: &Samples<'_>) -> Evaluation {
    let classes = params.dims.classes;
    let mut counts = vec![0usize; classes];
    let mut hits = vec![0usize; classes];
    for j in 0..samples.len() {
        let (x, y) = samples.row(j);
        let y = y as usize;
        counts[y] += 1;
        if argmax(&forward_one(params, x).probs) == y {
            hits[y] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    Evaluation {
        accuracy: if total == 0 {
            0.0
        } else {
            hits.iter().sum::<usize>() as f64 / total as f64
        },
        per_class_recall: counts
            .iter()
            .zip(&hits)
            .map(|(&n, &h)| (n > 0).then(|| h as f64 / n as f64))
            .collect(),
        class_counts: counts,
    }
}
