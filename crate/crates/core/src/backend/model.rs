//! One-hidden-layer tanh perceptron with hand-derived gradients.
//!
//! `logits = tanh(x W1 + b1) W2 + b2`. With hidden width 0 the model is linear,
//! `logits = x W2 + b2`, and `W1`/`b1` are empty.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::data::DatasetSplit;
use super::BackendError;
use crate::rng::SplitMix64;

/// Half-width of the uniform hidden-layer init used by [`InitScheme::ZeroOutput`].
pub const ZERO_OUTPUT_HIDDEN_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitScheme {
    /// Hidden layer uniform in ±0.1, output layer exactly zero: logits start at zero.
    ZeroOutput,
    /// Every parameter uniform in ±scale.
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Params {
    pub fn zeros(d: usize, h: usize, n_classes: usize) -> Self {
        let out_in = if h == 0 { d } else { h };
        Self {
            w1: Array2::zeros((d, h)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((out_in, n_classes)),
            b2: Array1::zeros(n_classes),
        }
    }

    /// Seeded initialization. Draw order: `W1` (row-major), `b1`, `W2`, `b2`.
    pub fn init(d: usize, h: usize, n_classes: usize, scheme: InitScheme, seed: u64) -> Self {
        let mut p = Self::zeros(d, h, n_classes);
        let mut rng = SplitMix64::new(seed);
        let (hidden_scale, output_scale) = match scheme {
            InitScheme::ZeroOutput => (ZERO_OUTPUT_HIDDEN_SCALE, None),
            InitScheme::Uniform(s) => (s, Some(s)),
        };
        p.w1.mapv_inplace(|_| rng.symmetric(hidden_scale));
        p.b1.mapv_inplace(|_| rng.symmetric(hidden_scale));
        if let Some(s) = output_scale {
            p.w2.mapv_inplace(|_| rng.symmetric(s));
            p.b2.mapv_inplace(|_| rng.symmetric(s));
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_width(&self) -> usize {
        self.w1.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.b2.len()
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Euclidean norm over the weight matrices (biases excluded).
    pub fn weight_norm(&self) -> f64 {
        self.weight_sq_norm().sqrt()
    }

    fn weight_sq_norm(&self) -> f64 {
        self.w1.iter().chain(self.w2.iter()).map(|w| w * w).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    /// All coordinates in draw order (`W1`, `b1`, `W2`, `b2`).
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.w1.dim() == other.w1.dim()
            && self.b1.dim() == other.b1.dim()
            && self.w2.dim() == other.w2.dim()
            && self.b2.dim() == other.b2.dim()
    }

    pub fn ensure_shape(&self, other: &Params) -> Result<(), BackendError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(BackendError::ParamsShape {
                expected: self.shape_string(),
                found: other.shape_string(),
            })
        }
    }

    pub fn shape_string(&self) -> String {
        format!(
            "d={} h={} C={}",
            self.input_dim(),
            self.hidden_width(),
            self.n_classes()
        )
    }

    /// `self += alpha * other`.
    pub fn scaled_add(&mut self, alpha: f64, other: &Params) {
        self.w1.scaled_add(alpha, &other.w1);
        self.b1.scaled_add(alpha, &other.b1);
        self.w2.scaled_add(alpha, &other.w2);
        self.b2.scaled_add(alpha, &other.b2);
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<(), BackendError> {
        if x.ncols() != self.input_dim() {
            return Err(BackendError::ShapeMismatch {
                what: "feature columns",
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// Hidden activations (`None` for the linear model) and logits.
    fn activations(&self, x: ArrayView2<'_, f64>) -> (Option<Array2<f64>>, Array2<f64>) {
        if self.hidden_width() == 0 {
            return (None, x.dot(&self.w2) + &self.b2);
        }
        let hidden = (x.dot(&self.w1) + &self.b1).mapv(f64::tanh);
        let logits = hidden.dot(&self.w2) + &self.b2;
        (Some(hidden), logits)
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, BackendError> {
        self.check_input(&x)?;
        Ok(self.activations(x).1)
    }

    /// Argmax class per row; ties go to the lowest index.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>, BackendError> {
        Ok(argmax_rows(&self.forward(x)?))
    }
}

pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Mean softmax cross-entropy and the per-sample logit gradient `softmax - onehot`.
///
/// Softmax subtracts each row's max before exponentiating.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let mut probs = logits.clone();
    let mut total = 0.0;
    for ((mut row, z), &label) in probs
        .rows_mut()
        .into_iter()
        .zip(logits.rows())
        .zip(labels)
    {
        let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        total += sum.ln() - (z[label] - max);
        row /= sum;
        row[label] -= 1.0;
    }
    (total / labels.len() as f64, probs)
}

/// Summary of a model on a split: mean cross-entropy (no penalty), accuracy, predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean_loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

pub fn evaluate(p: &Params, split: &DatasetSplit) -> Result<Evaluation, BackendError> {
    if split.is_empty() {
        return Err(BackendError::EmptyBatch);
    }
    let logits = p.forward(split.features().view())?;
    let (mean_loss, _) = softmax_cross_entropy(&logits, split.labels());
    let predictions = argmax_rows(&logits);
    let correct = predictions
        .iter()
        .zip(split.labels())
        .filter(|(a, b)| a == b)
        .count();
    Ok(Evaluation {
        mean_loss,
        accuracy: correct as f64 / split.n_samples() as f64,
        predictions,
    })
}

fn check_batch(p: &Params, batch: &DatasetSplit) -> Result<(), BackendError> {
    if batch.is_empty() {
        return Err(BackendError::EmptyBatch);
    }
    if batch.n_classes() != p.n_classes() {
        return Err(BackendError::ShapeMismatch {
            what: "classes",
            expected: p.n_classes(),
            found: batch.n_classes(),
        });
    }
    p.check_input(&batch.features().view())
}

/// Objective only: mean cross-entropy plus `(l2 / 2) * ||weights||^2`.
pub fn loss(p: &Params, batch: &DatasetSplit, l2: f64) -> Result<f64, BackendError> {
    check_batch(p, batch)?;
    let (_, logits) = p.activations(batch.features().view());
    let (ce, _) = softmax_cross_entropy(&logits, batch.labels());
    Ok(ce + 0.5 * l2 * p.weight_sq_norm())
}

/// Objective and its analytic gradient with respect to every parameter.
pub fn loss_and_grad(
    p: &Params,
    batch: &DatasetSplit,
    l2: f64,
) -> Result<(f64, Params), BackendError> {
    check_batch(p, batch)?;
    let x = batch.features().view();
    let (hidden, logits) = p.activations(x);
    let (ce, mut dlogits) = softmax_cross_entropy(&logits, batch.labels());
    dlogits /= batch.n_samples() as f64;

    let mut grad = Params::zeros(p.input_dim(), p.hidden_width(), p.n_classes());
    grad.b2 = dlogits.sum_axis(Axis(0));
    match hidden {
        None => {
            grad.w2 = x.t().dot(&dlogits);
        }
        Some(hidden) => {
            grad.w2 = hidden.t().dot(&dlogits);
            let mut dpre = dlogits.dot(&p.w2.t());
            Zip::from(&mut dpre)
                .and(&hidden)
                .for_each(|g, &a| *g *= 1.0 - a * a);
            grad.w1 = x.t().dot(&dpre);
            grad.b1 = dpre.sum_axis(Axis(0));
        }
    }
    if l2 != 0.0 {
        grad.w1.scaled_add(l2, &p.w1);
        grad.w2.scaled_add(l2, &p.w2);
    }
    Ok((ce + 0.5 * l2 * p.weight_sq_norm(), grad))
}
