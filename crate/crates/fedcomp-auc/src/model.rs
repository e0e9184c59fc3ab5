//! Binary classifiers and the cross-entropy pieces the inner map is built on.
//!
//! Labels are `+1` / `-1` throughout. The per-sample cross-entropy on a score
//! `h` is `log(1 + exp(-b * h))`, reduced by the batch mean; both the loss
//! and its derivatives use numerically stable softplus/sigmoid forms.

use crate::error::Error;
use crate::linalg::{axpy, linf, scale};
use crate::Result;

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log(1 + exp(x))`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// One labeled example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    features: Vec<f64>,
    label: i8,
}

impl Sample {
    /// Build a sample, rejecting labels outside `{+1, -1}` and non-finite
    /// features, so downstream code never has to re-validate.
    pub fn new(features: Vec<f64>, label: i64) -> Result<Self> {
        if label != 1 && label != -1 {
            return Err(Error::InvalidLabel(label));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteFeature);
        }
        Ok(Self {
            features,
            label: label as i8,
        })
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Label as the sign it enters the loss with.
    pub fn b(&self) -> f64 {
        f64::from(self.label)
    }

    pub fn is_positive(&self) -> bool {
        self.label > 0
    }
}

/// A non-empty batch of samples with cached class counts.
#[derive(Clone, Debug)]
pub struct Minibatch {
    samples: Vec<Sample>,
    positive_count: usize,
}

impl Minibatch {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let positive_count = samples.iter().filter(|s| s.is_positive()).count();
        Ok(Self {
            samples,
            positive_count,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }

    pub fn positive_count(&self) -> usize {
        self.positive_count
    }

    pub fn negative_count(&self) -> usize {
        self.samples.len() - self.positive_count
    }
}

/// Differentiable scoring model mapping features to a real score.
#[derive(Clone, Debug, PartialEq)]
pub enum Classifier {
    /// Linear score `w . a` (no bias; append a constant feature if needed).
    LogisticLinear { feature_dim: usize },
    /// One tanh hidden layer:
    /// `score = b_out + sum_j v_j * tanh(W_j . a + c_j)`.
    ///
    /// Parameter layout: `[W row-major (width x feature_dim) | c (width) |
    /// v (width) | b_out]`.
    MlpOneHidden { feature_dim: usize, width: usize },
}

impl Classifier {
    pub fn logistic(feature_dim: usize) -> Self {
        Classifier::LogisticLinear { feature_dim }
    }

    pub fn mlp(feature_dim: usize, width: usize) -> Self {
        assert!(width > 0, "MLP width must be positive");
        Classifier::MlpOneHidden { feature_dim, width }
    }

    pub fn feature_dim(&self) -> usize {
        match *self {
            Classifier::LogisticLinear { feature_dim } => feature_dim,
            Classifier::MlpOneHidden { feature_dim, .. } => feature_dim,
        }
    }

    /// Number of trainable weights.
    pub fn param_dim(&self) -> usize {
        match *self {
            Classifier::LogisticLinear { feature_dim } => feature_dim,
            Classifier::MlpOneHidden { feature_dim, width } => width * (feature_dim + 2) + 1,
        }
    }

    /// Score one sample.
    pub fn score(&self, w: &[f64], a: &[f64]) -> f64 {
        assert_eq!(w.len(), self.param_dim(), "score: weight dimension");
        assert_eq!(a.len(), self.feature_dim(), "score: feature dimension");
        match *self {
            Classifier::LogisticLinear { .. } => crate::linalg::dot(w, a),
            Classifier::MlpOneHidden { feature_dim, width } => {
                let (wmat, rest) = w.split_at(width * feature_dim);
                let (c, rest) = rest.split_at(width);
                let (v, b_out) = rest.split_at(width);
                let mut s = b_out[0];
                for j in 0..width {
                    let z = crate::linalg::dot(&wmat[j * feature_dim..(j + 1) * feature_dim], a) + c[j];
                    s += v[j] * z.tanh();
                }
                s
            }
        }
    }

    /// Gradient of the score with respect to the weights, written into `out`.
    pub fn score_grad_into(&self, w: &[f64], a: &[f64], out: &mut [f64]) {
        assert_eq!(out.len(), self.param_dim(), "score_grad: output dimension");
        match *self {
            Classifier::LogisticLinear { .. } => out.copy_from_slice(a),
            Classifier::MlpOneHidden { feature_dim, width } => {
                let (wmat, rest) = w.split_at(width * feature_dim);
                let (c, rest) = rest.split_at(width);
                let (v, _) = rest.split_at(width);
                for j in 0..width {
                    let z = crate::linalg::dot(&wmat[j * feature_dim..(j + 1) * feature_dim], a) + c[j];
                    let t = z.tanh();
                    let sech_sq = 1.0 - t * t;
                    let coeff = v[j] * sech_sq;
                    for k in 0..feature_dim {
                        out[j * feature_dim + k] = coeff * a[k];
                    }
                    out[width * feature_dim + j] = coeff; // hidden bias
                    out[width * feature_dim + width + j] = t; // output weight
                }
                out[self.param_dim() - 1] = 1.0; // output bias
            }
        }
    }

    pub fn score_grad(&self, w: &[f64], a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.param_dim()];
        self.score_grad_into(w, a, &mut out);
        out
    }
}

/// Mean cross-entropy over a batch. Batches are non-empty by construction
/// ([`Minibatch::new`] / dataset constructors); an empty slice is a caller bug.
pub fn ce_loss(c: &Classifier, w: &[f64], batch: &[Sample]) -> f64 {
    assert!(!batch.is_empty(), "ce_loss: empty batch");
    let mut acc = 0.0;
    for s in batch {
        let h = c.score(w, s.features());
        acc += softplus(-s.b() * h);
    }
    acc / batch.len() as f64
}

/// Gradient of [`ce_loss`] with respect to the weights.
pub fn ce_grad(c: &Classifier, w: &[f64], batch: &[Sample]) -> Vec<f64> {
    assert!(!batch.is_empty(), "ce_grad: empty batch");
    let d = c.param_dim();
    let mut acc = vec![0.0; d];
    let mut sg = vec![0.0; d];
    for s in batch {
        let h = c.score(w, s.features());
        let coeff = -s.b() * sigmoid(-s.b() * h);
        c.score_grad_into(w, s.features(), &mut sg);
        axpy(coeff, &sg, &mut acc);
    }
    scale(&mut acc, 1.0 / batch.len() as f64);
    acc
}

/// Hessian-vector product of [`ce_loss`] with respect to the weights.
///
/// For the linear model this is the exact closed form
/// `mean sigma(b h) sigma(-b h) (a . v) a`; for the MLP it is a central
/// finite difference of [`ce_grad`] with step `1e-5 * (1 + ||w||_inf)`.
pub fn ce_hvp(c: &Classifier, w: &[f64], batch: &[Sample], v: &[f64]) -> Vec<f64> {
    assert!(!batch.is_empty(), "ce_hvp: empty batch");
    assert_eq!(v.len(), c.param_dim(), "ce_hvp: direction dimension");
    match c {
        Classifier::LogisticLinear { .. } => {
            let mut acc = vec![0.0; c.param_dim()];
            for s in batch {
                let h = c.score(w, s.features());
                let sig = sigmoid(s.b() * h);
                let curvature = sig * (1.0 - sig);
                let av = crate::linalg::dot(s.features(), v);
                axpy(curvature * av, s.features(), &mut acc);
            }
            scale(&mut acc, 1.0 / batch.len() as f64);
            acc
        }
        Classifier::MlpOneHidden { .. } => {
            let step = 1e-5 * (1.0 + linf(w));
            let mut wp = w.to_vec();
            let mut wm = w.to_vec();
            axpy(step, v, &mut wp);
            axpy(-step, v, &mut wm);
            let gp = ce_grad(c, &wp, batch);
            let gm = ce_grad(c, &wm, batch);
            let mut out = gp;
            for i in 0..out.len() {
                out[i] = (out[i] - gm[i]) / (2.0 * step);
            }
            out
        }
    }
}
