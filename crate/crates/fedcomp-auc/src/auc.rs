//! Minimax surrogate for AUC maximization under class imbalance.
//!
//! Writing `p` for the positive-class prior, `h` for the model score,
//! `a1`/`a2` for the tracked per-class score centers and `y` for the dual
//! scalar, the per-sample objective is
//!
//! ```text
//! (1-p) (h - a1)^2 I[b=+1]  -  p (1-p) y^2  +  p (h - a2)^2 I[b=-1]
//!   + 2 (1+y) (p h I[b=-1] - (1-p) h I[b=+1])
//! ```
//!
//! reduced by the batch mean. Minimizing over `(w, a1, a2)` while maximizing
//! over `y` is equivalent to minimizing the pairwise squared-margin AUC risk,
//! which is what makes the loss usable with per-sample (not per-pair)
//! minibatches. The objective is `2 p (1-p)`-strongly concave in `y`, so the
//! inner maximization is well conditioned whenever both classes appear.

use crate::data::LabeledDataset;
use crate::error::Error;
use crate::linalg::{axpy, scale};
use crate::model::{Classifier, Sample};
use crate::param::{DualScalar, ParamVector};
use crate::Result;

/// Positive-class prior constrained to the open interval (0, 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prior(f64);

impl Prior {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::DegeneratePrior(p));
        }
        Ok(Prior(p))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Empirical positive fraction of a dataset; errors if either class is absent.
pub fn prior_estimate(ds: &LabeledDataset) -> Result<Prior> {
    if ds.positive_count() == 0 || ds.negative_count() == 0 {
        return Err(Error::SingleClass {
            name: ds.name().to_string(),
            positives: ds.positive_count(),
            negatives: ds.negative_count(),
        });
    }
    Prior::new(ds.positive_count() as f64 / ds.len() as f64)
}

/// Value and both partial gradients of the surrogate at one point.
#[derive(Clone, Debug)]
pub struct AucLossEval {
    pub value: f64,
    /// Gradient with respect to the primal block `[w | a1 | a2]`.
    pub grad_z: Vec<f64>,
    /// Gradient with respect to the dual scalar.
    pub grad_y: f64,
}

/// Strong-concavity modulus of the surrogate in the dual variable.
pub fn strong_concavity_modulus(prior: Prior) -> f64 {
    2.0 * prior.value() * (1.0 - prior.value())
}

/// Flat-slice core shared with the optimizer recurrences: `z` is the primal
/// vector `[w | a1 | a2]`, `weight_dim` the length of the weight block.
pub(crate) fn auc_loss_flat(
    c: &Classifier,
    z: &[f64],
    weight_dim: usize,
    y: f64,
    batch: &[Sample],
    prior: Prior,
) -> AucLossEval {
    assert!(!batch.is_empty(), "auc_loss: empty batch");
    assert_eq!(z.len(), weight_dim + 2, "auc_loss: primal layout");
    assert_eq!(weight_dim, c.param_dim(), "auc_loss: weight dimension");

    let p = prior.value();
    let q = 1.0 - p;
    let w = &z[..weight_dim];
    let a1 = z[weight_dim];
    let a2 = z[weight_dim + 1];

    let mut value = 0.0;
    let mut grad_z = vec![0.0; weight_dim + 2];
    let mut grad_y = 0.0;
    let mut sg = vec![0.0; weight_dim];

    for s in batch {
        let h = c.score(w, s.features());
        let (ipos, ineg) = if s.is_positive() { (1.0, 0.0) } else { (0.0, 1.0) };

        value += q * (h - a1) * (h - a1) * ipos - p * q * y * y
            + p * (h - a2) * (h - a2) * ineg
            + 2.0 * (1.0 + y) * (p * h * ineg - q * h * ipos);

        let dh = 2.0 * q * (h - a1) * ipos
            + 2.0 * p * (h - a2) * ineg
            + 2.0 * (1.0 + y) * (p * ineg - q * ipos);
        c.score_grad_into(w, s.features(), &mut sg);
        axpy(dh, &sg, &mut grad_z[..weight_dim]);
        grad_z[weight_dim] += -2.0 * q * (h - a1) * ipos;
        grad_z[weight_dim + 1] += -2.0 * p * (h - a2) * ineg;
        grad_y += -2.0 * p * q * y + 2.0 * (p * h * ineg - q * h * ipos);
    }

    let inv_n = 1.0 / batch.len() as f64;
    value *= inv_n;
    scale(&mut grad_z, inv_n);
    grad_y *= inv_n;

    AucLossEval {
        value,
        grad_z,
        grad_y,
    }
}

/// Evaluate the surrogate and its gradients on a batch.
pub fn auc_loss(
    c: &Classifier,
    z: &ParamVector,
    y: DualScalar,
    batch: &[Sample],
    prior: Prior,
) -> AucLossEval {
    auc_loss_flat(c, z.as_slice(), z.weight_dim(), y.value(), batch, prior)
}
