//! The compositional structure: an inner map that takes one proximal-style
//! cross-entropy step and feeds the result into the minimax AUC surrogate.
//!
//! The inner map is
//!
//! ```text
//! g(x) = x - rho * [grad_ce(w) | 0 | 0]
//! ```
//!
//! acting on the full primal vector `[w | a1 | a2]` but only moving the
//! weight block. Its Jacobian is `I - rho * [H_ce | 0; 0 | 0]`, symmetric, so
//! Jacobian-transpose products reduce to Hessian-vector products on the
//! weight block with the two trailing coordinates passed through unchanged.
//! The full objective the optimizers see is `f(g(x), y)` with `f` the AUC
//! surrogate, and its exact primal gradient is the chain rule
//! `grad_x = (I - rho H_ce)^T grad_z f(g(x), y)`.

use crate::auc::{auc_loss_flat, AucLossEval, Prior};
use crate::error::Error;
use crate::linalg::axpy;
use crate::model::{ce_grad, ce_hvp, Classifier, Sample};
use crate::param::{DualScalar, ParamVector};
use crate::Result;

/// Inner-map configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerConfig {
    /// Proximal step length of the inner cross-entropy step.
    pub rho: f64,
}

impl InnerConfig {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!(
                "inner step length rho must be positive and finite, got {rho}"
            )));
        }
        Ok(Self { rho })
    }
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self { rho: 0.1 }
    }
}

pub(crate) fn inner_g_flat(
    c: &Classifier,
    x: &[f64],
    weight_dim: usize,
    batch: &[Sample],
    rho: f64,
) -> Vec<f64> {
    let g = ce_grad(c, &x[..weight_dim], batch);
    let mut z = x.to_vec();
    axpy(-rho, &g, &mut z[..weight_dim]);
    z
}

/// Evaluate the inner map `g(x)` on a batch.
pub fn inner_g(c: &Classifier, x: &ParamVector, batch: &[Sample], cfg: InnerConfig) -> ParamVector {
    let z = inner_g_flat(c, x.as_slice(), x.weight_dim(), batch, cfg.rho);
    ParamVector::from_flat(z, x.weight_dim()).expect("inner map preserves layout")
}

pub(crate) fn inner_jtvp_flat(
    c: &Classifier,
    x: &[f64],
    weight_dim: usize,
    batch: &[Sample],
    rho: f64,
    v: &[f64],
) -> Vec<f64> {
    assert_eq!(v.len(), weight_dim + 2, "inner_jtvp: direction layout");
    let hv = ce_hvp(c, &x[..weight_dim], batch, &v[..weight_dim]);
    let mut out = v.to_vec();
    axpy(-rho, &hv, &mut out[..weight_dim]);
    out
}

/// Jacobian-transpose product `(dg/dx)^T v` at `x` on a batch.
pub fn inner_jtvp(
    c: &Classifier,
    x: &ParamVector,
    batch: &[Sample],
    cfg: InnerConfig,
    v: &[f64],
) -> Vec<f64> {
    inner_jtvp_flat(c, x.as_slice(), x.weight_dim(), batch, cfg.rho, v)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn comp_grad_x_flat(
    c: &Classifier,
    x: &[f64],
    weight_dim: usize,
    h: &[f64],
    y: f64,
    batch_g: &[Sample],
    batch_f: &[Sample],
    rho: f64,
    prior: Prior,
) -> Vec<f64> {
    let outer: AucLossEval = auc_loss_flat(c, h, weight_dim, y, batch_f, prior);
    inner_jtvp_flat(c, x, weight_dim, batch_g, rho, &outer.grad_z)
}

/// Chain-rule primal gradient of the composed objective, with the outer
/// gradient evaluated at the tracked inner value `h` rather than at `g(x)`.
/// Passing `h = g(x)` gives the exact deterministic gradient.
#[allow(clippy::too_many_arguments)]
pub fn comp_grad_x(
    c: &Classifier,
    x: &ParamVector,
    h: &ParamVector,
    y: DualScalar,
    batch_g: &[Sample],
    batch_f: &[Sample],
    cfg: InnerConfig,
    prior: Prior,
) -> Vec<f64> {
    comp_grad_x_flat(
        c,
        x.as_slice(),
        x.weight_dim(),
        h.as_slice(),
        y.value(),
        batch_g,
        batch_f,
        cfg.rho,
        prior,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Sample;
    use crate::rng::RngStream;

    #[test]
    fn inner_map_single_sample_closed_form() {
        // w = [1], a = [2], b = +1, rho = 0.2:
        // ce grad = -b sigma(-2) a = -2 sigma(-2), so
        // g(x).w = 1 + 0.4 sigma(-2) and the two centers pass through.
        let c = Classifier::logistic(1);
        let x = ParamVector::from_flat(vec![1.0, 5.0, -3.0], 1).unwrap();
        let batch = [Sample::new(vec![2.0], 1).unwrap()];
        let g = inner_g(&c, &x, &batch, InnerConfig::new(0.2).unwrap());
        let sig = 1.0 / (1.0 + 2.0_f64.exp());
        assert!((g.w()[0] - (1.0 + 0.4 * sig)).abs() < 1e-15);
        assert!((g.w()[0] - 1.0476811688088471).abs() < 1e-15);
        assert_eq!(g.pos_center(), 5.0);
        assert_eq!(g.neg_center(), -3.0);
    }

    #[test]
    fn jtvp_passes_trailing_coordinates_through() {
        let c = Classifier::logistic(2);
        let x = ParamVector::from_flat(vec![0.5, -0.5, 0.0, 0.0], 2).unwrap();
        let batch = [
            Sample::new(vec![1.0, 0.0], 1).unwrap(),
            Sample::new(vec![0.0, 1.0], -1).unwrap(),
        ];
        let v = [0.0, 0.0, 7.0, -9.0];
        let out = inner_jtvp(&c, &x, &batch, InnerConfig::default(), &v);
        // Zero weight-block direction: HVP is zero, centers unchanged.
        assert_eq!(out, vec![0.0, 0.0, 7.0, -9.0]);
    }

    #[test]
    fn jtvp_matches_dense_jacobian_of_inner_map() {
        let c = Classifier::logistic(3);
        let cfg = InnerConfig::new(0.3).unwrap();
        let mut rng = RngStream::new(17, 0);
        let d1 = 5;
        for _ in 0..10 {
            let x: Vec<f64> = (0..d1).map(|_| rng.standard_normal()).collect();
            let batch: Vec<Sample> = (0..4)
                .map(|i| {
                    Sample::new(
                        (0..3).map(|_| rng.standard_normal()).collect(),
                        if i % 2 == 0 { 1 } else { -1 },
                    )
                    .unwrap()
                })
                .collect();
            let v: Vec<f64> = (0..d1).map(|_| rng.standard_normal()).collect();

            // Dense Jacobian by central differences, column by column.
            let eps = 1e-6;
            let mut jac = vec![vec![0.0; d1]; d1]; // jac[row][col]
            for col in 0..d1 {
                let mut xp = x.clone();
                xp[col] += eps;
                let mut xm = x.clone();
                xm[col] -= eps;
                let gp = inner_g_flat(&c, &xp, 3, &batch, cfg.rho);
                let gm = inner_g_flat(&c, &xm, 3, &batch, cfg.rho);
                for row in 0..d1 {
                    jac[row][col] = (gp[row] - gm[row]) / (2.0 * eps);
                }
            }
            let jtvp = inner_jtvp_flat(&c, &x, 3, &batch, cfg.rho, &v);
            for i in 0..d1 {
                let mut expect = 0.0;
                for row in 0..d1 {
                    expect += jac[row][i] * v[row];
                }
                assert!(
                    (jtvp[i] - expect).abs() < 1e-6 * (1.0 + expect.abs()),
                    "coordinate {i}: jtvp {} vs dense {}",
                    jtvp[i],
                    expect
                );
            }
        }
    }

    #[test]
    fn chain_rule_matches_end_to_end_finite_difference() {
        let c = Classifier::logistic(3);
        let cfg = InnerConfig::default();
        let prior = Prior::new(0.4).unwrap();
        let mut rng = RngStream::new(23, 0);
        let d1 = 5;
        let x: Vec<f64> = (0..d1).map(|_| 0.5 * rng.standard_normal()).collect();
        let y = 0.3;
        let batch: Vec<Sample> = (0..6)
            .map(|i| {
                Sample::new(
                    (0..3).map(|_| rng.standard_normal()).collect(),
                    if i < 2 { 1 } else { -1 },
                )
                .unwrap()
            })
            .collect();

        // Deterministic composition: h = g(x) on the same batch.
        let h = inner_g_flat(&c, &x, 3, &batch, cfg.rho);
        let grad = comp_grad_x_flat(&c, &x, 3, &h, y, &batch, &batch, cfg.rho, prior);

        let composed = |xq: &[f64]| {
            let hq = inner_g_flat(&c, xq, 3, &batch, cfg.rho);
            auc_loss_flat(&c, &hq, 3, y, &batch, prior).value
        };
        let eps = 1e-6;
        for i in 0..d1 {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let fd = (composed(&xp) - composed(&xm)) / (2.0 * eps);
            assert!(
                (grad[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "coordinate {i}: chain rule {} vs fd {}",
                grad[i],
                fd
            );
        }
    }

    #[test]
    fn rejects_nonpositive_rho() {
        assert!(InnerConfig::new(0.0).is_err());
        assert!(InnerConfig::new(-0.1).is_err());
        assert!(InnerConfig::new(f64::INFINITY).is_err());
    }
}
