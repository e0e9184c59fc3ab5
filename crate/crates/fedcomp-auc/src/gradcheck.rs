//! Finite-difference verification of every analytic derivative the optimizer
//! consumes: scores, losses, Hessian-vector products, the surrogate's
//! gradients and curvature, the inner map's Jacobian-transpose products, and
//! the composed chain rule. `run_all` powers both the `gradcheck` CLI
//! subcommand and the test suite.

use crate::auc::{auc_loss, strong_concavity_modulus, Prior};
use crate::compositional::{comp_grad_x, inner_g, inner_jtvp, InnerConfig};
use crate::model::{ce_grad, ce_hvp, ce_loss, Classifier, Sample};
use crate::param::{DualScalar, ParamVector};
use crate::rng::RngStream;

/// Outcome of one derivative suite: the worst relative error seen across its
/// random instances, and the threshold it must stay under.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err <= self.tolerance
    }
}

/// Relative error with an absolute floor, so values near zero are compared
/// absolutely.
fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / (1.0 + got.abs().max(want.abs()))
}

fn random_vec(rng: &mut RngStream, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    rng.fill_standard_normal(&mut v);
    v
}

/// A batch guaranteed to contain at least one sample of each class.
fn random_batch(rng: &mut RngStream, n: usize, d: usize) -> Vec<Sample> {
    assert!(n >= 2);
    (0..n)
        .map(|i| {
            let label = match i {
                0 => 1,
                1 => -1,
                _ => {
                    if rng.uniform() < 0.5 {
                        1
                    } else {
                        -1
                    }
                }
            };
            Sample::new(random_vec(rng, d), label).expect("finite features, valid label")
        })
        .collect()
}

/// Central finite-difference gradient of a scalar function.
fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let eps = 1e-6 * (1.0 + x[i].abs());
        let orig = x[i];
        xp[i] = orig + eps;
        let up = f(&xp);
        xp[i] = orig - eps;
        let down = f(&xp);
        xp[i] = orig;
        g[i] = (up - down) / (2.0 * eps);
    }
    g
}

fn max_grad_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

fn models(d: usize) -> [Classifier; 2] {
    [Classifier::logistic(d), Classifier::mlp(d, 3)]
}

fn check_score_grad(seed: u64) -> CheckReport {
    let mut rng = RngStream::new(seed, 0);
    let d = 5;
    let mut worst = 0.0f64;
    for c in models(d) {
        for _ in 0..15 {
            let w = random_vec(&mut rng, c.param_dim());
            let a = random_vec(&mut rng, d);
            let g = c.score_grad(&w, &a);
            let fd = fd_grad(|w| c.score(w, &a), &w);
            worst = worst.max(max_grad_err(&g, &fd));
        }
    }
    CheckReport {
        name: "score-gradient",
        max_rel_err: worst,
        tolerance: 1e-6,
    }
}

fn check_ce_grad(seed: u64) -> CheckReport {
    let mut rng = RngStream::new(seed, 1);
    let d = 5;
    let mut worst = 0.0f64;
    for c in models(d) {
        for _ in 0..15 {
            let w = random_vec(&mut rng, c.param_dim());
            let batch = random_batch(&mut rng, 8, d);
            let g = ce_grad(&c, &w, &batch);
            let fd = fd_grad(|w| ce_loss(&c, w, &batch), &w);
            worst = worst.max(max_grad_err(&g, &fd));
        }
    }
    CheckReport {
        name: "ce-gradient",
        max_rel_err: worst,
        tolerance: 1e-6,
    }
}

fn check_ce_hvp(seed: u64) -> CheckReport {
    let mut rng = RngStream::new(seed, 2);
    let d = 5;
    let mut worst = 0.0f64;
    for c in models(d) {
        for _ in 0..15 {
            let w = random_vec(&mut rng, c.param_dim());
            let batch = random_batch(&mut rng, 8, d);
            let v = random_vec(&mut rng, c.param_dim());
            let hv = ce_hvp(&c, &w, &batch, &v);
            // Directional finite difference of the analytic gradient.
            let eps = 1e-5;
            let mut wp = w.clone();
            let mut wm = w.clone();
            for i in 0..w.len() {
                wp[i] += eps * v[i];
                wm[i] -= eps * v[i];
            }
            let gp = ce_grad(&c, &wp, &batch);
            let gm = ce_grad(&c, &wm, &batch);
            for i in 0..w.len() {
                let fd = (gp[i] - gm[i]) / (2.0 * eps);
                worst = worst.max(rel_err(hv[i], fd));
            }
        }
    }
    CheckReport {
        name: "ce-hessian-vector",
        max_rel_err: worst,
        tolerance: 1e-4,
    }
}

fn check_ce_curvature_sign(seed: u64) -> CheckReport {
    let mut rng = RngStream::new(seed, 3);
    let d = 5;
    let c = Classifier::logistic(d);
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let w = random_vec(&mut rng, d);
        let batch = random_batch(&mut rng, 8, d);
        let v = random_vec(&mut rng, d);
        let hv = ce_hvp(&c, &w, &batch, &v);
        let quad: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
        // Logistic loss is convex: v.Hv must never be negative.
        worst = worst.max((-quad).max(0.0));
    }
    CheckReport {
        name: "ce-curvature-nonnegative",
        max_rel_err: worst,
        tolerance: 1e-12,
    }
}

fn check_auc_grads(seed: u64) -> (CheckReport, CheckReport) {
    let mut rng = RngStream::new(seed, 4);
    let d = 5;
    let mut worst_z = 0.0f64;
    let mut worst_y = 0.0f64;
    for c in models(d) {
        for i in 0..15 {
            let prior = Prior::new(0.1 + 0.05 * (i as f64)).unwrap();
            let z = random_vec(&mut rng, c.param_dim() + 2);
            let y = rng.standard_normal();
            let batch = random_batch(&mut rng, 10, d);
            let pv = ParamVector::from_flat(z.clone(), c.param_dim()).unwrap();
            let eval = auc_loss(&c, &pv, DualScalar(y), &batch, prior);
            let fd_z = fd_grad(
                |z| {
                    let pv = ParamVector::from_flat(z.to_vec(), c.param_dim()).unwrap();
                    auc_loss(&c, &pv, DualScalar(y), &batch, prior).value
                },
                &z,
            );
            worst_z = worst_z.max(max_grad_err(&eval.grad_z, &fd_z));
            let eps = 1e-6 * (1.0 + y.abs());
            let up = auc_loss(&c, &pv, DualScalar(y + eps), &batch, prior).value;
            let down = auc_loss(&c, &pv, DualScalar(y - eps), &batch, prior).value;
            worst_y = worst_y.max(rel_err(eval.grad_y, (up - down) / (2.0 * eps)));
        }
    }
    (
        CheckReport {
            name: "auc-gradient-primal",
            max_rel_err: worst_z,
            tolerance: 1e-6,
        },
        CheckReport {
            name: "auc-gradient-dual",
            max_rel_err: worst_y,
            tolerance: 1e-6,
        },
    )
}

fn check_auc_dual_curvature(seed: u64) -> CheckReport {
    let mut rng = RngStream::new(seed, 5);
    let d = 4;
    let c = Classifier::logistic(d);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let prior = Prior::new(0.05 + 0.045 * (i as f64)).unwrap();
        let m = strong_concavity_modulus(prior);
        let z = random_vec(&mut rng, d + 2);
        let pv = ParamVector::from_flat(z, d).unwrap();
        let y = rng.standard_normal();
        let t = rng.standard_normal();
        let batch = random_batch(&mut rng, 6, d);
        let base = auc_loss(&c, &pv, DualScalar(y), &batch, prior);
        let moved = auc_loss(&c, &pv, DualScalar(y + t), &batch, prior).value;
        // The surrogate is an exact quadratic in the dual variable, so the
        // second-order expansion holds with equality.
        let predicted = base.value + t * base.grad_y - 0.5 * m * t * t;
        worst = worst.max(rel_err(moved, predicted));
    }
    CheckReport {
        name: "auc-dual-curvature",
        max_rel_err: worst,
        tolerance: 1e-10,
    }
}

fn check_inner_jacobian(seed: u64) -> CheckReport {
    let mut rng = RngStream::new(seed, 6);
    let d = 4;
    let cfg = InnerConfig::new(0.15).unwrap();
    let mut worst = 0.0f64;
    for c in models(d) {
        for _ in 0..10 {
            let dim = c.param_dim() + 2;
            let x = random_vec(&mut rng, dim);
            let batch = random_batch(&mut rng, 6, d);
            let pv = ParamVector::from_flat(x.clone(), c.param_dim()).unwrap();
            let v = random_vec(&mut rng, dim);
            let jtv = inner_jtvp(&c, &pv, &batch, cfg, &v);
            // Dense numeric Jacobian, then J^T v.
            let mut jt_v = vec![0.0; dim];
            let mut xp = x.clone();
            for i in 0..dim {
                let eps = 1e-6 * (1.0 + x[i].abs());
                let orig = xp[i];
                xp[i] = orig + eps;
                let gp =
                    inner_g(&c, &ParamVector::from_flat(xp.clone(), c.param_dim()).unwrap(), &batch, cfg);
                xp[i] = orig - eps;
                let gm =
                    inner_g(&c, &ParamVector::from_flat(xp.clone(), c.param_dim()).unwrap(), &batch, cfg);
                xp[i] = orig;
                // Column i of J is (gp - gm) / 2eps; accumulate its dot with v.
                jt_v[i] = gp
                    .as_slice()
                    .iter()
                    .zip(gm.as_slice())
                    .zip(&v)
                    .map(|((&a, &b), &vj)| (a - b) / (2.0 * eps) * vj)
                    .sum();
            }
            worst = worst.max(max_grad_err(&jtv, &jt_v));
        }
    }
    CheckReport {
        name: "inner-jacobian-transpose",
        max_rel_err: worst,
        tolerance: 1e-4,
    }
}

fn check_inner_jacobian_symmetry(seed: u64) -> CheckReport {
    let mut rng = RngStream::new(seed, 7);
    let d = 5;
    let cfg = InnerConfig::new(0.2).unwrap();
    let mut worst = 0.0f64;
    for c in models(d) {
        for _ in 0..10 {
            let dim = c.param_dim() + 2;
            let x = ParamVector::from_flat(random_vec(&mut rng, dim), c.param_dim()).unwrap();
            let batch = random_batch(&mut rng, 6, d);
            let v = random_vec(&mut rng, dim);
            let w = random_vec(&mut rng, dim);
            let jv = inner_jtvp(&c, &x, &batch, cfg, &v);
            let jw = inner_jtvp(&c, &x, &batch, cfg, &w);
            let a: f64 = w.iter().zip(&jv).map(|(a, b)| a * b).sum();
            let b: f64 = v.iter().zip(&jw).map(|(a, b)| a * b).sum();
            worst = worst.max(rel_err(a, b));
        }
    }
    CheckReport {
        name: "inner-jacobian-symmetry",
        max_rel_err: worst,
        tolerance: 1e-6,
    }
}

fn check_composed_chain_rule(seed: u64) -> CheckReport {
    let mut rng = RngStream::new(seed, 8);
    let d = 4;
    let cfg = InnerConfig::new(0.1).unwrap();
    let prior = Prior::new(0.2).unwrap();
    let mut worst = 0.0f64;
    for c in models(d) {
        for _ in 0..15 {
            let dim = c.param_dim() + 2;
            let x = random_vec(&mut rng, dim);
            let y = DualScalar(rng.standard_normal());
            let batch_g = random_batch(&mut rng, 6, d);
            let batch_f = random_batch(&mut rng, 6, d);
            let pv = ParamVector::from_flat(x.clone(), c.param_dim()).unwrap();
            let h = inner_g(&c, &pv, &batch_g, cfg);
            let g = comp_grad_x(&c, &pv, &h, y, &batch_g, &batch_f, cfg, prior);
            let fd = fd_grad(
                |x| {
                    let pv = ParamVector::from_flat(x.to_vec(), c.param_dim()).unwrap();
                    let h = inner_g(&c, &pv, &batch_g, cfg);
                    auc_loss(&c, &h, y, &batch_f, prior).value
                },
                &x,
            );
            worst = worst.max(max_grad_err(&g, &fd));
        }
    }
    CheckReport {
        name: "composed-chain-rule",
        max_rel_err: worst,
        tolerance: 1e-4,
    }
}

/// Run every derivative suite with instance draws derived from `seed`.
pub fn run_all(seed: u64) -> Vec<CheckReport> {
    let (auc_z, auc_y) = check_auc_grads(seed);
    vec![
        check_score_grad(seed),
        check_ce_grad(seed),
        check_ce_hvp(seed),
        check_ce_curvature_sign(seed),
        auc_z,
        auc_y,
        check_auc_dual_curvature(seed),
        check_inner_jacobian(seed),
        check_inner_jacobian_symmetry(seed),
        check_composed_chain_rule(seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_derivative_suites_pass() {
        for report in run_all(2024) {
            assert!(
                report.passed(),
                "{}: max relative error {:.3e} exceeds {:.1e}",
                report.name,
                report.max_rel_err,
                report.tolerance
            );
        }
    }

    #[test]
    fn suites_are_seed_reproducible() {
        let a = run_all(7);
        let b = run_all(7);
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.name, rb.name);
            assert_eq!(ra.max_rel_err, rb.max_rel_err);
        }
    }

    #[test]
    fn report_rejects_nan() {
        let r = CheckReport {
            name: "x",
            max_rel_err: f64::NAN,
            tolerance: 1.0,
        };
        assert!(!r.passed());
    }
}
