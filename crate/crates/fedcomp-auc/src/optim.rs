//! Local update rules and state averaging.
//!
//! The main optimizer is a single-timescale compositional primal-dual method:
//! each device keeps, besides the primal/dual pair `(x, y)`, a moving-average
//! tracker `h` of the inner map value and moving-average gradient estimates
//! `u` (primal) and `v` (dual). One step at scale `eta_t`:
//!
//! ```text
//! x' = x - gamma_x * eta_t * u           (descent with old u)
//! y' = y + gamma_y * eta_t * v           (ascent with old v)
//! h' = (1 - alpha  * eta_t) h + alpha  * eta_t * g(x'; fresh batch)
//! u' = (1 - beta_x * eta_t) u + beta_x * eta_t * (dg/dx)(x')^T grad_z f(h', y')
//! v' = (1 - beta_y * eta_t) v + beta_y * eta_t * grad_y f(h', y')
//! ```
//!
//! The order matters: parameters move with the *old* trackers, then every
//! tracker is refreshed at the *new* point. Mixing coefficients live in
//! `(0, 1)` for a valid configuration; the step itself also accepts the
//! closed endpoint 1, where a tracker degenerates to the fresh estimate
//! exactly (the moving average keeps nothing of the past).
//!
//! Baselines: heavy-ball momentum on cross-entropy, the same primal-dual
//! momentum scheme without the inner map, and plain simultaneous
//! gradient-descent-ascent on the surrogate.

use crate::auc::{auc_loss_flat, Prior};
use crate::compositional::{inner_g_flat, InnerConfig};
use crate::error::Error;
use crate::linalg::{axpy, lerp_into, scale};
use crate::model::{ce_grad, Classifier, Minibatch};
use crate::param::{DualScalar, ParamVector};
use crate::rng::RngStream;
use crate::Result;

/// Hyperparameters shared by the local optimizers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperParams {
    /// Base step scale multiplied into every coefficient.
    pub eta: f64,
    /// Primal step factor.
    pub gamma_x: f64,
    /// Dual step factor.
    pub gamma_y: f64,
    /// Inner-value tracker mixing factor.
    pub alpha: f64,
    /// Primal gradient tracker mixing factor.
    pub beta_x: f64,
    /// Dual gradient tracker mixing factor.
    pub beta_y: f64,
    /// Inner proximal step length.
    pub rho: f64,
    /// Iterations between averaging rounds.
    pub period: usize,
    /// Per-device minibatch size.
    pub batch_size: usize,
    /// Optional clamp interval for the dual variable.
    pub dual_clamp: Option<(f64, f64)>,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            eta: 0.3,
            gamma_x: 0.33,
            gamma_y: 0.33,
            alpha: 3.0,
            beta_x: 3.3,
            beta_y: 3.3,
            rho: 0.1,
            period: 4,
            batch_size: 32,
            dual_clamp: None,
        }
    }
}

impl HyperParams {
    /// Validate a configuration. Mixing products must lie strictly inside
    /// (0, 1) so every tracker remains a proper moving average.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta", self.eta),
            ("gamma_x", self.gamma_x),
            ("gamma_y", self.gamma_y),
            ("alpha", self.alpha),
            ("beta_x", self.beta_x),
            ("beta_y", self.beta_y),
            ("rho", self.rho),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        let products = [
            ("alpha * eta", self.alpha * self.eta),
            ("beta_x * eta", self.beta_x * self.eta),
            ("beta_y * eta", self.beta_y * self.eta),
        ];
        for (name, v) in products {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        if self.period == 0 {
            return Err(Error::Config("averaging period must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if let Some((lo, hi)) = self.dual_clamp {
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(Error::Config(format!(
                    "dual clamp interval [{lo}, {hi}] is empty"
                )));
            }
        }
        Ok(())
    }

    /// Check one step scale. The decayed `eta_t` may not exceed the base
    /// scale, and mixing products may reach the closed endpoint 1.
    fn check_step_scale(&self, eta_t: f64) -> Result<()> {
        if !(eta_t > 0.0 && eta_t <= self.eta) {
            return Err(Error::Config(format!(
                "step scale eta_t = {eta_t} must lie in (0, eta = {}]",
                self.eta
            )));
        }
        let products = [
            ("alpha * eta_t", self.alpha * eta_t),
            ("beta_x * eta_t", self.beta_x * eta_t),
            ("beta_y * eta_t", self.beta_y * eta_t),
        ];
        for (name, v) in products {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} = {v} must lie in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// One step of the compositional primal-dual recurrence on flat state.
///
/// The problem enters only through three closures: the inner map at the new
/// primal point, the Jacobian-transpose product at the new primal point, and
/// the outer gradients at the new tracker/dual pair. Classification and the
/// synthetic quadratic problem share this code path exactly.
#[allow(clippy::too_many_arguments)]
pub(crate) fn scgdam_recurrence(
    x: &mut [f64],
    y: &mut f64,
    h: &mut [f64],
    u: &mut [f64],
    v: &mut f64,
    hp: &HyperParams,
    eta_t: f64,
    inner_at: impl FnOnce(&[f64]) -> Vec<f64>,
    jtvp_at: impl FnOnce(&[f64], &[f64]) -> Vec<f64>,
    outer_at: impl FnOnce(&[f64], f64) -> (Vec<f64>, f64),
) {
    axpy(-hp.gamma_x * eta_t, u, x);
    *y += hp.gamma_y * eta_t * *v;
    if let Some((lo, hi)) = hp.dual_clamp {
        *y = y.clamp(lo, hi);
    }

    let g_new = inner_at(x);
    let a = hp.alpha * eta_t;
    lerp_into(h, 1.0 - a, a, &g_new);

    let (outer_gz, outer_gy) = outer_at(h, *y);
    let chained = jtvp_at(x, &outer_gz);
    let bx = hp.beta_x * eta_t;
    lerp_into(u, 1.0 - bx, bx, &chained);
    let by = hp.beta_y * eta_t;
    *v = (1.0 - by) * *v + by * outer_gy;
}

/// Full per-device optimizer state for the compositional method.
#[derive(Clone, Debug)]
pub struct DeviceState {
    pub x: ParamVector,
    pub y: DualScalar,
    /// Moving-average tracker of the inner map value; same layout as `x`.
    pub h: ParamVector,
    /// Moving-average estimate of the primal gradient.
    pub u: Vec<f64>,
    /// Moving-average estimate of the dual gradient.
    pub v: f64,
    /// Device-owned random stream.
    pub rng: RngStream,
    /// Local step counter.
    pub t: u64,
}

/// Initialize device state: the trackers start at fresh estimates evaluated
/// at `(x0, y0)` on the provided init batches (no zero-initialization bias).
#[allow(clippy::too_many_arguments)]
pub fn scgdam_init(
    c: &Classifier,
    x0: &ParamVector,
    y0: DualScalar,
    batch_g: &Minibatch,
    batch_f: &Minibatch,
    hp: &HyperParams,
    prior: Prior,
    rng: RngStream,
) -> Result<DeviceState> {
    hp.validate()?;
    let cfg = InnerConfig::new(hp.rho)?;
    if x0.weight_dim() != c.param_dim() {
        return Err(Error::Dimension {
            what: "initial parameter vector",
            expected: c.param_dim(),
            got: x0.weight_dim(),
        });
    }
    let h = crate::compositional::inner_g(c, x0, batch_g.samples(), cfg);
    let u = crate::compositional::comp_grad_x(
        c,
        x0,
        &h,
        y0,
        batch_g.samples(),
        batch_f.samples(),
        cfg,
        prior,
    );
    let v = auc_loss_flat(
        c,
        h.as_slice(),
        h.weight_dim(),
        y0.value(),
        batch_f.samples(),
        prior,
    )
    .grad_y;
    Ok(DeviceState {
        x: x0.clone(),
        y: y0,
        h,
        u,
        v,
        rng,
        t: 0,
    })
}

/// One local step of the compositional method at scale `eta_t`.
///
/// `batch_g` feeds the inner map and its Jacobian, `batch_f` the outer
/// surrogate; pass the same batch twice for the shared-draw variant.
pub fn scgdam_step(
    c: &Classifier,
    st: &mut DeviceState,
    hp: &HyperParams,
    batch_g: &Minibatch,
    batch_f: &Minibatch,
    prior: Prior,
    eta_t: f64,
) -> Result<()> {
    hp.check_step_scale(eta_t)?;
    let wd = st.x.weight_dim();
    assert_eq!(wd, c.param_dim(), "scgdam_step: weight dimension");
    let rho = hp.rho;
    scgdam_recurrence(
        st.x.as_mut_slice(),
        &mut st.y.0,
        st.h.as_mut_slice(),
        &mut st.u,
        &mut st.v,
        hp,
        eta_t,
        |x| inner_g_flat(c, x, wd, batch_g.samples(), rho),
        |x, gz| crate::compositional::inner_jtvp_flat(c, x, wd, batch_g.samples(), rho, gz),
        |h, y| {
            let eval = auc_loss_flat(c, h, wd, y, batch_f.samples(), prior);
            (eval.grad_z, eval.grad_y)
        },
    );
    st.t += 1;
    Ok(())
}

/// Heavy-ball momentum on the cross-entropy loss (weights only).
#[derive(Clone, Debug)]
pub struct SgdmState {
    pub x: ParamVector,
    /// Momentum buffer over the weight block.
    pub m: Vec<f64>,
    pub rng: RngStream,
    pub t: u64,
}

impl SgdmState {
    pub fn new(x0: ParamVector, rng: RngStream) -> Self {
        let m = vec![0.0; x0.weight_dim()];
        Self {
            x: x0,
            m,
            rng,
            t: 0,
        }
    }
}

/// `m' = momentum * m + grad_ce(w); w' = w - lr * m'`.
pub fn sgdm_step(
    c: &Classifier,
    st: &mut SgdmState,
    lr: f64,
    momentum: f64,
    batch: &Minibatch,
) {
    let g = ce_grad(c, st.x.w(), batch.samples());
    lerp_into(&mut st.m, momentum, 1.0, &g);
    axpy(-lr, &st.m, st.x.w_mut());
    st.t += 1;
}

/// Primal-dual momentum on the surrogate without the inner map: the same
/// tracker scheme as the compositional method, with `g = identity`.
#[derive(Clone, Debug)]
pub struct SgdamState {
    pub x: ParamVector,
    pub y: DualScalar,
    pub u: Vec<f64>,
    pub v: f64,
    pub rng: RngStream,
    pub t: u64,
}

/// Initialize with fresh gradient estimates at `(x0, y0)`.
pub fn sgdam_init(
    c: &Classifier,
    x0: ParamVector,
    y0: DualScalar,
    batch: &Minibatch,
    hp: &HyperParams,
    prior: Prior,
    rng: RngStream,
) -> Result<SgdamState> {
    hp.validate()?;
    let eval = auc_loss_flat(
        c,
        x0.as_slice(),
        x0.weight_dim(),
        y0.value(),
        batch.samples(),
        prior,
    );
    Ok(SgdamState {
        x: x0,
        y: y0,
        u: eval.grad_z,
        v: eval.grad_y,
        rng,
        t: 0,
    })
}

pub fn sgdam_step(
    c: &Classifier,
    st: &mut SgdamState,
    hp: &HyperParams,
    batch: &Minibatch,
    prior: Prior,
    eta_t: f64,
) -> Result<()> {
    hp.check_step_scale(eta_t)?;
    let wd = st.x.weight_dim();
    axpy(-hp.gamma_x * eta_t, &st.u, st.x.as_mut_slice());
    st.y.0 += hp.gamma_y * eta_t * st.v;
    if let Some((lo, hi)) = hp.dual_clamp {
        st.y.0 = st.y.0.clamp(lo, hi);
    }
    let eval = auc_loss_flat(
        c,
        st.x.as_slice(),
        wd,
        st.y.value(),
        batch.samples(),
        prior,
    );
    let bx = hp.beta_x * eta_t;
    lerp_into(&mut st.u, 1.0 - bx, bx, &eval.grad_z);
    let by = hp.beta_y * eta_t;
    st.v = (1.0 - by) * st.v + by * eval.grad_y;
    st.t += 1;
    Ok(())
}

/// Simultaneous gradient-descent-ascent on the surrogate.
#[derive(Clone, Debug)]
pub struct CodaState {
    pub x: ParamVector,
    pub y: DualScalar,
    pub rng: RngStream,
    pub t: u64,
}

impl CodaState {
    pub fn new(x0: ParamVector, y0: DualScalar, rng: RngStream) -> Self {
        Self {
            x: x0,
            y: y0,
            rng,
            t: 0,
        }
    }
}

/// Both players move from gradients evaluated at the same point.
pub fn coda_step(
    c: &Classifier,
    st: &mut CodaState,
    lr: f64,
    dual_clamp: Option<(f64, f64)>,
    batch: &Minibatch,
    prior: Prior,
) {
    let eval = auc_loss_flat(
        c,
        st.x.as_slice(),
        st.x.weight_dim(),
        st.y.value(),
        batch.samples(),
        prior,
    );
    axpy(-lr, &eval.grad_z, st.x.as_mut_slice());
    st.y.0 += lr * eval.grad_y;
    if let Some((lo, hi)) = dual_clamp {
        st.y.0 = st.y.0.clamp(lo, hi);
    }
    st.t += 1;
}

/// States that can be flattened for communication.
///
/// `write_flat` / `load_flat` round-trip the full optimizer state in a fixed
/// coordinate order; `param_len` is the length of the leading block holding
/// model parameters, used when momentum buffers are excluded from averaging.
/// Random streams and step counters are never part of the flat view.
pub trait FlatState {
    fn flat_len(&self) -> usize;
    fn write_flat(&self, out: &mut [f64]);
    fn load_flat(&mut self, flat: &[f64]);
    fn param_len(&self) -> usize {
        self.flat_len()
    }
}

impl FlatState for DeviceState {
    fn flat_len(&self) -> usize {
        2 * self.x.dim() + 1 + self.u.len() + 1
    }

    fn write_flat(&self, out: &mut [f64]) {
        let d1 = self.x.dim();
        out[..d1].copy_from_slice(self.x.as_slice());
        out[d1] = self.y.0;
        out[d1 + 1..2 * d1 + 1].copy_from_slice(self.h.as_slice());
        out[2 * d1 + 1..2 * d1 + 1 + self.u.len()].copy_from_slice(&self.u);
        out[self.flat_len() - 1] = self.v;
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let d1 = self.x.dim();
        self.x.as_mut_slice().copy_from_slice(&flat[..d1]);
        self.y.0 = flat[d1];
        self.h
            .as_mut_slice()
            .copy_from_slice(&flat[d1 + 1..2 * d1 + 1]);
        let un = self.u.len();
        self.u.copy_from_slice(&flat[2 * d1 + 1..2 * d1 + 1 + un]);
        self.v = flat[2 * d1 + 1 + un];
    }

    // The trackers are part of the communicated state by design, so the
    // parameter block covers everything.
}

impl FlatState for SgdmState {
    fn flat_len(&self) -> usize {
        self.x.dim() + self.m.len()
    }

    fn write_flat(&self, out: &mut [f64]) {
        let d1 = self.x.dim();
        out[..d1].copy_from_slice(self.x.as_slice());
        out[d1..].copy_from_slice(&self.m);
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let d1 = self.x.dim();
        self.x.as_mut_slice().copy_from_slice(&flat[..d1]);
        self.m.copy_from_slice(&flat[d1..]);
    }

    fn param_len(&self) -> usize {
        self.x.dim()
    }
}

impl FlatState for SgdamState {
    fn flat_len(&self) -> usize {
        self.x.dim() + 1 + self.u.len() + 1
    }

    fn write_flat(&self, out: &mut [f64]) {
        let d1 = self.x.dim();
        out[..d1].copy_from_slice(self.x.as_slice());
        out[d1] = self.y.0;
        out[d1 + 1..d1 + 1 + self.u.len()].copy_from_slice(&self.u);
        out[self.flat_len() - 1] = self.v;
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let d1 = self.x.dim();
        self.x.as_mut_slice().copy_from_slice(&flat[..d1]);
        self.y.0 = flat[d1];
        let un = self.u.len();
        self.u.copy_from_slice(&flat[d1 + 1..d1 + 1 + un]);
        self.v = flat[d1 + 1 + un];
    }

    fn param_len(&self) -> usize {
        self.x.dim() + 1
    }
}

impl FlatState for CodaState {
    fn flat_len(&self) -> usize {
        self.x.dim() + 1
    }

    fn write_flat(&self, out: &mut [f64]) {
        let d1 = self.x.dim();
        out[..d1].copy_from_slice(self.x.as_slice());
        out[d1] = self.y.0;
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let d1 = self.x.dim();
        self.x.as_mut_slice().copy_from_slice(&flat[..d1]);
        self.y.0 = flat[d1];
    }
}

/// Replace the leading `prefix` coordinates of every state with their mean
/// across devices. Accumulation runs in ascending device order, so the result
/// does not depend on how device steps were scheduled.
pub fn average_states_prefix<S: FlatState>(states: &mut [S], prefix: usize) -> Result<()> {
    let k = states.len();
    if k == 0 {
        return Err(Error::Config("cannot average zero device states".into()));
    }
    let len = states[0].flat_len();
    for (i, s) in states.iter().enumerate() {
        if s.flat_len() != len {
            return Err(Error::LayoutMismatch(format!(
                "device 0 has {len} coordinates but device {i} has {}",
                s.flat_len()
            )));
        }
    }
    assert!(prefix <= len, "averaging prefix exceeds state length");

    let mut acc = vec![0.0; prefix];
    let mut buf = vec![0.0; len];
    for s in states.iter() {
        s.write_flat(&mut buf);
        for i in 0..prefix {
            acc[i] += buf[i];
        }
    }
    scale(&mut acc, 1.0 / k as f64);
    for s in states.iter_mut() {
        s.write_flat(&mut buf);
        buf[..prefix].copy_from_slice(&acc);
        s.load_flat(&buf);
    }
    Ok(())
}

/// Average the complete flat state of every device (the communication step
/// of the compositional method averages parameters and all trackers).
pub fn average_states<S: FlatState>(states: &mut [S]) -> Result<()> {
    let prefix = match states.first() {
        Some(s) => s.flat_len(),
        None => 0,
    };
    average_states_prefix(states, prefix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Sample;

    fn two_class_batch(d: usize, seed: u64) -> Minibatch {
        let mut rng = RngStream::new(seed, 0);
        let samples: Vec<Sample> = (0..6)
            .map(|i| {
                Sample::new(
                    (0..d).map(|_| rng.standard_normal()).collect(),
                    if i % 2 == 0 { 1 } else { -1 },
                )
                .unwrap()
            })
            .collect();
        Minibatch::new(samples).unwrap()
    }

    fn setup(seed: u64) -> (Classifier, DeviceState, HyperParams, Prior, Minibatch) {
        let c = Classifier::logistic(3);
        let hp = HyperParams::default();
        let prior = Prior::new(0.3).unwrap();
        let batch = two_class_batch(3, seed);
        let mut rng = RngStream::new(seed, 7);
        let x0 = crate::param::make_param(3, 0.5, &mut rng).unwrap();
        let st = scgdam_init(
            &c,
            &x0,
            DualScalar(0.1),
            &batch,
            &batch,
            &hp,
            prior,
            RngStream::new(seed, 1),
        )
        .unwrap();
        (c, st, hp, prior, batch)
    }

    #[test]
    fn default_hyperparameters_are_valid() {
        HyperParams::default().validate().unwrap();
    }

    #[test]
    fn validate_names_the_violated_product() {
        let hp = HyperParams {
            alpha: 5.0,
            ..HyperParams::default()
        };
        let msg = hp.validate().unwrap_err().to_string();
        assert!(msg.contains("alpha * eta"), "got: {msg}");
        let hp = HyperParams {
            beta_x: 4.0,
            ..HyperParams::default()
        };
        let msg = hp.validate().unwrap_err().to_string();
        assert!(msg.contains("beta_x * eta"), "got: {msg}");
    }

    #[test]
    fn init_trackers_are_fresh_estimates() {
        let (c, st, hp, prior, batch) = setup(42);
        let cfg = InnerConfig::new(hp.rho).unwrap();
        let h = crate::compositional::inner_g(&c, &st.x, batch.samples(), cfg);
        assert_eq!(st.h, h);
        let u = crate::compositional::comp_grad_x(
            &c,
            &st.x,
            &h,
            st.y,
            batch.samples(),
            batch.samples(),
            cfg,
            prior,
        );
        assert_eq!(st.u, u);
    }

    #[test]
    fn parameters_move_with_old_trackers() {
        let (c, mut st, hp, prior, batch) = setup(7);
        let x_before = st.x.clone();
        let y_before = st.y;
        let u_before = st.u.clone();
        let v_before = st.v;
        scgdam_step(&c, &mut st, &hp, &batch, &batch, prior, hp.eta).unwrap();
        let xb = x_before.as_slice();
        for (i, &xa) in st.x.as_slice().iter().enumerate() {
            assert_eq!(xa, xb[i] - hp.gamma_x * hp.eta * u_before[i]);
        }
        assert_eq!(st.y.0, y_before.0 + hp.gamma_y * hp.eta * v_before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn unit_alpha_step_makes_tracker_equal_fresh_inner_value() {
        // alpha * eta_t = 1 exactly: h' must be g(x') bit-for-bit.
        let (c, mut st, _, prior, batch) = setup(19);
        let hp = HyperParams {
            eta: 0.25,
            alpha: 4.0,
            ..HyperParams::default()
        };
        scgdam_step(&c, &mut st, &hp, &batch, &batch, prior, 0.25).unwrap();
        let cfg = InnerConfig::new(hp.rho).unwrap();
        let fresh = crate::compositional::inner_g(&c, &st.x, batch.samples(), cfg);
        assert_eq!(st.h, fresh);
    }

    #[test]
    fn unit_beta_step_makes_trackers_equal_fresh_gradients() {
        let (c, mut st, _, prior, batch) = setup(23);
        let hp = HyperParams {
            eta: 0.25,
            beta_x: 4.0,
            beta_y: 4.0,
            ..HyperParams::default()
        };
        scgdam_step(&c, &mut st, &hp, &batch, &batch, prior, 0.25).unwrap();
        let cfg = InnerConfig::new(hp.rho).unwrap();
        let fresh_u = crate::compositional::comp_grad_x(
            &c,
            &st.x,
            &st.h,
            st.y,
            batch.samples(),
            batch.samples(),
            cfg,
            prior,
        );
        assert_eq!(st.u.len(), fresh_u.len());
        for (i, (&got, &want)) in st.u.iter().zip(&fresh_u).enumerate() {
            assert_eq!(got, want, "u coordinate {i}");
        }
        let fresh_v = auc_loss_flat(
            &c,
            st.h.as_slice(),
            st.h.weight_dim(),
            st.y.value(),
            batch.samples(),
            prior,
        )
        .grad_y;
        assert_eq!(st.v, fresh_v);
    }

    #[test]
    fn step_rejects_scale_outside_unit_products() {
        let (c, mut st, hp, prior, batch) = setup(3);
        // eta_t above the base scale.
        assert!(scgdam_step(&c, &mut st, &hp, &batch, &batch, prior, 0.4).is_err());
        // Product above 1.
        let hp_big = HyperParams {
            eta: 0.5,
            alpha: 3.0,
            ..HyperParams::default()
        };
        let err = scgdam_step(&c, &mut st, &hp_big, &batch, &batch, prior, 0.5).unwrap_err();
        assert!(err.to_string().contains("alpha * eta_t"));
    }

    #[test]
    fn dual_clamp_is_applied_after_ascent() {
        let (c, mut st, _, prior, batch) = setup(29);
        let hp = HyperParams {
            dual_clamp: Some((-0.05, 0.05)),
            ..HyperParams::default()
        };
        st.v = 1e6; // force a huge ascent step
        scgdam_step(&c, &mut st, &hp, &batch, &batch, prior, hp.eta).unwrap();
        assert_eq!(st.y.0, 0.05);
    }

    #[test]
    fn sgdm_two_steps_constant_gradient() {
        // With a constant gradient g: first move lr * g, second lr * (1 + mc) * g.
        let c = Classifier::logistic(2);
        let x0 = ParamVector::zeros(2).unwrap();
        let mut st = SgdmState::new(x0, RngStream::new(0, 0));
        // A batch engineered so the gradient at w = 0 stays (nearly) constant:
        // instead verify the momentum recursion directly on the buffer.
        let batch = two_class_batch(2, 31);
        let g0 = ce_grad(&c, st.x.w(), batch.samples());
        sgdm_step(&c, &mut st, 0.1, 0.5, &batch);
        for (i, &g) in g0.iter().enumerate() {
            assert_eq!(st.m[i], g);
            assert_eq!(st.x.w()[i], -0.1 * g);
        }
        let g1 = ce_grad(&c, st.x.w(), batch.samples());
        sgdm_step(&c, &mut st, 0.1, 0.5, &batch);
        for (i, &g) in g1.iter().enumerate() {
            assert_eq!(st.m[i], 0.5 * g0[i] + g);
        }
    }

    #[test]
    fn coda_moves_both_players_from_one_evaluation() {
        let c = Classifier::logistic(2);
        let batch = two_class_batch(2, 37);
        let prior = Prior::new(0.4).unwrap();
        let x0 = ParamVector::from_flat(vec![0.2, -0.1, 0.0, 0.0], 2).unwrap();
        let y0 = DualScalar(0.3);
        let eval = auc_loss_flat(&c, x0.as_slice(), 2, y0.value(), batch.samples(), prior);
        let mut st = CodaState::new(x0.clone(), y0, RngStream::new(0, 0));
        coda_step(&c, &mut st, 0.1, None, &batch, prior);
        for i in 0..x0.dim() {
            assert_eq!(st.x.as_slice()[i], x0.as_slice()[i] - 0.1 * eval.grad_z[i]);
        }
        assert_eq!(st.y.0, y0.0 + 0.1 * eval.grad_y);
    }

    #[test]
    fn averaging_replaces_every_state_with_the_mean() {
        let (_, st, ..) = setup(11);
        let base = st.x.w()[0];
        let base_v = st.v;
        let mut states = vec![st.clone(), st.clone(), st];
        // Shift device k by k in one weight coordinate and in v.
        for (k, s) in states.iter_mut().enumerate() {
            s.x.w_mut()[0] += k as f64;
            s.v += k as f64;
        }
        average_states(&mut states).unwrap();
        // Mean of shifts 0, 1, 2 is 1.
        for s in &states {
            assert!((s.x.w()[0] - (base + 1.0)).abs() < 1e-15);
            assert!((s.v - (base_v + 1.0)).abs() < 1e-15);
        }
        for s in &states[1..] {
            assert_eq!(states[0].x, s.x);
            assert_eq!(states[0].v, s.v);
        }
    }

    #[test]
    fn averaging_is_idempotent() {
        let (_, st, ..) = setup(13);
        let mut states: Vec<DeviceState> = (0..4)
            .map(|k| {
                let mut s = st.clone();
                for w in s.x.w_mut() {
                    *w += k as f64 * 0.25;
                }
                s
            })
            .collect();
        average_states(&mut states).unwrap();
        let snapshot: Vec<Vec<f64>> = states
            .iter()
            .map(|s| {
                let mut b = vec![0.0; s.flat_len()];
                s.write_flat(&mut b);
                b
            })
            .collect();
        average_states(&mut states).unwrap();
        for (s, snap) in states.iter().zip(&snapshot) {
            let mut b = vec![0.0; s.flat_len()];
            s.write_flat(&mut b);
            assert_eq!(&b, snap, "second averaging must be a no-op");
        }
    }

    #[test]
    fn prefix_averaging_leaves_momentum_local() {
        let c = Classifier::logistic(2);
        let mut states: Vec<SgdmState> = (0..2)
            .map(|k| {
                let mut x = ParamVector::zeros(2).unwrap();
                x.w_mut()[0] = k as f64;
                let mut st = SgdmState::new(x, RngStream::new(0, k as u64));
                st.m = vec![k as f64 * 10.0, 0.0];
                st
            })
            .collect();
        let prefix = states[0].param_len();
        average_states_prefix(&mut states, prefix).unwrap();
        assert_eq!(states[0].x.w()[0], 0.5);
        assert_eq!(states[1].x.w()[0], 0.5);
        assert_eq!(states[0].m[0], 0.0);
        assert_eq!(states[1].m[0], 10.0);
        let _ = c;
    }

    #[test]
    fn flat_round_trip_preserves_state() {
        let (_, st, ..) = setup(51);
        let mut buf = vec![0.0; st.flat_len()];
        st.write_flat(&mut buf);
        let mut other = st.clone();
        for w in other.x.w_mut() {
            *w = -99.0;
        }
        other.v = -99.0;
        other.load_flat(&buf);
        assert_eq!(other.x, st.x);
        assert_eq!(other.h, st.h);
        assert_eq!(other.u, st.u);
        assert_eq!(other.v, st.v);
        assert_eq!(other.y, st.y);
    }
}
