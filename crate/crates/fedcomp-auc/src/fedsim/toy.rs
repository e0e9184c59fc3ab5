//! Synthetic compositional minimax problem with closed-form oracles.
//!
//! The problem composes a linear inner map with a quadratic saddle:
//!
//! ```text
//! g(x)    = A x                      (A symmetric positive definite)
//! f(z, y) = y c.z - (mu/2) y^2 + (lambda/2) ||z||^2
//! ```
//!
//! `f` is `mu`-strongly concave in `y`, so the inner maximization has the
//! unique solution `y*(x) = c.Ax / mu` and the envelope
//!
//! ```text
//! Phi(x)      = (c.Ax)^2 / (2 mu) + (lambda/2) ||Ax||^2
//! grad Phi(x) = y*(x) A c + lambda A^2 x
//! ```
//!
//! which makes first-order stationarity exactly measurable — the quantity
//! convergence claims are stated in. Federated instances give device `k` the
//! perturbed pieces `A + hetero * S_k`, `c + hetero * d_k` with zero-mean
//! perturbations, so the device average recovers the global problem and the
//! closed forms above stay exact; optional Gaussian noise on the inner value
//! and outer gradients models stochastic oracles (the Jacobian stays exact).

use crate::error::Error;
use crate::linalg::{axpy, dot, l2_sq, matvec, scale};
use crate::metrics::MetricsRecord;
use crate::optim::{scgdam_recurrence, FlatState, HyperParams};
use crate::rng::{derive_stream, RngStream, STREAM_BASE_INTERNAL};
use crate::Result;

use super::{run_loop, LocalDevice, LoopPlan};

pub(crate) const STREAM_TOY_X0: u64 = STREAM_BASE_INTERNAL + 20;
pub(crate) const STREAM_TOY_STRUCT: u64 = STREAM_BASE_INTERNAL + 21;

/// A quadratic compositional minimax instance.
#[derive(Clone, Debug)]
pub struct ToyProblem {
    dim: usize,
    /// Symmetric positive-definite inner matrix, row-major.
    a: Vec<f64>,
    c: Vec<f64>,
    mu: f64,
    lambda: f64,
}

impl ToyProblem {
    pub fn new(dim: usize, a: Vec<f64>, c: Vec<f64>, mu: f64, lambda: f64) -> Result<Self> {
        if dim == 0 || a.len() != dim * dim || c.len() != dim {
            return Err(Error::Config(format!(
                "toy problem shapes: dim {dim}, matrix {} entries, vector {}",
                a.len(),
                c.len()
            )));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (a[i * dim + j] - a[j * dim + i]).abs() > 1e-12 {
                    return Err(Error::Config(format!(
                        "inner matrix must be symmetric; entry ({i},{j}) differs from ({j},{i})"
                    )));
                }
            }
        }
        if mu.is_nan() || lambda.is_nan() || mu <= 0.0 || lambda <= 0.0 {
            return Err(Error::Config(format!(
                "curvatures must be positive: mu = {mu}, lambda = {lambda}"
            )));
        }
        Ok(Self {
            dim,
            a,
            c,
            mu,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Inner map `g(x) = A x`.
    pub fn inner(&self, x: &[f64]) -> Vec<f64> {
        matvec(&self.a, self.dim, x)
    }

    /// Outer gradients `(grad_z f, grad_y f)` at `(z, y)`.
    pub fn outer_grads(&self, z: &[f64], y: f64) -> (Vec<f64>, f64) {
        let mut gz = z.to_vec();
        scale(&mut gz, self.lambda);
        axpy(y, &self.c, &mut gz);
        let gy = dot(&self.c, z) - self.mu * y;
        (gz, gy)
    }

    /// Outer value `f(z, y)`.
    pub fn outer_value(&self, z: &[f64], y: f64) -> f64 {
        y * dot(&self.c, z) - 0.5 * self.mu * y * y + 0.5 * self.lambda * l2_sq(z)
    }

    /// Best response `y*(x) = c.Ax / mu`.
    pub fn y_star(&self, x: &[f64]) -> f64 {
        dot(&self.c, &self.inner(x)) / self.mu
    }

    /// Envelope value `Phi(x) = max_y f(g(x), y)`.
    pub fn phi(&self, x: &[f64]) -> f64 {
        let z = self.inner(x);
        let czx = dot(&self.c, &z);
        czx * czx / (2.0 * self.mu) + 0.5 * self.lambda * l2_sq(&z)
    }

    /// Exact envelope gradient `grad Phi(x) = y*(x) A c + lambda A^2 x`.
    pub fn phi_grad(&self, x: &[f64]) -> Vec<f64> {
        let z = self.inner(x);
        let (gz, _) = self.outer_grads(&z, self.y_star(x));
        // A^T grad_z with A symmetric; the y-channel vanishes at y*.
        matvec(&self.a, self.dim, &gz)
    }
}

/// Squared norm of the envelope gradient — the stationarity measure traces
/// report.
pub fn phi_grad_norm_sq(problem: &ToyProblem, x: &[f64]) -> f64 {
    l2_sq(&problem.phi_grad(x))
}

/// Deterministic well-conditioned instance: `A = I + 0.4 * S / ||S||_F` with
/// `S` a random symmetric matrix (eigenvalues within `[0.6, 1.4]`), unit `c`,
/// `mu = 0.5`, `lambda = 1`.
pub fn make_toy_problem(dim: usize, seed: u64) -> Result<ToyProblem> {
    if dim == 0 {
        return Err(Error::Config("toy problem needs dim >= 1".into()));
    }
    let mut rng = RngStream::new(seed, STREAM_TOY_STRUCT);
    let mut s = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let v = rng.standard_normal();
            s[i * dim + j] = v;
            s[j * dim + i] = v;
        }
    }
    let fro = l2_sq(&s).sqrt().max(1e-12);
    let mut a = s;
    scale(&mut a, 0.4 / fro);
    for i in 0..dim {
        a[i * dim + i] += 1.0;
    }
    let mut c = vec![0.0; dim];
    rng.fill_standard_normal(&mut c);
    let norm = l2_sq(&c).sqrt().max(1e-12);
    scale(&mut c, 1.0 / norm);
    ToyProblem::new(dim, a, c, 0.5, 1.0)
}

/// Configuration of a federated synthetic run.
#[derive(Clone, Debug)]
pub struct ToyFederationConfig {
    pub dim: usize,
    pub devices: usize,
    pub total_iterations: usize,
    pub eval_every: usize,
    pub master_seed: u64,
    /// Seed for everything held fixed across repeats: the shared start point
    /// and the per-device heterogeneity structure.
    pub structure_seed: u64,
    pub hp: HyperParams,
    /// Magnitude of the zero-mean per-device perturbation of `A` and `c`.
    pub hetero: f64,
    /// Standard deviation of the additive noise on inner-map evaluations.
    pub noise_g: f64,
    /// Standard deviation of the additive noise on outer gradients.
    pub noise_f: f64,
    pub x0_scale: f64,
    pub decay: bool,
    pub threads: Option<usize>,
    pub timing: bool,
}

impl Default for ToyFederationConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            devices: 4,
            total_iterations: 1600,
            eval_every: 40,
            master_seed: 17,
            structure_seed: 101,
            hp: HyperParams::default(),
            hetero: 0.05,
            noise_g: 0.0,
            noise_f: 0.0,
            x0_scale: 1.0,
            decay: true,
            threads: None,
            timing: false,
        }
    }
}

impl ToyFederationConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.dim == 0 {
            return Err(Error::Config("toy run needs dim >= 1".into()));
        }
        if self.devices == 0 {
            return Err(Error::Config("need at least one device".into()));
        }
        if self.total_iterations == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "iterations and eval_every must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("hetero", self.hetero),
            ("noise_g", self.noise_g),
            ("noise_f", self.noise_f),
            ("x0_scale", self.x0_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Trace of a synthetic run: metric records plus the averaged primal-gradient
/// tracker at every evaluation point (used for variance studies) and the
/// final averaged iterate.
#[derive(Clone, Debug)]
pub struct ToyRun {
    pub records: Vec<MetricsRecord>,
    pub ubar_trace: Vec<(usize, Vec<f64>)>,
    pub final_x: Vec<f64>,
}

struct ToyDevice<'a> {
    x: Vec<f64>,
    y: f64,
    h: Vec<f64>,
    u: Vec<f64>,
    v: f64,
    rng: RngStream,
    a_k: Vec<f64>,
    c_k: Vec<f64>,
    mu: f64,
    lambda: f64,
    noise_g: f64,
    noise_f: f64,
    hp: &'a HyperParams,
}

impl ToyDevice<'_> {
    /// Draw the per-step noise in a fixed order (inner, outer-z, outer-y) so
    /// trajectories are reproducible regardless of evaluation laziness.
    fn draw_noise(&mut self) -> (Vec<f64>, Vec<f64>, f64) {
        let n = self.x.len();
        let mut xi = vec![0.0; n];
        let mut zeta = vec![0.0; n];
        let mut zeta_y = 0.0;
        if self.noise_g > 0.0 {
            self.rng.fill_standard_normal(&mut xi);
            scale(&mut xi, self.noise_g);
        }
        if self.noise_f > 0.0 {
            self.rng.fill_standard_normal(&mut zeta);
            scale(&mut zeta, self.noise_f);
            zeta_y = self.noise_f * self.rng.standard_normal();
        }
        (xi, zeta, zeta_y)
    }
}

impl FlatState for ToyDevice<'_> {
    fn flat_len(&self) -> usize {
        3 * self.x.len() + 2
    }

    fn write_flat(&self, out: &mut [f64]) {
        let n = self.x.len();
        out[..n].copy_from_slice(&self.x);
        out[n] = self.y;
        out[n + 1..2 * n + 1].copy_from_slice(&self.h);
        out[2 * n + 1..3 * n + 1].copy_from_slice(&self.u);
        out[3 * n + 1] = self.v;
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let n = self.x.len();
        self.x.copy_from_slice(&flat[..n]);
        self.y = flat[n];
        self.h.copy_from_slice(&flat[n + 1..2 * n + 1]);
        self.u.copy_from_slice(&flat[2 * n + 1..3 * n + 1]);
        self.v = flat[3 * n + 1];
    }
}

impl LocalDevice for ToyDevice<'_> {
    fn step(&mut self, eta_t: f64) {
        let n = self.x.len();
        let (xi, zeta, zeta_y) = self.draw_noise();
        let a_k = &self.a_k;
        let c_k = &self.c_k;
        let (mu, lambda) = (self.mu, self.lambda);
        scgdam_recurrence(
            &mut self.x,
            &mut self.y,
            &mut self.h,
            &mut self.u,
            &mut self.v,
            self.hp,
            eta_t,
            |x| {
                let mut g = matvec(a_k, n, x);
                axpy(1.0, &xi, &mut g);
                g
            },
            |_x, gz| matvec(a_k, n, gz),
            |h, y| {
                let mut gz = h.to_vec();
                scale(&mut gz, lambda);
                axpy(y, c_k, &mut gz);
                axpy(1.0, &zeta, &mut gz);
                let gy = dot(c_k, h) - mu * y + zeta_y;
                (gz, gy)
            },
        );
    }
}

/// Zero-mean per-device structure perturbations: `K` symmetric matrices and
/// vectors, each Frobenius/Euclidean-normalized before centering.
fn hetero_structure(dim: usize, devices: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = RngStream::new(seed, STREAM_TOY_STRUCT + 1);
    let mut mats: Vec<Vec<f64>> = Vec::with_capacity(devices);
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(devices);
    for _ in 0..devices {
        let mut s = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let v = rng.standard_normal();
                s[i * dim + j] = v;
                s[j * dim + i] = v;
            }
        }
        let fro = l2_sq(&s).sqrt().max(1e-12);
        scale(&mut s, 1.0 / fro);
        mats.push(s);
        let mut d = vec![0.0; dim];
        rng.fill_standard_normal(&mut d);
        let norm = l2_sq(&d).sqrt().max(1e-12);
        scale(&mut d, 1.0 / norm);
        vecs.push(d);
    }
    // Center so the device average recovers the global problem exactly.
    let k = devices as f64;
    let mut mat_mean = vec![0.0; dim * dim];
    let mut vec_mean = vec![0.0; dim];
    for m in &mats {
        axpy(1.0, m, &mut mat_mean);
    }
    for v in &vecs {
        axpy(1.0, v, &mut vec_mean);
    }
    scale(&mut mat_mean, 1.0 / k);
    scale(&mut vec_mean, 1.0 / k);
    for m in &mut mats {
        axpy(-1.0, &mat_mean, m);
    }
    for v in &mut vecs {
        axpy(-1.0, &vec_mean, v);
    }
    (mats, vecs)
}

/// Run the compositional method on a federated synthetic instance.
pub fn run_toy_federation(problem: &ToyProblem, cfg: &ToyFederationConfig) -> Result<ToyRun> {
    cfg.validate()?;
    if problem.dim() != cfg.dim {
        return Err(Error::Dimension {
            what: "toy problem dimension",
            expected: cfg.dim,
            got: problem.dim(),
        });
    }
    let n = cfg.dim;

    let mut x0 = vec![0.0; n];
    RngStream::new(cfg.structure_seed, STREAM_TOY_X0).fill_standard_normal(&mut x0);
    scale(&mut x0, cfg.x0_scale);

    let (mats, vecs) = hetero_structure(n, cfg.devices, cfg.structure_seed);
    let mut devices = Vec::with_capacity(cfg.devices);
    for k in 0..cfg.devices {
        let mut a_k = problem.a.clone();
        axpy(cfg.hetero, &mats[k], &mut a_k);
        let mut c_k = problem.c.clone();
        axpy(cfg.hetero, &vecs[k], &mut c_k);

        let mut dev = ToyDevice {
            x: x0.clone(),
            y: 0.0,
            h: vec![0.0; n],
            u: vec![0.0; n],
            v: 0.0,
            rng: derive_stream(cfg.master_seed, k as u64),
            a_k,
            c_k,
            mu: problem.mu,
            lambda: problem.lambda,
            noise_g: cfg.noise_g,
            noise_f: cfg.noise_f,
            hp: &cfg.hp,
        };
        // Trackers start at fresh estimates at (x0, y0), like the
        // classification path.
        let (xi, zeta, zeta_y) = dev.draw_noise();
        let mut h0 = matvec(&dev.a_k, n, &dev.x);
        axpy(1.0, &xi, &mut h0);
        let mut gz0 = h0.clone();
        scale(&mut gz0, dev.lambda);
        axpy(dev.y, &dev.c_k, &mut gz0);
        axpy(1.0, &zeta, &mut gz0);
        dev.u = matvec(&dev.a_k, n, &gz0);
        dev.v = dot(&dev.c_k, &h0) - dev.mu * dev.y + zeta_y;
        dev.h = h0;
        devices.push(dev);
    }

    let plan = LoopPlan {
        total: cfg.total_iterations,
        period: cfg.hp.period,
        eval_every: cfg.eval_every,
        base_scale: cfg.hp.eta,
        decay: cfg.decay,
        threads: cfg.threads,
        timing: cfg.timing,
        average_momentum: true,
    };

    let mut ubar_trace: Vec<(usize, Vec<f64>)> = Vec::new();
    let records = run_loop(&mut devices, &plan, |devs, it, round, eta_t, wall| {
        let k = devs.len() as f64;
        let mut xbar = vec![0.0; n];
        let mut ubar = vec![0.0; n];
        for d in devs {
            axpy(1.0, &d.x, &mut xbar);
            axpy(1.0, &d.u, &mut ubar);
        }
        scale(&mut xbar, 1.0 / k);
        scale(&mut ubar, 1.0 / k);
        let gnsq = phi_grad_norm_sq(problem, &xbar);
        let gap = crate::metrics::consensus_gap(devs).expect("uniform toy layout");
        ubar_trace.push((it, ubar));
        MetricsRecord {
            iteration: it,
            round,
            algo: "localscgdam",
            train_ce: None,
            train_auc_loss: None,
            test_auc_avg_model: None,
            test_auc_mean_devices: None,
            consensus_gap: gap,
            grad_norm_sq: Some(gnsq),
            eta_t,
            wall_ms: wall,
        }
    })?;

    let k = devices.len() as f64;
    let mut final_x = vec![0.0; n];
    for d in &devices {
        axpy(1.0, &d.x, &mut final_x);
    }
    scale(&mut final_x, 1.0 / k);

    Ok(ToyRun {
        records,
        ubar_trace,
        final_x,
    })
}
