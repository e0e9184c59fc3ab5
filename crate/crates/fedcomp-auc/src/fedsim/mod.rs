//! Synchronous K-device federation simulator.
//!
//! Every device owns a data shard, an optimizer state, and a private random
//! stream. A run alternates `period` local steps with one averaging round in
//! which states are replaced by their cross-device mean. Device steps between
//! barriers are independent, so they execute data-parallel when the
//! `parallel` feature is on; traces are bitwise identical for any thread
//! count because randomness is per-device and reductions are device-ordered.

pub mod exec;
pub mod toy;

use std::time::Instant;

use crate::auc::{auc_loss, prior_estimate, Prior};
use crate::data::LabeledDataset;
use crate::error::Error;
use crate::linalg::scale;
use crate::metrics::{auc_score, consensus_gap, MetricsRecord};
use crate::model::{ce_loss, Classifier, Minibatch};
use crate::optim::{
    average_states_prefix, coda_step, scgdam_init, scgdam_step, sgdam_init, sgdam_step, sgdm_step,
    CodaState, DeviceState, FlatState, HyperParams, SgdamState, SgdmState,
};
use crate::param::{make_param, DualScalar, ParamVector};
use crate::rng::{derive_stream, RngStream, STREAM_BASE_INTERNAL};
use crate::Result;

pub(crate) const STREAM_INIT: u64 = STREAM_BASE_INTERNAL + 10;
pub(crate) const STREAM_PARTITION: u64 = STREAM_BASE_INTERNAL + 11;

/// The federated optimizers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    /// Compositional primal-dual method with inner-value and gradient
    /// trackers; all five state blocks are averaged at each round.
    LocalScgdam,
    /// Heavy-ball momentum on cross-entropy.
    LocalSgdm,
    /// Primal-dual momentum directly on the surrogate (no inner map).
    LocalSgdam,
    /// Simultaneous gradient-descent-ascent on the surrogate.
    Coda,
}

impl Algo {
    pub const ALL: [Algo; 4] = [
        Algo::LocalScgdam,
        Algo::LocalSgdm,
        Algo::LocalSgdam,
        Algo::Coda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algo::LocalScgdam => "localscgdam",
            Algo::LocalSgdm => "localsgdm",
            Algo::LocalSgdam => "localsgdam",
            Algo::Coda => "coda",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "localscgdam" | "scgdam" => Ok(Algo::LocalScgdam),
            "localsgdm" | "sgdm" => Ok(Algo::LocalSgdm),
            "localsgdam" | "sgdam" => Ok(Algo::LocalSgdam),
            "coda" => Ok(Algo::Coda),
            other => Err(Error::Config(format!(
                "unknown algorithm {other:?} (expected one of localscgdam, localsgdm, localsgdam, coda)"
            ))),
        }
    }
}

/// How devices draw minibatches from their shard.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Uniform draws with replacement (the default for unbiased stochastic
    /// gradients).
    WithReplacement,
    /// Shuffled passes over the shard, reshuffling at each epoch boundary.
    Epoch,
}

/// Complete description of one federated run.
#[derive(Clone, Debug)]
pub struct FederationConfig {
    pub devices: usize,
    pub algo: Algo,
    pub total_iterations: usize,
    /// Record metrics every this many iterations (the final iteration is
    /// always recorded).
    pub eval_every: usize,
    pub master_seed: u64,
    pub hp: HyperParams,
    /// Step size of the non-tracker baselines.
    pub baseline_lr: f64,
    /// Heavy-ball coefficient of the momentum baseline.
    pub baseline_momentum: f64,
    /// Scale of the random weight initialization (shared by all devices).
    pub init_scale: f64,
    /// Draw separate inner/outer batches per step instead of sharing one.
    pub independent_batches: bool,
    /// Average baseline momentum buffers at sync (parameters always are).
    pub average_momentum: bool,
    pub sampling: Sampling,
    /// Apply the staged step-size decay (drop by 10x at 50% and 75%).
    pub decay: bool,
    /// Worker threads for device steps; `None` uses the library default,
    /// `Some(1)` forces the sequential path.
    pub threads: Option<usize>,
    /// Record wall-clock times. Off by default so traces are byte-identical
    /// across machines and runs.
    pub timing: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            devices: 4,
            algo: Algo::LocalScgdam,
            total_iterations: 2000,
            eval_every: 100,
            master_seed: 17,
            hp: HyperParams::default(),
            baseline_lr: 0.1,
            baseline_momentum: 0.1,
            init_scale: 0.01,
            independent_batches: false,
            average_momentum: true,
            sampling: Sampling::WithReplacement,
            decay: true,
            threads: None,
            timing: false,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.devices == 0 {
            return Err(Error::Config("need at least one device".into()));
        }
        if self.total_iterations == 0 {
            return Err(Error::Config("need at least one iteration".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if !(self.baseline_lr > 0.0 && self.baseline_lr.is_finite()) {
            return Err(Error::Config(format!(
                "baseline learning rate must be positive, got {}",
                self.baseline_lr
            )));
        }
        if !(0.0..1.0).contains(&self.baseline_momentum) {
            return Err(Error::Config(format!(
                "baseline momentum must lie in [0, 1), got {}",
                self.baseline_momentum
            )));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config(format!(
                "init scale must be non-negative, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// Staged step-size decay: full scale for the first half of the run, one
/// tenth until three quarters, one hundredth after. Boundaries are computed
/// in integer arithmetic so they are exact for any `total`.
pub fn lr_schedule(t: usize, total: usize, base: f64) -> f64 {
    debug_assert!(t < total, "iteration index beyond the schedule");
    if 2 * t < total {
        base
    } else if 4 * t < 3 * total {
        base / 10.0
    } else {
        base / 100.0
    }
}

/// Shuffle-and-slice partition into `k` shards with sizes differing by at
/// most one (the first `n mod k` shards get the extra sample).
pub fn partition(ds: &LabeledDataset, k: usize, seed: u64) -> Result<Vec<LabeledDataset>> {
    if k == 0 {
        return Err(Error::Config("cannot partition into zero shards".into()));
    }
    let n = ds.len();
    if n < k {
        return Err(Error::DatasetTooSmall { n, k });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    RngStream::new(seed, STREAM_PARTITION).shuffle(&mut idx);
    let base = n / k;
    let extra = n % k;
    let mut shards = Vec::with_capacity(k);
    let mut cursor = 0;
    for shard_id in 0..k {
        let size = base + usize::from(shard_id < extra);
        let samples: Vec<_> = idx[cursor..cursor + size]
            .iter()
            .map(|&i| ds.samples()[i].clone())
            .collect();
        cursor += size;
        shards.push(LabeledDataset::new(
            format!("{}|shard{shard_id}", ds.name()),
            samples,
        )?);
    }
    Ok(shards)
}

/// Per-device batch source.
#[derive(Clone, Debug)]
struct Sampler {
    mode: Sampling,
    order: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    fn new(mode: Sampling, shard_len: usize) -> Self {
        Self {
            mode,
            order: (0..shard_len).collect(),
            cursor: shard_len, // force a shuffle on the first epoch draw
        }
    }

    fn draw(&mut self, shard: &LabeledDataset, rng: &mut RngStream, batch_size: usize) -> Minibatch {
        let mut samples = Vec::with_capacity(batch_size);
        match self.mode {
            Sampling::WithReplacement => {
                for _ in 0..batch_size {
                    samples.push(shard.samples()[rng.index(shard.len())].clone());
                }
            }
            Sampling::Epoch => {
                for _ in 0..batch_size {
                    if self.cursor >= self.order.len() {
                        rng.shuffle(&mut self.order);
                        self.cursor = 0;
                    }
                    samples.push(shard.samples()[self.order[self.cursor]].clone());
                    self.cursor += 1;
                }
            }
        }
        Minibatch::new(samples).expect("batch size is validated positive")
    }
}

/// Read-only context shared by all devices of a run.
struct RunCtx<'a> {
    c: &'a Classifier,
    hp: HyperParams,
    prior: Prior,
    baseline_lr: f64,
    baseline_momentum: f64,
    independent: bool,
}

/// One local update rule: how a state consumes a batch (or two) per step.
trait LocalRule: FlatState + Send {
    /// Whether the rule evaluates inner and outer quantities on separate
    /// batches when independent draws are requested.
    fn uses_second_batch() -> bool {
        false
    }
    fn rng_mut(&mut self) -> &mut RngStream;
    fn local_step(&mut self, ctx: &RunCtx<'_>, bg: &Minibatch, bf: Option<&Minibatch>, eta_t: f64);
    fn primal(&self) -> &ParamVector;
    fn dual(&self) -> f64;
}

impl LocalRule for DeviceState {
    fn uses_second_batch() -> bool {
        true
    }

    fn rng_mut(&mut self) -> &mut RngStream {
        &mut self.rng
    }

    fn local_step(&mut self, ctx: &RunCtx<'_>, bg: &Minibatch, bf: Option<&Minibatch>, eta_t: f64) {
        let bf = bf.unwrap_or(bg);
        scgdam_step(ctx.c, self, &ctx.hp, bg, bf, ctx.prior, eta_t)
            .expect("step scale validated before the run");
    }

    fn primal(&self) -> &ParamVector {
        &self.x
    }

    fn dual(&self) -> f64 {
        self.y.0
    }
}

impl LocalRule for SgdmState {
    fn rng_mut(&mut self) -> &mut RngStream {
        &mut self.rng
    }

    fn local_step(&mut self, ctx: &RunCtx<'_>, bg: &Minibatch, _bf: Option<&Minibatch>, _eta_t: f64) {
        sgdm_step(ctx.c, self, ctx.baseline_lr, ctx.baseline_momentum, bg);
    }

    fn primal(&self) -> &ParamVector {
        &self.x
    }

    fn dual(&self) -> f64 {
        0.0
    }
}

impl LocalRule for SgdamState {
    fn rng_mut(&mut self) -> &mut RngStream {
        &mut self.rng
    }

    fn local_step(&mut self, ctx: &RunCtx<'_>, bg: &Minibatch, _bf: Option<&Minibatch>, eta_t: f64) {
        sgdam_step(ctx.c, self, &ctx.hp, bg, ctx.prior, eta_t)
            .expect("step scale validated before the run");
    }

    fn primal(&self) -> &ParamVector {
        &self.x
    }

    fn dual(&self) -> f64 {
        self.y.0
    }
}

impl LocalRule for CodaState {
    fn rng_mut(&mut self) -> &mut RngStream {
        &mut self.rng
    }

    fn local_step(&mut self, ctx: &RunCtx<'_>, bg: &Minibatch, _bf: Option<&Minibatch>, _eta_t: f64) {
        coda_step(
            ctx.c,
            self,
            ctx.baseline_lr,
            ctx.hp.dual_clamp,
            bg,
            ctx.prior,
        );
    }

    fn primal(&self) -> &ParamVector {
        &self.x
    }

    fn dual(&self) -> f64 {
        self.y.0
    }
}

/// Anything `run_loop` can drive: steppable, averageable, sendable.
pub(crate) trait LocalDevice: FlatState + Send {
    fn step(&mut self, eta_t: f64);
}

/// A state bound to its shard and batch source.
struct FedDevice<'a, S> {
    state: S,
    shard: LabeledDataset,
    sampler: Sampler,
    ctx: &'a RunCtx<'a>,
}

impl<S: LocalRule> LocalDevice for FedDevice<'_, S> {
    fn step(&mut self, eta_t: f64) {
        let batch_size = self.ctx.hp.batch_size;
        let bg = self
            .sampler
            .draw(&self.shard, self.state.rng_mut(), batch_size);
        let bf = if self.ctx.independent && S::uses_second_batch() {
            Some(
                self.sampler
                    .draw(&self.shard, self.state.rng_mut(), batch_size),
            )
        } else {
            None
        };
        self.state.local_step(self.ctx, &bg, bf.as_ref(), eta_t);
    }
}

impl<S: LocalRule> FlatState for FedDevice<'_, S> {
    fn flat_len(&self) -> usize {
        self.state.flat_len()
    }

    fn write_flat(&self, out: &mut [f64]) {
        self.state.write_flat(out);
    }

    fn load_flat(&mut self, flat: &[f64]) {
        self.state.load_flat(flat);
    }

    fn param_len(&self) -> usize {
        self.state.param_len()
    }
}

/// Loop bookkeeping shared by classification and synthetic runs.
pub(crate) struct LoopPlan {
    pub total: usize,
    pub period: usize,
    pub eval_every: usize,
    pub base_scale: f64,
    pub decay: bool,
    pub threads: Option<usize>,
    pub timing: bool,
    pub average_momentum: bool,
}

/// Drive devices through local steps, periodic averaging, and evaluation.
///
/// The evaluation closure sees devices immediately after the step (and after
/// averaging when the iteration is a multiple of the period), receiving
/// `(devices, iteration, completed_rounds, eta_t, wall_ms)`.
pub(crate) fn run_loop<D, EV>(
    devices: &mut [D],
    plan: &LoopPlan,
    mut evaluate: EV,
) -> Result<Vec<MetricsRecord>>
where
    D: LocalDevice,
    EV: FnMut(&[D], usize, usize, f64, u64) -> MetricsRecord + Send,
{
    let start = Instant::now();
    let sequential = matches!(plan.threads, Some(1)) || !cfg!(feature = "parallel");
    exec::with_threads(plan.threads, move || -> Result<Vec<MetricsRecord>> {
        let mut records = Vec::new();
        for t in 0..plan.total {
            let eta_t = if plan.decay {
                lr_schedule(t, plan.total, plan.base_scale)
            } else {
                plan.base_scale
            };
            exec::for_each_device(devices, sequential, |d| d.step(eta_t));
            let it = t + 1;
            if it % plan.period == 0 {
                let prefix = if plan.average_momentum {
                    devices[0].flat_len()
                } else {
                    devices[0].param_len()
                };
                average_states_prefix(devices, prefix)?;
            }
            if it % plan.eval_every == 0 || it == plan.total {
                let wall = if plan.timing {
                    start.elapsed().as_millis() as u64
                } else {
                    0
                };
                records.push(evaluate(devices, it, it / plan.period, eta_t, wall));
            }
        }
        Ok(records)
    })
}

/// Evaluation context for classification runs.
struct EvalCtx<'a> {
    c: &'a Classifier,
    prior: Prior,
    train: &'a LabeledDataset,
    test: &'a LabeledDataset,
    algo: &'static str,
}

fn test_auc_of(c: &Classifier, w: &[f64], test: &LabeledDataset) -> f64 {
    let mut pos = Vec::with_capacity(test.positive_count());
    let mut neg = Vec::with_capacity(test.negative_count());
    for s in test.samples() {
        let score = c.score(w, s.features());
        if s.is_positive() {
            pos.push(score);
        } else {
            neg.push(score);
        }
    }
    auc_score(&pos, &neg).expect("test set validated to contain both classes")
}

fn classification_eval<S: LocalRule>(
    ectx: &EvalCtx<'_>,
    devices: &[FedDevice<'_, S>],
    iteration: usize,
    round: usize,
    eta_t: f64,
    wall_ms: u64,
) -> MetricsRecord {
    // Averaged model: mean of primal vectors and duals in device order.
    let d1 = devices[0].state.primal().dim();
    let wd = devices[0].state.primal().weight_dim();
    let mut mean_flat = vec![0.0; d1];
    let mut mean_dual = 0.0;
    for dev in devices {
        for (acc, &v) in mean_flat.iter_mut().zip(dev.state.primal().as_slice()) {
            *acc += v;
        }
        mean_dual += dev.state.dual();
    }
    let k = devices.len() as f64;
    scale(&mut mean_flat, 1.0 / k);
    mean_dual /= k;
    let mean_param = ParamVector::from_flat(mean_flat, wd).expect("device layout is uniform");

    let auc_avg_model = test_auc_of(ectx.c, mean_param.w(), ectx.test);
    let mut auc_mean_devices = 0.0;
    for dev in devices {
        auc_mean_devices += test_auc_of(ectx.c, dev.state.primal().w(), ectx.test);
    }
    auc_mean_devices /= k;

    let train_ce = ce_loss(ectx.c, mean_param.w(), ectx.train.samples());
    let train_auc_loss = auc_loss(
        ectx.c,
        &mean_param,
        DualScalar(mean_dual),
        ectx.train.samples(),
        ectx.prior,
    )
    .value;
    let gap = consensus_gap(devices).expect("device layout is uniform");

    MetricsRecord {
        iteration,
        round,
        algo: ectx.algo,
        train_ce: Some(train_ce),
        train_auc_loss: Some(train_auc_loss),
        test_auc_avg_model: Some(auc_avg_model),
        test_auc_mean_devices: Some(auc_mean_devices),
        consensus_gap: gap,
        grad_norm_sq: None,
        eta_t,
        wall_ms,
    }
}

/// Run one federated training job and return its evaluation trace.
///
/// `train` is sharded across `cfg.devices` devices; `test` is used only for
/// evaluation. Both sets must contain both classes.
pub fn run_federation(
    c: &Classifier,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &FederationConfig,
) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let prior = prior_estimate(train)?;
    prior_estimate(test)?; // AUC needs both classes in the test set too
    if train.feature_dim() != c.feature_dim() || test.feature_dim() != c.feature_dim() {
        return Err(Error::Dimension {
            what: "dataset feature width",
            expected: c.feature_dim(),
            got: train.feature_dim(),
        });
    }

    let shards = partition(train, cfg.devices, cfg.master_seed)?;
    let mut init_rng = RngStream::new(cfg.master_seed, STREAM_INIT);
    let x0 = make_param(c.param_dim(), cfg.init_scale, &mut init_rng)?;
    let y0 = DualScalar(0.0);

    let ctx = RunCtx {
        c,
        hp: cfg.hp,
        prior,
        baseline_lr: cfg.baseline_lr,
        baseline_momentum: cfg.baseline_momentum,
        independent: cfg.independent_batches,
    };
    let ectx = EvalCtx {
        c,
        prior,
        train,
        test,
        algo: cfg.algo.name(),
    };
    let plan = LoopPlan {
        total: cfg.total_iterations,
        period: cfg.hp.period,
        eval_every: cfg.eval_every,
        base_scale: match cfg.algo {
            Algo::LocalScgdam | Algo::LocalSgdam => cfg.hp.eta,
            Algo::LocalSgdm | Algo::Coda => cfg.baseline_lr,
        },
        decay: cfg.decay,
        threads: cfg.threads,
        timing: cfg.timing,
        average_momentum: cfg.average_momentum,
    };

    match cfg.algo {
        Algo::LocalScgdam => {
            let mut devices = Vec::with_capacity(cfg.devices);
            for (k, shard) in shards.into_iter().enumerate() {
                let mut rng = derive_stream(cfg.master_seed, k as u64);
                let mut sampler = Sampler::new(cfg.sampling, shard.len());
                let bg = sampler.draw(&shard, &mut rng, cfg.hp.batch_size);
                let state = if cfg.independent_batches {
                    let bf = sampler.draw(&shard, &mut rng, cfg.hp.batch_size);
                    scgdam_init(c, &x0, y0, &bg, &bf, &cfg.hp, prior, rng)?
                } else {
                    scgdam_init(c, &x0, y0, &bg, &bg, &cfg.hp, prior, rng)?
                };
                devices.push(FedDevice {
                    state,
                    shard,
                    sampler,
                    ctx: &ctx,
                });
            }
            run_loop(&mut devices, &plan, |devs, it, round, eta, wall| {
                classification_eval(&ectx, devs, it, round, eta, wall)
            })
        }
        Algo::LocalSgdm => {
            let mut devices = Vec::with_capacity(cfg.devices);
            for (k, shard) in shards.into_iter().enumerate() {
                let rng = derive_stream(cfg.master_seed, k as u64);
                let sampler = Sampler::new(cfg.sampling, shard.len());
                devices.push(FedDevice {
                    state: SgdmState::new(x0.clone(), rng),
                    shard,
                    sampler,
                    ctx: &ctx,
                });
            }
            run_loop(&mut devices, &plan, |devs, it, round, eta, wall| {
                classification_eval(&ectx, devs, it, round, eta, wall)
            })
        }
        Algo::LocalSgdam => {
            let mut devices = Vec::with_capacity(cfg.devices);
            for (k, shard) in shards.into_iter().enumerate() {
                let mut rng = derive_stream(cfg.master_seed, k as u64);
                let mut sampler = Sampler::new(cfg.sampling, shard.len());
                let b0 = sampler.draw(&shard, &mut rng, cfg.hp.batch_size);
                let state = sgdam_init(c, x0.clone(), y0, &b0, &cfg.hp, prior, rng)?;
                devices.push(FedDevice {
                    state,
                    shard,
                    sampler,
                    ctx: &ctx,
                });
            }
            run_loop(&mut devices, &plan, |devs, it, round, eta, wall| {
                classification_eval(&ectx, devs, it, round, eta, wall)
            })
        }
        Algo::Coda => {
            let mut devices = Vec::with_capacity(cfg.devices);
            for (k, shard) in shards.into_iter().enumerate() {
                let rng = derive_stream(cfg.master_seed, k as u64);
                let sampler = Sampler::new(cfg.sampling, shard.len());
                devices.push(FedDevice {
                    state: CodaState::new(x0.clone(), y0, rng),
                    shard,
                    sampler,
                    ctx: &ctx,
                });
            }
            run_loop(&mut devices, &plan, |devs, it, round, eta, wall| {
                classification_eval(&ectx, devs, it, round, eta, wall)
            })
        }
    }
}
