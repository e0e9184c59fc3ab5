//! Federated compositional minimax optimization for AUC maximization on
//! imbalanced binary classification.
//!
//! The library has three layers:
//!
//! * **Problem definition** — a minimax AUC surrogate with analytic gradients
//!   ([`auc`]), a proximal-style inner map `g(x) = x - rho * grad_ce(w)` that
//!   turns the surrogate into a compositional objective ([`compositional`]),
//!   and the classifiers it is evaluated on ([`model`]).
//! * **Optimizers** — the single-timescale compositional primal-dual update
//!   with moving-average trackers, plus plain momentum / primal-dual momentum /
//!   simultaneous gradient-descent-ascent baselines ([`optim`]).
//! * **Simulation** — a synchronous K-device federation with periodic state
//!   averaging and a deterministic, splittable RNG per device ([`fedsim`],
//!   [`rng`]), exact AUC scoring and run traces ([`metrics`]), synthetic and
//!   CSV data pipelines ([`data`]), finite-difference oracle suites
//!   ([`gradcheck`]), and a TOML-driven experiment runner ([`config`]).
//!
//! Device updates between communication barriers are data-parallel (rayon)
//! when the `parallel` feature is enabled; results are bitwise identical to
//! the sequential fallback because every device owns its random stream and
//! reductions always run in device order.

pub mod auc;
pub mod compositional;
pub mod config;
pub mod data;
pub mod error;
pub mod fedsim;
pub mod gradcheck;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod param;
pub mod rng;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
