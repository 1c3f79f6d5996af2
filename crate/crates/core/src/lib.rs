//! Contextual decision-weight learning.
//!
//! A logged dataset pairs a context `x` with the decision `d` that was taken
//! and a binary outcome `y`. Decisions are scored linearly through factor
//! vectors, `s(x, d) = w(x)ᵀ z_d`, and the object of interest is the weight
//! map `x ↦ w(x)` handed to a downstream optimizer.
//!
//! The crate is organised by role:
//!
//! * [`decision`]: libraries of factor vectors, scoring, argmax decisions and
//!   exact regret over a finite library.
//! * [`benchgen`]: seeded generators for the two-expert overlap benchmark and
//!   the matched K-expert hard/soft benchmark.
//! * [`models`]: the soft-segmentation estimator and every comparator.
//! * [`theory`]: numerical checks of the approximation floors, decomposition
//!   identities, rate separation and regret transfer.
//! * [`eval`]: metrics, paired bootstrap and timing.
//! * [`io`]: lossless structured-text persistence.

pub mod benchgen;
pub mod decision;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod logistic;
pub mod models;
pub mod optim;
pub mod rng;
pub mod theory;

pub use benchgen::{
    Benchmark, BenchConfig, ContextVector, EvalPoint, Family, LoggedDataset, LoggedRecord,
    MatchedKTruth, Truth, TruthMode, TwoExpertTruth,
};
pub use decision::{argmax_decision, regret, score, DecisionLibrary, RegretRecord};
pub use error::{Error, Result};
pub use eval::{evaluate, paired_bootstrap, BootstrapResult, EvalSummary, SeedSummary};
pub use models::{FitConfig, Method, WeightModel};

/// Logistic function, evaluated without overflow for large `|t|`.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)`.
#[inline]
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
