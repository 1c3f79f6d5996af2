//! Metrics on held-out contexts, the paired seed bootstrap, and timing.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::benchgen::{ContextVector, EvalPoint};
use crate::decision::{regret, DecisionLibrary, RegretRecord};
use crate::error::{Error, Result};
use crate::models::WeightModel;
use crate::rng::stream;

/// Metrics of one weight map on one evaluation set.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub weight_mse: f64,
    pub mean_regret: f64,
    pub match_rate: f64,
    /// `exp` of the mean gate entropy; gated classes only.
    pub gate_effective_experts: Option<f64>,
    pub transfer_violations: usize,
    pub records: Vec<RegretRecord>,
}

/// Score any weight map against the true weights of `eval`.
pub fn evaluate_predictor<F>(predict: F, eval: &[EvalPoint], lib: &DecisionLibrary) -> Result<EvalSummary>
where
    F: Fn(&ContextVector) -> Vec<f64>,
{
    if eval.is_empty() {
        return Err(Error::InvalidConfig("empty evaluation set".into()));
    }
    let mut sq = 0.0;
    let mut records = Vec::with_capacity(eval.len());
    for p in eval {
        let w_hat = predict(&p.context);
        crate::error::check_dim(p.weight.len(), w_hat.len())?;
        sq += w_hat.iter().zip(&p.weight).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        records.push(regret(&p.weight, &w_hat, lib)?);
    }
    let n = eval.len() as f64;
    Ok(EvalSummary {
        weight_mse: sq / n,
        mean_regret: records.iter().map(|r| r.regret).sum::<f64>() / n,
        match_rate: records.iter().filter(|r| r.chosen_index == r.oracle_index).count() as f64 / n,
        gate_effective_experts: None,
        transfer_violations: records.iter().filter(|r| !r.satisfies_transfer_bound()).count(),
        records,
    })
}

pub fn evaluate(model: &WeightModel, eval: &[EvalPoint], lib: &DecisionLibrary) -> Result<EvalSummary> {
    let mut out = evaluate_predictor(|x| model.predict_w(x), eval, lib)?;
    let contexts: Vec<&ContextVector> = eval.iter().map(|p| &p.context).collect();
    out.gate_effective_experts = gate_effective_experts(model, &contexts);
    Ok(out)
}

fn entropy(a: &[f64]) -> f64 {
    -a.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// `exp` of the mean Shannon entropy of the gate; `None` for ungated models.
pub fn gate_effective_experts(model: &WeightModel, contexts: &[&ContextVector]) -> Option<f64> {
    let first = model.gate(contexts.first()?)?;
    let mut total = entropy(&first);
    for x in &contexts[1..] {
        total += entropy(&model.gate(x)?);
    }
    Some((total / contexts.len() as f64).exp())
}

/// One row of the per-seed table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub benchmark: String,
    pub seed: u64,
    pub method: String,
    pub weight_mse: f64,
    pub mean_regret: f64,
    pub match_rate: f64,
    pub gate_entropy_eff: Option<f64>,
    pub fit_seconds: f64,
    pub selected_hypers: String,
    pub transfer_violations: usize,
}

impl SeedSummary {
    pub fn new(benchmark: &str, seed: u64, model: &WeightModel, eval: &EvalSummary) -> Self {
        Self {
            benchmark: benchmark.to_string(),
            seed,
            method: model.name.clone(),
            weight_mse: eval.weight_mse,
            mean_regret: eval.mean_regret,
            match_rate: eval.match_rate,
            gate_entropy_eff: eval.gate_effective_experts,
            fit_seconds: model.fit_seconds,
            selected_hypers: model.selected_string(),
            transfer_violations: eval.transfer_violations,
        }
    }
}

/// Result of a paired seed-level bootstrap of `a − b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub method_a: String,
    pub method_b: String,
    pub mean_diff: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub resamples: usize,
}

impl BootstrapResult {
    pub fn excludes_zero(&self) -> bool {
        self.ci_hi < 0.0 || self.ci_lo > 0.0
    }
}

pub const BOOTSTRAP_RESAMPLES: usize = 5000;

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resample seed indices with replacement; 2.5% and 97.5% percentiles of
/// the resampled mean differences.
pub fn paired_bootstrap(
    a: &[f64],
    b: &[f64],
    names: (&str, &str),
    resamples: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    if a.len() < 2 || resamples == 0 {
        return Err(Error::InvalidConfig("bootstrap needs at least two paired values".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let mut rng = stream(seed, "bootstrap");
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        method_a: names.0.to_string(),
        method_b: names.1.to_string(),
        mean_diff: diffs.iter().sum::<f64>() / n as f64,
        ci_lo: quantile_sorted(&means, 0.025),
        ci_hi: quantile_sorted(&means, 0.975),
        resamples,
    })
}

/// Run `f` and return its output with elapsed wall-clock seconds.
pub fn time_fit<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}
