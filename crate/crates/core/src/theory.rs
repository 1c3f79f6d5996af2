//! Numerical checks of the approximation floors, decomposition identities,
//! hard/soft rate separation and margin-local regret transfer.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchgen::{
    draw_library, draw_truth, generate_records, sample_contexts, BenchConfig, ContextVector, Family,
    LoggedDataset, Truth, TruthMode, TwoExpertTruth,
};
use crate::decision::{regret, DecisionLibrary, RegretRecord};
use crate::error::{Error, Result};
use crate::logistic::LogisticProblem;
use crate::models::oracle_gate::{fit_oracle_coef, oracle_design};
use crate::models::{rows, FitData};
use crate::rng::{stream, StreamRng};
use crate::benchgen::combine as combine_weights;
use crate::{dot, sigmoid, softmax_in_place};

/// One line of the theory report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryCheck {
    pub name: String,
    pub bound: f64,
    pub realized: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl TheoryCheck {
    pub fn new(name: impl Into<String>, bound: f64, realized: f64, pass: bool) -> Self {
        Self { name: name.into(), bound, realized, pass, note: String::new() }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

/// One JSON object per line.
pub fn write_report(path: &Path, checks: &[TheoryCheck]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in checks {
        writeln!(f, "{}", serde_json::to_string(c)?)?;
    }
    f.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Overlap floor

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorParams {
    pub delta_beta_sq: f64,
    pub kappa: f64,
    pub a: f64,
    pub b: f64,
    pub m: usize,
}

/// `‖Δβ‖² κ² (b − a)³ / (12 M²)`.
pub fn floor_lower_bound(p: &FloorParams) -> f64 {
    p.delta_beta_sq * p.kappa * p.kappa * (p.b - p.a).powi(3) / (12.0 * (p.m as f64).powi(2))
}

/// Best `m`-interval step approximation error of grid samples `f`, for every
/// `m = 1..=max_m`. Errors are grid-Riemann integrals over `[0, 1]`.
pub fn best_step_fits(f: &[f64], max_m: usize) -> Result<Vec<f64>> {
    let g = f.len();
    if max_m == 0 || max_m > g {
        return Err(Error::InvalidConfig(format!("need 1 <= M <= G, got M={max_m}, G={g}")));
    }
    let mut s1 = vec![0.0; g + 1];
    let mut s2 = vec![0.0; g + 1];
    for (i, v) in f.iter().enumerate() {
        s1[i + 1] = s1[i] + v;
        s2[i + 1] = s2[i] + v * v;
    }
    // squared error of the best constant on f[i..j]
    let cost = |i: usize, j: usize| -> f64 {
        let n = (j - i) as f64;
        let s = s1[j] - s1[i];
        (s2[j] - s2[i] - s * s / n).max(0.0)
    };
    let mut prev: Vec<f64> = (0..=g).map(|j| if j == 0 { 0.0 } else { cost(0, j) }).collect();
    let mut out = vec![prev[g] / g as f64];
    for m in 2..=max_m {
        let mut cur = vec![f64::INFINITY; g + 1];
        for j in m..=g {
            let mut best = f64::INFINITY;
            for i in (m - 1)..j {
                let c = prev[i] + cost(i, j);
                if c < best {
                    best = c;
                }
            }
            cur[j] = best;
        }
        out.push(cur[g] / g as f64);
        prev = cur;
    }
    Ok(out)
}

pub fn best_step_fit(f: &[f64], m: usize) -> Result<f64> {
    Ok(*best_step_fits(f, m)?.last().expect("m >= 1"))
}

/// Midpoint samples of `f` on a uniform grid of `g` cells over `[0, 1]`.
pub fn grid(g: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    (0..g).map(|i| f((i as f64 + 0.5) / g as f64)).collect()
}

/// Shapes of the one-dimensional mixture weight on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum FloorShape {
    /// `α(t) = t`.
    Linear,
    /// `α(t) = σ(τ (t − ½))`.
    Sigmoid { tau: f64 },
}

impl FloorShape {
    pub fn alpha(self, t: f64) -> f64 {
        match self {
            FloorShape::Linear => t,
            FloorShape::Sigmoid { tau } => sigmoid(tau * (t - 0.5)),
        }
    }

    /// Minimum slope on `[0, 1]`; for the sigmoid it sits at the endpoints.
    pub fn kappa(self) -> f64 {
        match self {
            FloorShape::Linear => 1.0,
            FloorShape::Sigmoid { tau } => {
                let s = sigmoid(tau * 0.5);
                tau * s * (1.0 - s)
            }
        }
    }

    /// Maximum slope on `[0, 1]`.
    pub fn lipschitz(self) -> f64 {
        match self {
            FloorShape::Linear => 1.0,
            FloorShape::Sigmoid { tau } => tau / 4.0,
        }
    }
}

pub const FLOOR_GRID: usize = 10_000;
/// Relative allowance for the grid variance sitting just below its continuum limit.
pub const FLOOR_GRID_SLACK: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorRow {
    pub m: usize,
    pub lower: f64,
    pub step_fit: f64,
    pub upper: f64,
    pub pass: bool,
}

/// Compare `‖Δβ‖²·best_step_fit(α, M)` against the lower floor and the
/// Lipschitz upper bound `‖Δβ‖² L² / (4 M²)`. `kappa_scale` multiplies κ and
/// exists to show the lower bound is not vacuous.
pub fn verify_floor(shape: FloorShape, delta_beta_sq: f64, m_list: &[usize], kappa_scale: f64) -> Result<Vec<FloorRow>> {
    let max_m = m_list.iter().copied().max().unwrap_or(1);
    let f = grid(FLOOR_GRID, |t| shape.alpha(t));
    let fits = best_step_fits(&f, max_m)?;
    let l = shape.lipschitz();
    Ok(m_list
        .iter()
        .map(|&m| {
            let lower = floor_lower_bound(&FloorParams { delta_beta_sq, kappa: shape.kappa() * kappa_scale, a: 0.0, b: 1.0, m });
            let step_fit = delta_beta_sq * fits[m - 1];
            let upper = delta_beta_sq * l * l / (4.0 * (m * m) as f64);
            let pass = step_fit >= lower * (1.0 - FLOOR_GRID_SLACK) && step_fit <= upper;
            FloorRow { m, lower, step_fit, upper, pass }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Pooled and aligned-hard oracle errors

/// `E[g(Z)]` for `Z ~ N(0, 1)` by composite Simpson on `[−12, 12]`.
pub fn gaussian_expectation(g: impl Fn(f64) -> f64) -> f64 {
    let n = 24_000;
    let (lo, hi) = (-12.0f64, 12.0f64);
    let h = (hi - lo) / n as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let f = |z: f64| g(z) * norm * (-0.5 * z * z).exp();
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let z = lo + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(z);
    }
    s * h / 3.0
}

fn signal_projection(truth: &TwoExpertTruth) -> f64 {
    dot(&truth.u, &truth.u).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledOracleCheck {
    /// `‖Δβ‖² Var(λ*(X))`, by quadrature.
    pub analytic: f64,
    /// Squared error of the best constant fit to sampled `w*(X)`.
    pub empirical: f64,
    pub rel_gap: f64,
}

/// Pooled oracle error, analytic against Monte-Carlo projection onto constants.
pub fn pooled_oracle_error(truth: &TwoExpertTruth, contexts: &[ContextVector]) -> Result<PooledOracleCheck> {
    let s = truth.tau * signal_projection(truth);
    let m1 = gaussian_expectation(|z| sigmoid(s * z));
    let m2 = gaussian_expectation(|z| sigmoid(s * z).powi(2));
    let analytic = truth.delta_beta_sq() * (m2 - m1 * m1);
    let empirical = best_constant_error(&contexts.iter().map(|x| truth.weight(x)).collect::<Result<Vec<_>>>()?);
    Ok(PooledOracleCheck { analytic, empirical, rel_gap: rel_gap(empirical, analytic) })
}

fn rel_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(a.abs())
    }
}

/// Mean squared distance of vectors to their mean.
pub fn best_constant_error(w: &[Vec<f64>]) -> f64 {
    let n = w.len() as f64;
    let j = w[0].len();
    let mean: Vec<f64> = (0..j).map(|c| w.iter().map(|v| v[c]).sum::<f64>() / n).collect();
    w.iter().map(|v| v.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum::<f64>() / n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedHardCheck {
    /// `‖Δβ‖² E[min{α², (1−α)²}]` by quadrature.
    pub analytic: f64,
    /// Same expectation over the sample.
    pub monte_carlo: f64,
    /// Sample error of the threshold predictor `β₁ 1{α ≥ ½} + β₂ 1{α < ½}`.
    pub threshold_error: f64,
    /// `(ε, ‖Δβ‖² (ε² + ¼ P(α ∈ [ε, 1−ε])))` per ε.
    pub eps_bounds: Vec<(f64, f64)>,
    pub rel_gap: f64,
    pub pass: bool,
}

pub fn aligned_hard_upper(truth: &TwoExpertTruth, contexts: &[ContextVector], eps_grid: &[f64]) -> Result<AlignedHardCheck> {
    let dbs = truth.delta_beta_sq();
    let s = truth.tau * signal_projection(truth);
    let analytic = dbs * gaussian_expectation(|z| {
        let a = sigmoid(s * z);
        (a * a).min((1.0 - a) * (1.0 - a))
    });
    let n = contexts.len() as f64;
    let lambdas: Vec<f64> = contexts.iter().map(|x| truth.lambda(x)).collect();
    let monte_carlo = dbs * lambdas.iter().map(|a| (a * a).min((1.0 - a) * (1.0 - a))).sum::<f64>() / n;
    let mut threshold_error = 0.0;
    for x in contexts {
        let w = truth.weight(x)?;
        let pick = if truth.lambda(x) >= 0.5 { &truth.beta1 } else { &truth.beta2 };
        threshold_error += w.iter().zip(pick).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    threshold_error /= n;
    let eps_bounds: Vec<(f64, f64)> = eps_grid
        .iter()
        .map(|&e| {
            let mid = lambdas.iter().filter(|a| **a >= e && **a <= 1.0 - e).count() as f64 / n;
            (e, dbs * (e * e + 0.25 * mid))
        })
        .collect();
    let tol = 1e-12 * (1.0 + dbs);
    let pass = threshold_error <= monte_carlo + tol && eps_bounds.iter().all(|(_, b)| threshold_error <= b + tol);
    Ok(AlignedHardCheck { analytic, monte_carlo, threshold_error, eps_bounds, rel_gap: rel_gap(monte_carlo, analytic), pass })
}

// ---------------------------------------------------------------------------
// Decomposition identities

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionDecomposition {
    /// Within-cell variance term.
    pub within: f64,
    /// Largest relative residual of `total = within + projection` over the random predictors.
    pub max_rel_err: f64,
    pub predictors: usize,
    pub empty_cells: Vec<usize>,
}

/// Total squared error of random cellwise-constant predictors against the
/// split into within-cell variance and distance to the cell means.
pub fn hard_partition_decomposition_check(
    w: &[Vec<f64>],
    labels: &[usize],
    n_cells: usize,
    predictors: usize,
    seed: u64,
) -> Result<PartitionDecomposition> {
    if w.len() != labels.len() || w.is_empty() {
        return Err(Error::DimensionMismatch { expected: w.len(), got: labels.len() });
    }
    let j = w[0].len();
    let n = w.len() as f64;
    let mut sums = vec![vec![0.0; j]; n_cells];
    let mut counts = vec![0usize; n_cells];
    for (v, &c) in w.iter().zip(labels) {
        if c >= n_cells {
            return Err(Error::InvalidConfig(format!("label {c} outside {n_cells} cells")));
        }
        counts[c] += 1;
        sums[c].iter_mut().zip(v).for_each(|(s, x)| *s += x);
    }
    let empty_cells: Vec<usize> = (0..n_cells).filter(|&c| counts[c] == 0).collect();
    let means: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s.iter().map(|v| if c == 0 { 0.0 } else { v / c as f64 }).collect())
        .collect();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let within = w.iter().zip(labels).map(|(v, &c)| sq(v, &means[c])).sum::<f64>() / n;
    let mut rng = stream(seed, "theory/partition");
    let mut max_rel_err: f64 = 0.0;
    for _ in 0..predictors {
        let pred: Vec<Vec<f64>> = (0..n_cells).map(|_| normal_vec(&mut rng, j)).collect();
        let total = w.iter().zip(labels).map(|(v, &c)| sq(v, &pred[c])).sum::<f64>() / n;
        let projection = (0..n_cells).map(|c| counts[c] as f64 * sq(&means[c], &pred[c])).sum::<f64>() / n;
        max_rel_err = max_rel_err.max((total - within - projection).abs() / total.max(f64::MIN_POSITIVE));
    }
    Ok(PartitionDecomposition { within, max_rel_err, predictors, empty_cells })
}

fn normal_vec(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn random_simplex(rng: &mut StreamRng, k: usize, spread: f64) -> Vec<f64> {
    let mut a: Vec<f64> = normal_vec(rng, k).into_iter().map(|v| v * spread).collect();
    softmax_in_place(&mut a);
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertGateDecomposition {
    pub instances: usize,
    /// Largest absolute residual of the pointwise identity.
    pub max_identity_err: f64,
    /// Smallest `bound − realized` of the quadratic bound over instances.
    pub min_bound_slack: f64,
}

/// Pointwise expert/gate split of `ŵ − w*` and its quadratic bound, over
/// random gated instances evaluated on `contexts_per_instance` random points.
pub fn expert_gate_decomposition_check(instances: usize, contexts_per_instance: usize, seed: u64) -> ExpertGateDecomposition {
    let mut rng = stream(seed, "theory/expert_gate");
    let mut max_identity_err: f64 = 0.0;
    let mut min_bound_slack = f64::INFINITY;
    for _ in 0..instances {
        let k = rng.random_range(1..=5usize);
        let j = rng.random_range(1..=6usize);
        let beta: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(&mut rng, j)).collect();
        let beta_star: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(&mut rng, j)).collect();
        let b_max = beta_star.iter().map(|b| dot(b, b)).fold(0.0, f64::max);
        let mut lhs = 0.0;
        let mut mean_alpha = vec![0.0; k];
        let mut gate_l1_sq = 0.0;
        for _ in 0..contexts_per_instance {
            let alpha = random_simplex(&mut rng, k, 2.0);
            let alpha_star = random_simplex(&mut rng, k, 2.0);
            let w_hat = combine_weights(&alpha, &beta);
            let w_star = combine_weights(&alpha_star, &beta_star);
            for c in 0..j {
                let expert: f64 = (0..k).map(|e| alpha[e] * (beta[e][c] - beta_star[e][c])).sum();
                let gate: f64 = (0..k).map(|e| (alpha[e] - alpha_star[e]) * beta_star[e][c]).sum();
                let diff = w_hat[c] - w_star[c];
                max_identity_err = max_identity_err.max((diff - expert - gate).abs());
                lhs += diff * diff;
            }
            mean_alpha.iter_mut().zip(&alpha).for_each(|(m, a)| *m += a);
            gate_l1_sq += alpha.iter().zip(&alpha_star).map(|(a, b)| (a - b).abs()).sum::<f64>().powi(2);
        }
        let n = contexts_per_instance as f64;
        let expert_term: f64 = (0..k)
            .map(|e| mean_alpha[e] / n * beta[e].iter().zip(&beta_star[e]).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum();
        let bound = 2.0 * expert_term + 2.0 * b_max * gate_l1_sq / n;
        min_bound_slack = min_bound_slack.min(bound - lhs / n);
    }
    ExpertGateDecomposition { instances, max_identity_err, min_bound_slack }
}

// ---------------------------------------------------------------------------
// Rate separation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateSweepConfig {
    pub n_grid: Vec<usize>,
    pub seeds_per_n: usize,
    pub j: usize,
    /// Expert count of the truth; two-expert family when 2, matched family otherwise.
    pub k: usize,
    /// Hard bins `M = round(c_m · n^{1/3})`.
    pub c_m: f64,
    pub tau: f64,
    pub library_size: usize,
    pub n_eval: usize,
    pub expert_scale: f64,
    pub seed: u64,
}

impl Default for RateSweepConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![500, 1000, 2000, 4000, 8000, 16000],
            seeds_per_n: 8,
            j: 6,
            k: 2,
            c_m: 0.3,
            tau: 2.0,
            library_size: 40,
            n_eval: 5000,
            expert_scale: 1.0,
            seed: 0,
        }
    }
}

impl RateSweepConfig {
    /// Baseline parameter count of the oracle-gate regression, `(1, x)`.
    pub fn p(&self) -> usize {
        2
    }

    pub fn bins(&self, n: usize) -> usize {
        ((self.c_m * (n as f64).cbrt()).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let increasing = self.n_grid.windows(2).all(|w| w[0] < w[1]);
        if self.n_grid.len() < 4 || !increasing || self.seeds_per_n == 0 || self.j == 0 || self.k == 0 || self.c_m <= 0.0 {
            return Err(Error::InvalidConfig(format!("invalid rate sweep {self:?}")));
        }
        Ok(())
    }

    fn bench_config(&self, seed: u64, n: usize) -> BenchConfig {
        BenchConfig {
            n_total: n + self.n_eval,
            n_train: n,
            n_eval: Some(self.n_eval),
            d_sig: 1,
            d_nuis: 0,
            j: self.j,
            m: self.library_size,
            k: self.k,
            tau: self.tau,
            nuisance_scale: 0.0,
            rand_level: 0.0,
            expert_scale: self.expert_scale,
            baseline_scale: 0.0,
            seed,
            ..BenchConfig::panel_a(seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSweepResult {
    pub n_grid: Vec<usize>,
    /// `per_seed[n_index][seed]`.
    pub per_seed: Vec<Vec<f64>>,
    pub mean_mse: Vec<f64>,
    pub slope: f64,
    /// Hard sweep only: bins per n.
    pub bins: Vec<usize>,
    /// Bins merged for having fewer than `J + 2` records, or singular oracle designs.
    pub flagged: usize,
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

struct SweepInstance {
    truth: Truth,
    train: LoggedDataset,
    eval_x: Vec<ContextVector>,
    eval_w: Vec<Vec<f64>>,
}

fn sweep_instance(cfg: &RateSweepConfig, seed: u64, n: usize) -> Result<SweepInstance> {
    let bc = cfg.bench_config(seed, n);
    let (family, mode) = match cfg.k {
        2 => (Family::TwoExpert, TruthMode::Soft),
        1 => (Family::MatchedK, TruthMode::Hard),
        _ => (Family::MatchedK, TruthMode::Soft),
    };
    let library = draw_library(&bc)?;
    let truth = draw_truth(&bc, family, mode)?;
    let records = generate_records(&bc, &truth, &library, n)?;
    let eval_x = sample_contexts(&bc, "eval/context", cfg.n_eval);
    let eval_w = eval_x.iter().map(|x| truth.weight(x)).collect::<Result<Vec<_>>>()?;
    Ok(SweepInstance { truth, train: LoggedDataset { records, library }, eval_x, eval_w })
}

fn mse(pred: impl Iterator<Item = Vec<f64>>, truth: &[Vec<f64>]) -> f64 {
    let total: f64 = pred
        .zip(truth)
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    total / truth.len() as f64
}

/// Ridge on the per-bin fits; only guards against separable bins.
const BIN_RIDGE: f64 = 1e-6;

/// Equal-mass bins over the scalar signal; per-bin logistic on `(1, z)`.
/// Binning the raw signal and its Gaussian-CDF image give the same bins.
fn hard_fit_mse(inst: &SweepInstance, m: usize, j: usize) -> (f64, usize) {
    let data = FitData::new(&inst.train);
    let n = data.n;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data.context(a)[0].total_cmp(&data.context(b)[0]));
    let mut cells: Vec<Vec<usize>> = (0..m).map(|b| order[b * n / m..(b + 1) * n / m].to_vec()).collect();
    let mut merged = 0;
    let min_size = j + 2;
    while cells.len() > 1 {
        let Some(small) = cells.iter().position(|c| c.len() < min_size) else { break };
        let other = if small + 1 < cells.len() { small + 1 } else { small - 1 };
        let moved = std::mem::take(&mut cells[small]);
        cells[other].extend(moved);
        cells[other].sort_by(|&a, &b| data.context(a)[0].total_cmp(&data.context(b)[0]));
        cells.remove(small);
        merged += 1;
    }
    // upper edge of each cell: midpoint to the next cell's first signal value
    let edges: Vec<f64> = cells
        .windows(2)
        .map(|w| 0.5 * (data.context(*w[0].last().unwrap())[0] + data.context(w[1][0])[0]))
        .collect();
    let experts: Vec<Vec<f64>> = cells
        .iter()
        .map(|idx| {
            let design = nalgebra::DMatrix::from_fn(idx.len(), j + 1, |r, c| if c == 0 { 1.0 } else { data.zrow(idx[r])[c - 1] });
            let y: Vec<f64> = idx.iter().map(|&i| data.y[i]).collect();
            let pen = vec![BIN_RIDGE; j + 1];
            let fit = LogisticProblem::new(&design, &y, &pen).fit(None, 100);
            fit.coef[1..].to_vec()
        })
        .collect();
    let pred = inst.eval_x.iter().map(|x| {
        let s = x.signal()[0];
        experts[edges.partition_point(|e| *e < s)].clone()
    });
    (mse(pred, &inst.eval_w), merged)
}

fn soft_fit_mse(inst: &SweepInstance) -> (f64, usize) {
    let y = inst.train.outcomes();
    let design = oracle_design(&inst.train, &inst.truth);
    let (coef, singular) = fit_oracle_coef(&design, &y);
    let experts = rows(&coef[2..], inst.truth.n_experts());
    let pred = inst.eval_x.iter().map(|x| combine_weights(&inst.truth.gate(x), &experts));
    (mse(pred, &inst.eval_w), singular as usize)
}

fn run_sweep(cfg: &RateSweepConfig, hard: bool) -> Result<RateSweepResult> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> =
        (0..cfg.n_grid.len()).flat_map(|a| (0..cfg.seeds_per_n).map(move |s| (a, s))).collect();
    let results: Vec<(usize, usize, f64, usize)> = jobs
        .par_iter()
        .map(|&(a, s)| {
            let n = cfg.n_grid[a];
            let inst = sweep_instance(cfg, cfg.seed + s as u64, n)?;
            let (m, flag) = if hard { hard_fit_mse(&inst, cfg.bins(n), cfg.j) } else { soft_fit_mse(&inst) };
            Ok((a, s, m, flag))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_seed = vec![vec![0.0; cfg.seeds_per_n]; cfg.n_grid.len()];
    let mut flagged = 0;
    for (a, s, m, f) in results {
        per_seed[a][s] = m;
        flagged += f;
    }
    let mean_mse: Vec<f64> = per_seed.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let lx: Vec<f64> = cfg.n_grid.iter().map(|n| (*n as f64).ln()).collect();
    let ly: Vec<f64> = mean_mse.iter().map(|m| m.ln()).collect();
    Ok(RateSweepResult {
        n_grid: cfg.n_grid.clone(),
        per_seed,
        slope: ols_slope(&lx, &ly),
        bins: if hard { cfg.n_grid.iter().map(|n| cfg.bins(*n)).collect() } else { Vec::new() },
        mean_mse,
        flagged,
    })
}

/// Balanced-`M` hard estimator over the sample-size grid.
pub fn hard_rate_sweep(cfg: &RateSweepConfig) -> Result<RateSweepResult> {
    run_sweep(cfg, true)
}

/// Oracle-gate soft estimator over the same grid and instances.
pub fn soft_rate_sweep(cfg: &RateSweepConfig) -> Result<RateSweepResult> {
    run_sweep(cfg, false)
}

// ---------------------------------------------------------------------------
// Regret transfer

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferAudit {
    pub contexts: usize,
    /// Contexts with `R > 2δ·1{γ ≤ 2δ}`.
    pub violations: usize,
    /// Contexts with `γ > 2δ` whose chosen decision differs from the oracle's.
    pub margin_mismatches: usize,
    pub mean_regret: f64,
    /// `min_η 2η P(γ ≤ 2η) + 2 E[δ²] / η`.
    pub localized_bound: f64,
    pub best_eta: f64,
}

/// Log-spaced thresholds from 10⁻⁶ to 10².
pub fn default_eta_grid() -> Vec<f64> {
    (0..=160).map(|i| 10f64.powf(-6.0 + i as f64 * 0.05)).collect()
}

pub fn regret_transfer_audit(records: &[RegretRecord], eta_grid: &[f64]) -> TransferAudit {
    let n = records.len().max(1) as f64;
    let mean_regret = records.iter().map(|r| r.regret).sum::<f64>() / n;
    let delta_sq = records.iter().map(|r| r.perturb_delta.powi(2)).sum::<f64>() / n;
    let mut best = (f64::INFINITY, f64::NAN);
    for &eta in eta_grid {
        let p = records.iter().filter(|r| r.margin_gamma <= 2.0 * eta).count() as f64 / n;
        let b = 2.0 * eta * p + 2.0 * delta_sq / eta;
        if b < best.0 {
            best = (b, eta);
        }
    }
    TransferAudit {
        contexts: records.len(),
        violations: records.iter().filter(|r| !r.satisfies_transfer_bound()).count(),
        margin_mismatches: records
            .iter()
            .filter(|r| r.margin_gamma > 2.0 * r.perturb_delta && r.chosen_index != r.oracle_index)
            .count(),
        mean_regret,
        localized_bound: best.0,
        best_eta: best.1,
    }
}

/// Random `(w*, ŵ, library)` triples, including exact score ties.
pub fn random_transfer_records(triples: usize, seed: u64) -> Result<Vec<RegretRecord>> {
    let mut rng = stream(seed, "theory/transfer");
    let mut out = Vec::with_capacity(triples);
    for t in 0..triples {
        let j = rng.random_range(1..=6usize);
        let m = rng.random_range(1..=12usize);
        let mut factors: Vec<Vec<f64>> = (0..m).map(|_| (0..j).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        if t % 10 == 0 && m > 1 {
            factors[m - 1] = factors[0].clone();
        }
        let lib = DecisionLibrary::new(factors)?;
        let w_star = normal_vec(&mut rng, j);
        let scale = 10f64.powf(rng.random_range(-3.0..0.5));
        let w_hat: Vec<f64> = w_star.iter().map(|w| w + scale * normal_vec(&mut rng, 1)[0]).collect();
        out.push(regret(&w_star, &w_hat, &lib)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Full suite

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheorySuiteConfig {
    pub floor_m: Vec<usize>,
    pub floor_tau: f64,
    pub delta_beta_sq: f64,
    pub mc_samples: usize,
    pub eps_grid: Vec<f64>,
    pub decomposition_instances: usize,
    pub transfer_triples: usize,
    pub run_rate_sweeps: bool,
    pub rate: RateSweepConfig,
    /// Multiplier on κ in the floor check; above 1 it overstates the slope.
    pub kappa_scale: f64,
    pub seed: u64,
}

impl Default for TheorySuiteConfig {
    fn default() -> Self {
        Self {
            floor_m: vec![1, 2, 4, 8, 16],
            floor_tau: 1.2,
            delta_beta_sq: 4.0,
            mc_samples: 200_000,
            eps_grid: vec![0.05, 0.1, 0.2, 0.3, 0.4],
            decomposition_instances: 1000,
            transfer_triples: 10_000,
            run_rate_sweeps: true,
            rate: RateSweepConfig::default(),
            kappa_scale: 1.0,
            seed: 0,
        }
    }
}

pub const MC_REL_TOL: f64 = 0.02;
pub const HARD_SLOPE_BAND: (f64, f64) = (-0.80, -0.55);
pub const SOFT_SLOPE_BAND: (f64, f64) = (-1.20, -0.85);

fn two_expert_for_mc(cfg: &TheorySuiteConfig) -> Result<(TwoExpertTruth, Vec<ContextVector>)> {
    let bc = BenchConfig { n_total: cfg.mc_samples + 1000, n_train: 1000, n_eval: Some(cfg.mc_samples), ..BenchConfig::panel_a(cfg.seed) };
    let Truth::TwoExpert(t) = draw_truth(&bc, Family::TwoExpert, TruthMode::Soft)? else {
        unreachable!("two-expert family requested")
    };
    Ok((t, sample_contexts(&bc, "theory/mc", cfg.mc_samples)))
}

/// Every check, in a fixed order.
pub fn run_theory_suite(cfg: &TheorySuiteConfig) -> Result<Vec<TheoryCheck>> {
    let mut out = Vec::new();
    for (label, shape) in [("linear", FloorShape::Linear), ("sigmoid", FloorShape::Sigmoid { tau: cfg.floor_tau })] {
        for row in verify_floor(shape, cfg.delta_beta_sq, &cfg.floor_m, cfg.kappa_scale)? {
            out.push(
                TheoryCheck::new(format!("floor_lower/{label}/M={}", row.m), row.lower, row.step_fit, row.step_fit >= row.lower * (1.0 - FLOOR_GRID_SLACK))
                    .with_note(format!("ratio={:.4}", row.step_fit / row.lower)),
            );
            out.push(TheoryCheck::new(format!("floor_upper/{label}/M={}", row.m), row.upper, row.step_fit, row.step_fit <= row.upper));
        }
    }
    let (truth, contexts) = two_expert_for_mc(cfg)?;
    let pooled = pooled_oracle_error(&truth, &contexts)?;
    out.push(
        TheoryCheck::new("pooled_oracle_error", pooled.analytic, pooled.empirical, pooled.rel_gap <= MC_REL_TOL)
            .with_note(format!("rel_gap={:.5}", pooled.rel_gap)),
    );
    let hard = aligned_hard_upper(&truth, &contexts, &cfg.eps_grid)?;
    out.push(
        TheoryCheck::new("aligned_hard_formula", hard.analytic, hard.monte_carlo, hard.rel_gap <= MC_REL_TOL)
            .with_note(format!("rel_gap={:.5}", hard.rel_gap)),
    );
    let tightest = hard.eps_bounds.iter().map(|(_, b)| *b).fold(hard.monte_carlo, f64::min);
    out.push(TheoryCheck::new("aligned_hard_upper", tightest, hard.threshold_error, hard.pass));

    let mut rng = stream(cfg.seed, "theory/partition_data");
    let labels: Vec<usize> = (0..2000).map(|_| rng.random_range(0..7usize)).collect();
    let w: Vec<Vec<f64>> = (0..2000).map(|_| normal_vec(&mut rng, 6)).collect();
    let part = hard_partition_decomposition_check(&w, &labels, 7, 10, cfg.seed)?;
    out.push(TheoryCheck::new("hard_partition_decomposition", 1e-8, part.max_rel_err, part.max_rel_err <= 1e-8));
    let eg = expert_gate_decomposition_check(cfg.decomposition_instances, 50, cfg.seed);
    out.push(TheoryCheck::new("expert_gate_identity", 1e-10, eg.max_identity_err, eg.max_identity_err <= 1e-10));
    out.push(TheoryCheck::new("expert_gate_bound_slack", 0.0, eg.min_bound_slack, eg.min_bound_slack >= -1e-12));

    let records = random_transfer_records(cfg.transfer_triples, cfg.seed)?;
    let audit = regret_transfer_audit(&records, &default_eta_grid());
    out.push(TheoryCheck::new("regret_transfer_violations", 0.0, audit.violations as f64, audit.violations == 0));
    out.push(TheoryCheck::new("regret_margin_mismatches", 0.0, audit.margin_mismatches as f64, audit.margin_mismatches == 0));
    out.push(TheoryCheck::new(
        "regret_localized_bound",
        audit.localized_bound,
        audit.mean_regret,
        audit.mean_regret <= audit.localized_bound,
    ));

    if cfg.run_rate_sweeps {
        let h = hard_rate_sweep(&cfg.rate)?;
        let s = soft_rate_sweep(&cfg.rate)?;
        let in_band = |v: f64, b: (f64, f64)| v >= b.0 && v <= b.1;
        out.push(
            TheoryCheck::new("hard_rate_slope", HARD_SLOPE_BAND.1, h.slope, in_band(h.slope, HARD_SLOPE_BAND))
                .with_note(format!("band=[{}, {}] merged_bins={}", HARD_SLOPE_BAND.0, HARD_SLOPE_BAND.1, h.flagged)),
        );
        out.push(
            TheoryCheck::new("soft_rate_slope", SOFT_SLOPE_BAND.1, s.slope, in_band(s.slope, SOFT_SLOPE_BAND))
                .with_note(format!("band=[{}, {}] singular={}", SOFT_SLOPE_BAND.0, SOFT_SLOPE_BAND.1, s.flagged)),
        );
        let (hl, sl) = (*h.mean_mse.last().unwrap(), *s.mean_mse.last().unwrap());
        out.push(TheoryCheck::new("soft_beats_hard_at_max_n", hl, sl, sl < hl));
    }
    Ok(out)
}
