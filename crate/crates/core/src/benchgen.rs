//! Seeded benchmark generators.
//!
//! Two families are provided. The two-expert overlap family blends two
//! expert vectors through a logistic gate on the signal coordinates,
//! `w*(x) = λ(x)β₁ + (1 − λ(x))β₂` with `λ(x) = σ(τ uᵀx_sig)`. The matched
//! K-expert family keeps an expert bank and a linear gate-score family fixed
//! and switches only the composition rule: argmax routing (hard) or a
//! temperature-calibrated softmax (soft).
//!
//! Logged decisions are uniform over the library and outcomes are Bernoulli
//! with `P(y = 1) = σ(b*(x) + w*(x)ᵀz_d)`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::decision::DecisionLibrary;
use crate::error::{check_dim, Error, Result};
use crate::rng::{stream, StreamRng};
use crate::{dot, sigmoid, softmax_in_place};

/// A context `x = (x_sig, x_nuis)`, stored contiguously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    values: Vec<f64>,
    d_sig: usize,
}

impl ContextVector {
    pub fn new(signal: Vec<f64>, nuisance: Vec<f64>) -> Result<Self> {
        if signal.is_empty() {
            return Err(Error::InvalidConfig("context needs at least one signal coordinate".into()));
        }
        let d_sig = signal.len();
        let mut values = signal;
        values.extend(nuisance);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite context value".into()));
        }
        Ok(Self { values, d_sig })
    }

    pub fn signal(&self) -> &[f64] {
        &self.values[..self.d_sig]
    }

    pub fn nuisance(&self) -> &[f64] {
        &self.values[self.d_sig..]
    }

    /// Concatenation of signal and nuisance, length `D_x`.
    pub fn full(&self) -> &[f64] {
        &self.values
    }

    pub fn d_sig(&self) -> usize {
        self.d_sig
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// `(1, x_full)ᵀ coef`.
pub(crate) fn affine(coef: &[f64], x: &[f64]) -> f64 {
    coef[0] + dot(&coef[1..], x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    TwoExpert,
    MatchedK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoExpertTruth {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub tau: f64,
    /// Unit direction in signal space.
    pub u: Vec<f64>,
    /// Affine baseline over `(1, x_full)`.
    pub baseline_coef: Vec<f64>,
}

impl TwoExpertTruth {
    pub fn lambda(&self, x: &ContextVector) -> f64 {
        sigmoid(self.tau * dot(&self.u, x.signal()))
    }

    pub fn weight(&self, x: &ContextVector) -> Result<Vec<f64>> {
        check_dim(self.u.len(), x.d_sig())?;
        Ok(blend2(&self.beta1, &self.beta2, self.lambda(x)))
    }

    pub fn delta_beta_sq(&self) -> f64 {
        self.beta1.iter().zip(&self.beta2).map(|(a, b)| (a - b).powi(2)).sum()
    }
}

fn blend2(b1: &[f64], b2: &[f64], lambda: f64) -> Vec<f64> {
    b1.iter().zip(b2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedKTruth {
    pub experts: Vec<Vec<f64>>,
    pub mode: TruthMode,
    /// Gate directions after the frozen perturbation has been applied.
    pub gate_directions: Vec<Vec<f64>>,
    pub temperature: f64,
    pub rand_level: f64,
    pub baseline_coef: Vec<f64>,
}

impl MatchedKTruth {
    pub fn gate_scores(&self, x: &ContextVector) -> Vec<f64> {
        self.gate_directions.iter().map(|g| dot(g, x.signal())).collect()
    }

    /// Softmax gate at the stored temperature, ignoring `mode`.
    pub fn soft_gate(&self, x: &ContextVector) -> Vec<f64> {
        soft_gate_at(&self.gate_scores(x), self.temperature)
    }

    /// The true mixture weights: one-hot in hard mode.
    pub fn gate(&self, x: &ContextVector) -> Vec<f64> {
        match self.mode {
            TruthMode::Soft => self.soft_gate(x),
            TruthMode::Hard => {
                let scores = self.gate_scores(x);
                let mut best = 0;
                for k in 1..scores.len() {
                    if scores[k] > scores[best] {
                        best = k;
                    }
                }
                let mut out = vec![0.0; scores.len()];
                out[best] = 1.0;
                out
            }
        }
    }

    pub fn weight(&self, x: &ContextVector) -> Result<Vec<f64>> {
        check_dim(self.gate_directions[0].len(), x.d_sig())?;
        Ok(combine(&self.gate(x), &self.experts))
    }
}

fn soft_gate_at(scores: &[f64], temperature: f64) -> Vec<f64> {
    let mut a: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    softmax_in_place(&mut a);
    a
}

/// `Σ_k α_k β_k`.
pub fn combine(alpha: &[f64], experts: &[Vec<f64>]) -> Vec<f64> {
    let mut w = vec![0.0; experts[0].len()];
    for (a, beta) in alpha.iter().zip(experts) {
        if *a != 0.0 {
            for (wj, bj) in w.iter_mut().zip(beta) {
                *wj += a * bj;
            }
        }
    }
    w
}

/// Latent generator of either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Truth {
    TwoExpert(TwoExpertTruth),
    MatchedK(MatchedKTruth),
}

impl Truth {
    pub fn weight(&self, x: &ContextVector) -> Result<Vec<f64>> {
        match self {
            Truth::TwoExpert(t) => t.weight(x),
            Truth::MatchedK(t) => t.weight(x),
        }
    }

    /// True mixture weights `α*(x)`; `(λ, 1 − λ)` for the two-expert family.
    pub fn gate(&self, x: &ContextVector) -> Vec<f64> {
        match self {
            Truth::TwoExpert(t) => {
                let l = t.lambda(x);
                vec![l, 1.0 - l]
            }
            Truth::MatchedK(t) => t.gate(x),
        }
    }

    pub fn experts(&self) -> Vec<Vec<f64>> {
        match self {
            Truth::TwoExpert(t) => vec![t.beta1.clone(), t.beta2.clone()],
            Truth::MatchedK(t) => t.experts.clone(),
        }
    }

    pub fn baseline_coef(&self) -> &[f64] {
        match self {
            Truth::TwoExpert(t) => &t.baseline_coef,
            Truth::MatchedK(t) => &t.baseline_coef,
        }
    }

    /// `b*(x) = baseline_coefᵀ(1, x_full)`.
    pub fn baseline(&self, x: &ContextVector) -> f64 {
        affine(self.baseline_coef(), x.full())
    }

    pub fn n_experts(&self) -> usize {
        match self {
            Truth::TwoExpert(_) => 2,
            Truth::MatchedK(t) => t.experts.len(),
        }
    }
}

fn default_expert_scale() -> f64 {
    1.0
}
fn default_baseline_scale() -> f64 {
    0.3
}
fn default_target_top_prob() -> f64 {
    0.75
}

/// Benchmark parameters; fields missing from a config file take the
/// two-expert anchor values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub n_total: usize,
    pub n_train: usize,
    /// Evaluation-set size; `n_total − n_train` when absent.
    #[serde(default)]
    pub n_eval: Option<usize>,
    pub d_sig: usize,
    pub d_nuis: usize,
    /// Factor dimension.
    pub j: usize,
    /// Library size.
    pub m: usize,
    /// Expert count of the matched family.
    pub k: usize,
    pub tau: f64,
    #[serde(default = "default_target_top_prob")]
    pub target_top_prob: f64,
    pub nuisance_scale: f64,
    pub rand_level: f64,
    /// Standard deviation of expert coordinates.
    #[serde(default = "default_expert_scale")]
    pub expert_scale: f64,
    /// Standard deviation of baseline coefficients.
    #[serde(default = "default_baseline_scale")]
    pub baseline_scale: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self::panel_a(0)
    }
}

impl BenchConfig {
    /// Two-expert overlap anchor: τ = 1.2, nuisance scale 0.5.
    pub fn panel_a(seed: u64) -> Self {
        Self {
            n_total: 4000,
            n_train: 2000,
            n_eval: None,
            d_sig: 4,
            d_nuis: 8,
            j: 6,
            m: 40,
            k: 2,
            tau: 1.2,
            target_top_prob: default_target_top_prob(),
            nuisance_scale: 0.5,
            rand_level: 0.0,
            expert_scale: default_expert_scale(),
            baseline_scale: default_baseline_scale(),
            seed,
        }
    }

    /// Matched K = 5 anchor at randomness level 1.2.
    pub fn panel_b(seed: u64) -> Self {
        Self {
            k: 5,
            rand_level: 1.2,
            tau: 0.0,
            ..Self::panel_a(seed)
        }
    }

    /// `max(100, ⌊0.2·n_train⌋)`.
    pub fn n_val(&self) -> usize {
        100usize.max(self.n_train / 5)
    }

    pub fn n_eval(&self) -> usize {
        self.n_eval.unwrap_or(self.n_total.saturating_sub(self.n_train))
    }

    pub fn d_x(&self) -> usize {
        self.d_sig + self.d_nuis
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_train > self.n_total {
            return bad("n_train exceeds n_total");
        }
        if self.n_val() >= self.n_train {
            return bad("validation split leaves no training records");
        }
        if self.n_eval() == 0 {
            return bad("empty evaluation set");
        }
        if self.d_sig == 0 || self.j == 0 || self.k == 0 {
            return bad("d_sig, j and k must be positive");
        }
        if self.m < 2 {
            return bad("library needs at least two decisions");
        }
        let reals = [
            self.tau,
            self.nuisance_scale,
            self.rand_level,
            self.expert_scale,
            self.baseline_scale,
        ];
        if reals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("tau, scales and rand_level must be finite and nonnegative");
        }
        Ok(())
    }
}

fn normal_vec(rng: &mut StreamRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Draw one context: standard Gaussian signal, nuisance scaled by `nuisance_scale`.
pub fn sample_context(config: &BenchConfig, rng: &mut StreamRng) -> ContextVector {
    let signal = normal_vec(rng, config.d_sig, 1.0);
    let nuisance = normal_vec(rng, config.d_nuis, config.nuisance_scale);
    ContextVector::new(signal, nuisance).expect("finite draws")
}

pub fn sample_contexts(config: &BenchConfig, tag: &str, n: usize) -> Vec<ContextVector> {
    let mut rng = stream(config.seed, tag);
    (0..n).map(|_| sample_context(config, &mut rng)).collect()
}

/// Bernoulli draw with `P(y = 1) = σ(b*(x) + w*(x)ᵀz)`.
pub fn simulate_outcome(truth: &Truth, x: &ContextVector, z: &[f64], rng: &mut StreamRng) -> Result<u8> {
    let w = truth.weight(x)?;
    check_dim(w.len(), z.len())?;
    let p = sigmoid(truth.baseline(x) + dot(&w, z));
    Ok(u8::from(rng.random::<f64>() < p))
}

pub fn true_weight_two_expert(truth: &TwoExpertTruth, x: &ContextVector) -> Result<Vec<f64>> {
    truth.weight(x)
}

pub fn true_weight_matched_k(truth: &MatchedKTruth, x: &ContextVector) -> Result<Vec<f64>> {
    truth.weight(x)
}

/// Mean over `contexts` of the largest soft-gate probability at `temperature`.
pub fn mean_top_prob(truth: &MatchedKTruth, contexts: &[ContextVector], temperature: f64) -> f64 {
    let total: f64 = contexts
        .iter()
        .map(|x| {
            soft_gate_at(&truth.gate_scores(x), temperature)
                .into_iter()
                .fold(0.0, f64::max)
        })
        .sum();
    total / contexts.len() as f64
}

const TEMPERATURE_BRACKET: (f64, f64) = (1e-3, 1e3);

/// Bisection (in log-temperature) for the temperature at which the mean top
/// gate probability over `contexts` equals `target_top_prob`.
pub fn calibrate_temperature(
    truth: &MatchedKTruth,
    contexts: &[ContextVector],
    target_top_prob: f64,
) -> Result<f64> {
    if truth.mode != TruthMode::Soft {
        return Err(Error::Calibration("calibration applies to soft truth only".into()));
    }
    if contexts.len() < 1000 {
        return Err(Error::Calibration(format!(
            "need at least 1000 calibration contexts, got {}",
            contexts.len()
        )));
    }
    let k = truth.experts.len() as f64;
    if !(target_top_prob > 1.0 / k && target_top_prob < 1.0) {
        return Err(Error::Calibration(format!(
            "target {target_top_prob} outside (1/K, 1) for K = {k}"
        )));
    }
    let (lo_t, hi_t) = TEMPERATURE_BRACKET;
    let sharp = mean_top_prob(truth, contexts, lo_t);
    let flat = mean_top_prob(truth, contexts, hi_t);
    if target_top_prob > sharp || target_top_prob < flat {
        return Err(Error::Calibration(format!(
            "target {target_top_prob} unreachable: mean top probability spans [{flat:.6}, {sharp:.6}] over t ∈ [{lo_t}, {hi_t}]"
        )));
    }
    // top probability is nonincreasing in temperature
    let (mut lo, mut hi) = (lo_t.ln(), hi_t.ln());
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_top_prob(truth, contexts, mid.exp()) > target_top_prob {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Number of calibration contexts drawn per benchmark instance.
pub const CALIBRATION_SAMPLE: usize = 5000;

fn draw_two_expert(config: &BenchConfig) -> TwoExpertTruth {
    let mut rng = stream(config.seed, "truth/experts");
    let beta1 = normal_vec(&mut rng, config.j, config.expert_scale);
    let beta2 = normal_vec(&mut rng, config.j, config.expert_scale);
    let mut rng = stream(config.seed, "truth/gate");
    let mut u = normal_vec(&mut rng, config.d_sig, 1.0);
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter_mut().for_each(|v| *v /= norm);
    let mut rng = stream(config.seed, "truth/baseline");
    let baseline_coef = normal_vec(&mut rng, config.d_x() + 1, config.baseline_scale);
    TwoExpertTruth { beta1, beta2, tau: config.tau, u, baseline_coef }
}

/// Matched-K truth for `mode`; hard and soft instances of one seed share
/// experts, gate directions and baseline.
pub fn draw_matched_k(config: &BenchConfig, mode: TruthMode) -> Result<MatchedKTruth> {
    let mut rng = stream(config.seed, "truth/experts");
    let experts: Vec<Vec<f64>> = (0..config.k)
        .map(|_| normal_vec(&mut rng, config.j, config.expert_scale))
        .collect();
    let mut rng = stream(config.seed, "truth/gate");
    let mut gate_directions: Vec<Vec<f64>> = (0..config.k)
        .map(|_| {
            let mut g = normal_vec(&mut rng, config.d_sig, 1.0);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            g.iter_mut().for_each(|v| *v /= norm);
            g
        })
        .collect();
    let mut rng = stream(config.seed, "truth/perturb");
    for g in gate_directions.iter_mut() {
        for (gj, e) in g.iter_mut().zip(normal_vec(&mut rng, config.d_sig, config.rand_level)) {
            *gj += e;
        }
    }
    let mut rng = stream(config.seed, "truth/baseline");
    let baseline_coef = normal_vec(&mut rng, config.d_x() + 1, config.baseline_scale);
    let mut truth = MatchedKTruth {
        experts,
        mode: TruthMode::Soft,
        gate_directions,
        temperature: 1.0,
        rand_level: config.rand_level,
        baseline_coef,
    };
    if config.k > 1 {
        let contexts = sample_contexts(config, "truth/calibration", CALIBRATION_SAMPLE);
        truth.temperature = calibrate_temperature(&truth, &contexts, config.target_top_prob)?;
    }
    truth.mode = mode;
    Ok(truth)
}

pub fn draw_library(config: &BenchConfig) -> Result<DecisionLibrary> {
    let mut rng = stream(config.seed, "library");
    let factors = (0..config.m)
        .map(|_| (0..config.j).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    DecisionLibrary::new(factors)
}

pub fn draw_truth(config: &BenchConfig, family: Family, mode: TruthMode) -> Result<Truth> {
    Ok(match family {
        Family::TwoExpert => Truth::TwoExpert(draw_two_expert(config)),
        Family::MatchedK => Truth::MatchedK(draw_matched_k(config, mode)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedRecord {
    pub context: ContextVector,
    pub decision_index: usize,
    pub outcome: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedDataset {
    pub records: Vec<LoggedRecord>,
    pub library: DecisionLibrary,
}

impl LoggedDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn d_x(&self) -> usize {
        self.records.first().map_or(0, |r| r.context.dim())
    }

    pub fn j(&self) -> usize {
        self.library.dim()
    }

    pub fn factor(&self, i: usize) -> &[f64] {
        self.library.factor(self.records[i].decision_index)
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.records.iter().map(|r| f64::from(r.outcome)).collect()
    }

    /// Count of records per library index.
    pub fn exposure(&self) -> Vec<usize> {
        let mut counts = vec![0; self.library.len()];
        for r in &self.records {
            counts[r.decision_index] += 1;
        }
        counts
    }
}

/// A held-out context with its true weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub context: ContextVector,
    pub weight: Vec<f64>,
}

/// Logged records `0..n` of the training stream.
///
/// Decisions are drawn in consecutive blocks of `M`, each block a uniform
/// random permutation of the library. Every index is exposed once per block
/// and any prefix of the stream is shared by longer runs.
pub fn generate_records(
    config: &BenchConfig,
    truth: &Truth,
    library: &DecisionLibrary,
    n: usize,
) -> Result<Vec<LoggedRecord>> {
    let mut ctx_rng = stream(config.seed, "train/context");
    let mut dec_rng = stream(config.seed, "train/decision");
    let mut out_rng = stream(config.seed, "train/outcome");
    let m = library.len();
    let mut block: Vec<usize> = Vec::with_capacity(m);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        if i % m == 0 {
            block = (0..m).collect();
            block.shuffle(&mut dec_rng);
        }
        let context = sample_context(config, &mut ctx_rng);
        let decision_index = block[i % m];
        let outcome = simulate_outcome(truth, &context, library.factor(decision_index), &mut out_rng)?;
        records.push(LoggedRecord { context, decision_index, outcome });
    }
    Ok(records)
}

/// One seeded benchmark instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub format: String,
    pub config: BenchConfig,
    pub family: Family,
    pub mode: TruthMode,
    pub truth: Truth,
    pub library: DecisionLibrary,
    pub train: LoggedDataset,
    pub val: LoggedDataset,
    pub eval: Vec<EvalPoint>,
}

pub const BENCHMARK_FORMAT: &str = "softseg-benchmark/1";

/// Generate the full instance for `config.seed`.
///
/// The first `n_train − n_val` logged records form the fitting set and the
/// next `n_val` the validation set. Evaluation contexts come from their own
/// stream, so the evaluation set is unchanged when only `n_train` varies.
pub fn generate_benchmark(config: &BenchConfig, family: Family, mode: TruthMode) -> Result<Benchmark> {
    config.validate()?;
    let library = draw_library(config)?;
    let truth = draw_truth(config, family, mode)?;
    let mut records = generate_records(config, &truth, &library, config.n_train)?;
    let val_records = records.split_off(config.n_train - config.n_val());
    let eval = sample_contexts(config, "eval/context", config.n_eval())
        .into_iter()
        .map(|context| {
            let weight = truth.weight(&context)?;
            Ok(EvalPoint { context, weight })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Benchmark {
        format: BENCHMARK_FORMAT.to_string(),
        config: config.clone(),
        family,
        mode,
        truth,
        train: LoggedDataset { records, library: library.clone() },
        val: LoggedDataset { records: val_records, library: library.clone() },
        library,
        eval,
    })
}

impl Benchmark {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let b: Self = crate::io::load(path)?;
        if b.format != BENCHMARK_FORMAT {
            return Err(Error::Parse(format!("unknown benchmark format {:?}", b.format)));
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(signal: &[f64]) -> ContextVector {
        ContextVector::new(signal.to_vec(), vec![]).unwrap()
    }

    fn two_expert(tau: f64) -> TwoExpertTruth {
        TwoExpertTruth {
            beta1: vec![1.0, 0.0],
            beta2: vec![0.0, 1.0],
            tau,
            u: vec![1.0],
            baseline_coef: vec![0.0, 0.0],
        }
    }

    #[test]
    fn two_expert_weight_examples() {
        let w = two_expert(0.0).weight(&ctx(&[3.7])).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);

        let w = two_expert(200.0).weight(&ctx(&[1.0])).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12 && w[1].abs() < 1e-12);

        // σ(1.2) = 1 / (1 + e^{-1.2})
        let lam = 1.0 / (1.0 + (-1.2f64).exp());
        assert!((lam - 0.768_524_783_499_017_6).abs() < 1e-15);
        let w = two_expert(1.2).weight(&ctx(&[1.0])).unwrap();
        assert!((w[0] - lam).abs() < 1e-15);
        assert!((w[1] - (1.0 - lam)).abs() < 1e-15);
        assert!(two_expert(1.0).weight(&ctx(&[1.0, 2.0])).is_err());
    }

    fn matched(k: usize, mode: TruthMode, temperature: f64) -> MatchedKTruth {
        MatchedKTruth {
            experts: (0..k).map(|i| vec![i as f64, 1.0 - i as f64]).collect(),
            mode,
            gate_directions: (0..k).map(|i| vec![(i as f64 * 0.7).cos(), (i as f64 * 0.7).sin()]).collect(),
            temperature,
            rand_level: 0.0,
            baseline_coef: vec![0.0; 3],
        }
    }

    #[test]
    fn matched_k_examples() {
        let single = matched(1, TruthMode::Soft, 1.0);
        assert_eq!(single.weight(&ctx(&[0.3, -2.0])).unwrap(), vec![0.0, 1.0]);

        let x = ctx(&[0.4, 1.3]);
        let hard = matched(4, TruthMode::Hard, 1.0).weight(&x).unwrap();
        let cold = matched(4, TruthMode::Soft, 1e-4).weight(&x).unwrap();
        for (a, b) in hard.iter().zip(&cold) {
            assert!((a - b).abs() < 1e-9);
        }

        let mut tie = matched(2, TruthMode::Soft, 0.8);
        tie.gate_directions = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(tie.weight(&x).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn hard_truth_equals_an_expert_exactly() {
        let cfg = BenchConfig { k: 4, rand_level: 0.4, ..BenchConfig::panel_b(3) };
        let truth = draw_matched_k(&cfg, TruthMode::Hard).unwrap();
        for x in sample_contexts(&cfg, "test", 200) {
            let w = truth.weight(&x).unwrap();
            assert!(truth.experts.iter().any(|e| e == &w));
        }
    }

    #[test]
    fn calibration_hits_target_and_is_monotone() {
        let cfg = BenchConfig { k: 2, ..BenchConfig::panel_b(1) };
        let truth = draw_matched_k(&cfg, TruthMode::Soft).unwrap();
        let calib = sample_contexts(&cfg, "calib", 2000);
        let t = calibrate_temperature(&truth, &calib, 0.8).unwrap();
        let fresh = sample_contexts(&cfg, "fresh", 20000);
        let top = mean_top_prob(&truth, &fresh, t);
        assert!((0.79..=0.81).contains(&top), "top {top}");

        let mut last = f64::INFINITY;
        for target in [0.55, 0.65, 0.75, 0.85, 0.95] {
            let t = calibrate_temperature(&truth, &calib, target).unwrap();
            assert!(t <= last);
            last = t;
        }
        let near_uniform = calibrate_temperature(&truth, &calib, 0.505).unwrap();
        let near_one_hot = calibrate_temperature(&truth, &calib, 0.99).unwrap();
        assert!(near_uniform > 10.0 && near_one_hot < 0.1);
        assert!(calibrate_temperature(&truth, &calib[..10], 0.8).is_err());
        assert!(calibrate_temperature(&truth, &calib, 0.4).is_err());
    }

    #[test]
    fn outcome_probability_examples() {
        let zero = Truth::TwoExpert(TwoExpertTruth {
            beta1: vec![0.0],
            beta2: vec![0.0],
            tau: 1.0,
            u: vec![1.0],
            baseline_coef: vec![0.0, 0.0],
        });
        let mut rng = stream(11, "coin");
        let n = 100_000;
        let heads: u32 = (0..n)
            .map(|_| simulate_outcome(&zero, &ctx(&[0.7]), &[1.0], &mut rng).unwrap() as u32)
            .sum();
        let mean = heads as f64 / n as f64;
        assert!((0.49..=0.51).contains(&mean), "mean {mean}");

        let dead = Truth::TwoExpert(TwoExpertTruth {
            baseline_coef: vec![-1e6, 0.0],
            ..match zero {
                Truth::TwoExpert(t) => t,
                _ => unreachable!(),
            }
        });
        let any = (0..1000).any(|_| simulate_outcome(&dead, &ctx(&[0.7]), &[1.0], &mut rng).unwrap() == 1);
        assert!(!any);
    }

    #[test]
    fn contexts_are_deterministic_with_gaussian_signal() {
        let cfg = BenchConfig { nuisance_scale: 0.0, ..BenchConfig::panel_a(5) };
        let a = sample_contexts(&cfg, "c", 50);
        assert_eq!(a, sample_contexts(&cfg, "c", 50));
        assert!(a.iter().all(|x| x.nuisance().iter().all(|v| *v == 0.0)));

        let many = sample_contexts(&BenchConfig::panel_a(6), "c", 100_000);
        for j in 0..4 {
            let mean = many.iter().map(|x| x.signal()[j]).sum::<f64>() / 1e5;
            let var = many.iter().map(|x| (x.signal()[j] - mean).powi(2)).sum::<f64>() / 1e5;
            assert!((var - 1.0).abs() < 0.03, "var {var}");
        }
    }

    #[test]
    fn benchmarks_are_deterministic_and_prefix_stable() {
        let cfg = BenchConfig { n_total: 1500, n_train: 500, n_eval: Some(300), ..BenchConfig::panel_a(2) };
        let a = generate_benchmark(&cfg, Family::TwoExpert, TruthMode::Soft).unwrap();
        let b = generate_benchmark(&cfg, Family::TwoExpert, TruthMode::Soft).unwrap();
        assert_eq!(a, b);

        let lib = draw_library(&cfg).unwrap();
        let short = generate_records(&cfg, &a.truth, &lib, 500).unwrap();
        let long = generate_records(&cfg, &a.truth, &lib, 1000).unwrap();
        assert_eq!(short[..], long[..500]);

        let big = BenchConfig { n_train: 1000, ..cfg.clone() };
        let c = generate_benchmark(&big, Family::TwoExpert, TruthMode::Soft).unwrap();
        assert_eq!(a.eval, c.eval);
    }

    #[test]
    fn every_decision_is_exposed() {
        let cfg = BenchConfig { n_total: 400, n_train: 200, ..BenchConfig::panel_a(9) };
        let lib = draw_library(&cfg).unwrap();
        let truth = draw_truth(&cfg, Family::TwoExpert, TruthMode::Soft).unwrap();
        let records = generate_records(&cfg, &truth, &lib, 200).unwrap();
        let ds = LoggedDataset { records, library: lib };
        assert!(ds.exposure().iter().all(|&c| c == 5));
    }

    #[test]
    fn panel_a_gate_has_spread_and_centre() {
        let cfg = BenchConfig::panel_a(0);
        let truth = draw_two_expert(&cfg);
        let xs = sample_contexts(&cfg, "mc", 100_000);
        let lams: Vec<f64> = xs.iter().map(|x| truth.lambda(x)).collect();
        let mean = lams.iter().sum::<f64>() / lams.len() as f64;
        let var = lams.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / lams.len() as f64;
        assert!((mean - 0.5).abs() < 0.05);
        assert!(var > 0.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = BenchConfig::panel_a(0);
        cfg.n_train = 5000;
        assert!(cfg.validate().is_err());
        let cfg = BenchConfig { n_train: 100, ..BenchConfig::panel_a(0) };
        assert!(cfg.validate().is_err());
        assert_eq!(BenchConfig::panel_a(0).n_val(), 400);
        assert_eq!(BenchConfig { n_train: 300, ..BenchConfig::panel_a(0) }.n_val(), 100);
    }

    #[test]
    fn benchmark_file_round_trip() {
        let cfg = BenchConfig { n_total: 700, n_train: 300, ..BenchConfig::panel_b(4) };
        let b = generate_benchmark(&cfg, Family::MatchedK, TruthMode::Soft).unwrap();
        let text = crate::io::to_text(&b).unwrap();
        let back: Benchmark = crate::io::from_text(&text).unwrap();
        assert_eq!(b, back);
    }
}
