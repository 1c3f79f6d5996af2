//! EM for a finite mixture of logistic regressions on `(1, x, z)`, deployed
//! through a post-hoc multinomial gate fitted to the responsibilities.

use log::debug;
use rand_distr::{Distribution, Normal};

use crate::benchgen::LoggedDataset;
use crate::error::{Error, Result};
use crate::logistic::{fit_softmax, LogisticProblem};
use crate::rng::{child_seed, stream};
use crate::{softmax_in_place, softplus};

use super::pooled::{fit_pooled_coef, pooled_logit};
use super::{penalty, rows, FitConfig, FitData, GateFeatures, ModelParams, WeightModel, NEWTON_ITERS};

const IRLS_ITERS: usize = 25;
const MAX_ROUNDS: usize = 200;
const REL_TOL: f64 = 1e-6;
const COLLAPSE: f64 = 1e-3;
const MONOTONE_SLACK: f64 = 1e-8;
const INIT_JITTER: f64 = 0.5;

/// Outcome of one EM run at fixed `(K, ridge)`.
#[derive(Debug, Clone)]
pub struct EmRun {
    /// Component coefficients over `(1, x, z)`.
    pub components: Vec<Vec<f64>>,
    pub mixing: Vec<f64>,
    /// Final responsibilities, one simplex row per record.
    pub responsibilities: Vec<Vec<f64>>,
    /// Penalised mean log-likelihood after each round.
    pub trace: Vec<f64>,
    pub dropped: usize,
    pub converged: bool,
}

fn log_bernoulli(eta: f64, y: f64) -> f64 {
    y * eta - softplus(eta)
}

/// Per-record component log-likelihoods plus log mixing weight.
fn joint_logs(data: &FitData, comps: &[Vec<f64>], mixing: &[f64]) -> Vec<Vec<f64>> {
    (0..data.n)
        .map(|i| {
            comps
                .iter()
                .zip(mixing)
                .map(|(c, pi)| pi.ln() + log_bernoulli(pooled_logit(data, i, c), data.y[i]))
                .collect()
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn objective(data: &FitData, comps: &[Vec<f64>], mixing: &[f64], pen: &[f64]) -> f64 {
    let ll: f64 = joint_logs(data, comps, mixing).iter().map(|r| log_sum_exp(r)).sum();
    let reg: f64 = comps.iter().map(|c| c.iter().zip(pen).map(|(v, p)| p * v * v).sum::<f64>()).sum();
    ll / data.n as f64 - reg
}

fn responsibilities(data: &FitData, comps: &[Vec<f64>], mixing: &[f64]) -> Vec<Vec<f64>> {
    joint_logs(data, comps, mixing)
        .into_iter()
        .map(|mut r| {
            softmax_in_place(&mut r);
            r
        })
        .collect()
}

/// EM from a pooled start with jittered decision coefficients.
pub fn run_em(train: &LoggedDataset, k: usize, ridge: f64, seed: u64) -> Result<EmRun> {
    run_em_data(&FitData::new(train), k, ridge, seed)
}

pub(crate) fn run_em_data(data: &FitData, k: usize, ridge: f64, seed: u64) -> Result<EmRun> {
    if k == 0 {
        return Err(Error::InvalidConfig("EM needs K >= 1".into()));
    }
    let dx1 = data.dx1();
    let p = dx1 + data.j;
    let pen = penalty(dx1, p, ridge);
    let design = data.pooled_design();
    let pooled = fit_pooled_coef(data, ridge, None, None).coef;
    let mut rng = stream(seed, &format!("em/init/{k}/{ridge:e}"));
    let jitter = Normal::new(0.0, INIT_JITTER).expect("valid sd");
    let mut comps: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let mut c = pooled.clone();
            if k > 1 {
                c[dx1..].iter_mut().for_each(|v| *v += jitter.sample(&mut rng));
            }
            c
        })
        .collect();
    let mut mixing = vec![1.0 / k as f64; k];
    let mut prev = objective(data, &comps, &mixing, &pen);
    let mut trace = vec![prev];
    let mut dropped = 0;
    let mut converged = false;
    let mut resp = responsibilities(data, &comps, &mixing);
    for round in 1..=MAX_ROUNDS {
        for c in 0..comps.len() {
            let w: Vec<f64> = resp.iter().map(|r| r[c]).collect();
            let problem = LogisticProblem { x: &design, y: &data.y, weights: Some(&w), penalty: &pen, norm: data.n as f64 };
            comps[c] = problem.fit(Some(&comps[c]), IRLS_ITERS).coef;
            mixing[c] = w.iter().sum::<f64>() / data.n as f64;
        }
        let mut cur = objective(data, &comps, &mixing, &pen);
        if cur < prev - MONOTONE_SLACK {
            return Err(Error::EmNotMonotone { round, decrease: prev - cur });
        }
        if comps.len() > 1 && mixing.iter().any(|m| *m < COLLAPSE) {
            let keep: Vec<usize> = (0..comps.len()).filter(|&c| mixing[c] >= COLLAPSE).collect();
            dropped += comps.len() - keep.len();
            debug!("EM round {round}: dropping {} collapsed component(s)", comps.len() - keep.len());
            comps = keep.iter().map(|&c| comps[c].clone()).collect();
            let total: f64 = keep.iter().map(|&c| mixing[c]).sum();
            mixing = keep.iter().map(|&c| mixing[c] / total).collect();
            // the objective changes with the component set; restart the monotone reference
            cur = objective(data, &comps, &mixing, &pen);
            trace.push(cur);
            prev = cur;
            resp = responsibilities(data, &comps, &mixing);
            continue;
        }
        trace.push(cur);
        resp = responsibilities(data, &comps, &mixing);
        let rel = (cur - prev).abs() / prev.abs().max(1e-12);
        prev = cur;
        if rel < REL_TOL {
            converged = true;
            break;
        }
    }
    Ok(EmRun { components: comps, mixing, responsibilities: resp, trace, dropped, converged })
}

/// Mixture-predictive mean log-loss with gate probabilities standing in for mixing weights.
fn gated_val_loss(val: &FitData, comps: &[Vec<f64>], gate: &[Vec<f64>]) -> f64 {
    let total: f64 = (0..val.n)
        .map(|i| {
            let mut a: Vec<f64> = gate.iter().map(|g| crate::dot(g, val.xrow(i))).collect();
            softmax_in_place(&mut a);
            let logs: Vec<f64> = comps
                .iter()
                .zip(&a)
                .map(|(c, ak)| ak.max(1e-300).ln() + log_bernoulli(pooled_logit(val, i, c), val.y[i]))
                .collect();
            -log_sum_exp(&logs)
        })
        .sum();
    total / val.n as f64
}

pub(crate) fn responsibility_gate(data: &FitData, resp: &[Vec<f64>], ridge: f64) -> Vec<Vec<f64>> {
    let x = nalgebra::DMatrix::from_fn(data.n, data.dx1(), |i, c| data.xrow(i)[c]);
    rows(&fit_softmax(&x, resp, ridge, NEWTON_ITERS), resp[0].len())
}

pub fn fit_em_mixture(train: &LoggedDataset, val: &LoggedDataset, cfg: &FitConfig) -> Result<WeightModel> {
    let train = FitData::new(train);
    let val = FitData::new(val);
    let dx1 = train.dx1();
    let seed = child_seed(cfg.seed, "em");
    let mut best: Option<(f64, usize, f64, EmRun, Vec<Vec<f64>>)> = None;
    for k in cfg.k_grid_or(&[1, 2, 3, 4]) {
        for &ridge in &cfg.reg_grid {
            let run = run_em_data(&train, k, ridge, seed)?;
            let gate = responsibility_gate(&train, &run.responsibilities, ridge.max(1e-6));
            let loss = gated_val_loss(&val, &run.components, &gate);
            debug!("em k={k} ridge={ridge}: val {loss:.6}, rounds {}", run.trace.len() - 1);
            if best.as_ref().is_none_or(|b| loss < b.0) {
                best = Some((loss, k, ridge, run, gate));
            }
        }
    }
    let (val_loss, k, ridge, run, gate) = best.ok_or_else(|| Error::InvalidConfig("empty EM grid".into()))?;
    let kept = run.components.len();
    let experts: Vec<Vec<f64>> = run.components.iter().map(|c| c[dx1..].to_vec()).collect();
    let param_count = kept * (dx1 + train.j) + kept * GateFeatures::Affine.dim(train.d_x);
    let mut model = WeightModel::new("em", &train, ModelParams::GatedBank { gate, experts, hard: false }, param_count);
    model.val_loss = val_loss;
    model.select("k", k);
    model.select("ridge", ridge);
    model.select("components_kept", kept);
    model.notes.push(format!("rounds={}", run.trace.len() - 1));
    model.notes.push(format!("converged={}", run.converged));
    Ok(model)
}
