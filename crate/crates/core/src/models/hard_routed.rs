//! Alternating hard assignment of records to experts, then a routing classifier.

use log::debug;
use rand_distr::{Distribution, Normal};

use crate::benchgen::LoggedDataset;
use crate::error::{Error, Result};
use crate::logistic::mean_log_loss;
use crate::rng::{child_seed, stream};
use crate::{dot, softplus};

use super::em::responsibility_gate;
use super::pooled::{fit_pooled_coef, pooled_logit};
use super::{first_argmax, FitConfig, FitData, GateFeatures, ModelParams, WeightModel};

const MAX_ROUNDS: usize = 50;
/// Rounds without a validation improvement before the alternation stops.
const ROUND_PATIENCE: usize = 5;
const INIT_JITTER: f64 = 0.2;

fn record_loss(data: &FitData, i: usize, coef: &[f64]) -> f64 {
    let eta = pooled_logit(data, i, coef);
    softplus(eta) - data.y[i] * eta
}

struct HardRun {
    coefs: Vec<Vec<f64>>,
    gate: Vec<Vec<f64>>,
    val_loss: f64,
    /// Round whose state was kept.
    best_round: usize,
    rounds: usize,
}

fn routing_gate(data: &FitData, assignment: &[usize], k: usize, ridge: f64) -> Vec<Vec<f64>> {
    let targets: Vec<Vec<f64>> =
        assignment.iter().map(|&a| (0..k).map(|e| if e == a { 1.0 } else { 0.0 }).collect()).collect();
    responsibility_gate(data, &targets, ridge.max(1e-6))
}

fn routed_val_loss(val: &FitData, coefs: &[Vec<f64>], gate: &[Vec<f64>]) -> f64 {
    let logit = |i: usize| {
        let scores: Vec<f64> = gate.iter().map(|g| dot(g, val.xrow(i))).collect();
        pooled_logit(val, i, &coefs[first_argmax(&scores)])
    };
    mean_log_loss((0..val.n).map(logit), &val.y)
}

fn assign(data: &FitData, coefs: &[Vec<f64>]) -> Vec<usize> {
    (0..data.n)
        .map(|i| {
            let losses: Vec<f64> = coefs.iter().map(|c| -record_loss(data, i, c)).collect();
            first_argmax(&losses)
        })
        .collect()
}

fn route(data: &FitData, gate: &[Vec<f64>]) -> Vec<usize> {
    (0..data.n)
        .map(|i| first_argmax(&gate.iter().map(|g| dot(g, data.xrow(i))).collect::<Vec<_>>()))
        .collect()
}

fn starve_guard(data: &FitData, coefs: &[Vec<f64>], mut next: Vec<usize>) -> Vec<usize> {
    let k = coefs.len();
    let min_size = data.j + 2;
    if k > 1 {
        for e in 0..k {
            let size = next.iter().filter(|a| **a == e).count();
            if size >= min_size {
                continue;
            }
            // hand the starved expert the worst-fitted records of the larger experts
            let mut donors: Vec<(f64, usize)> = (0..data.n)
                .filter(|&i| next[i] != e)
                .map(|i| (record_loss(data, i, &coefs[next[i]]), i))
                .collect();
            donors.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for (_, i) in donors.into_iter().take(min_size - size) {
                next[i] = e;
            }
        }
    }
    next
}

/// Alternate assignment and refits, keeping the round whose routed
/// validation loss is lowest. Loss-based labels are projected through the
/// routing classifier before each refit, so every expert is refit on a
/// context-defined cell rather than on records sorted by their outcome.
fn alternate(data: &FitData, val: &FitData, mut coefs: Vec<Vec<f64>>, ridge: f64) -> HardRun {
    let k = coefs.len();
    let mut assignment = vec![usize::MAX; data.n];
    let mut best: Option<HardRun> = None;
    let mut rounds = 0;
    for round in 1..=MAX_ROUNDS {
        rounds = round;
        let gate = routing_gate(data, &assign(data, &coefs), k, ridge);
        let next = starve_guard(data, &coefs, route(data, &gate));
        if next == assignment {
            break;
        }
        assignment = next;
        for (e, coef) in coefs.iter_mut().enumerate() {
            let idx: Vec<usize> = (0..data.n).filter(|&i| assignment[i] == e).collect();
            *coef = fit_pooled_coef(&data.subset(&idx), ridge, None, Some(coef)).coef;
        }
        let val_loss = routed_val_loss(val, &coefs, &gate);
        if val_loss.is_finite() && best.as_ref().is_none_or(|b| val_loss < b.val_loss) {
            best = Some(HardRun { coefs: coefs.clone(), gate, val_loss, best_round: round, rounds });
        } else if best.as_ref().is_some_and(|b| round - b.best_round >= ROUND_PATIENCE) {
            break;
        }
    }
    let mut run = best.unwrap_or_else(|| HardRun {
        gate: routing_gate(data, &assignment, k, ridge),
        val_loss: f64::NAN,
        coefs,
        best_round: rounds,
        rounds,
    });
    if run.val_loss.is_nan() {
        run.val_loss = routed_val_loss(val, &run.coefs, &run.gate);
    }
    run.rounds = rounds;
    run
}

pub fn fit_hard_routed(train: &LoggedDataset, val: &LoggedDataset, k: usize, cfg: &FitConfig) -> Result<WeightModel> {
    if k == 0 {
        return Err(Error::InvalidConfig("hard routing needs K >= 1".into()));
    }
    let train = FitData::new(train);
    let val = FitData::new(val);
    if train.n < k * (train.j + 2) {
        return Err(Error::InvalidConfig(format!("{} records cannot feed {k} experts", train.n)));
    }
    let dx1 = train.dx1();
    let seed = child_seed(cfg.seed, "hard_routed");
    let jitter = Normal::new(0.0, INIT_JITTER).expect("valid sd");
    let mut best: Option<(f64, usize, HardRun)> = None;
    for &ridge in &cfg.reg_grid {
        let pooled = fit_pooled_coef(&train, ridge, None, None).coef;
        let restarts = if k == 1 { 1 } else { cfg.restarts };
        for restart in 0..restarts {
            let mut rng = stream(seed, &format!("init/{ridge:e}/{restart}"));
            let init: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    let mut c = pooled.clone();
                    if k > 1 {
                        c.iter_mut().for_each(|v| *v += jitter.sample(&mut rng));
                    }
                    c
                })
                .collect();
            let run = alternate(&train, &val, init, ridge);
            let loss = run.val_loss;
            debug!("hard_routed ridge={ridge} restart={restart}: val {loss:.6} after {} rounds", run.rounds);
            if !loss.is_finite() {
                continue;
            }
            if best.as_ref().is_none_or(|b| loss < b.2.val_loss) {
                best = Some((ridge, restart, run));
            }
        }
    }
    let (ridge, restart, run) =
        best.ok_or(Error::Diverged { method: "hard_routed".into(), restarts: cfg.restarts * cfg.reg_grid.len() })?;
    let experts = run.coefs.iter().map(|c| c[dx1..].to_vec()).collect();
    let param_count = k * (dx1 + train.j) + k * GateFeatures::Affine.dim(train.d_x);
    let mut model = WeightModel::new("hard_routed", &train, ModelParams::GatedBank { gate: run.gate.clone(), experts, hard: true }, param_count);
    model.val_loss = run.val_loss;
    model.select("k", k);
    model.select("ridge", ridge);
    model.select("restart", restart);
    model.notes.push(format!("rounds={} kept_round={}", run.rounds, run.best_round));
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::pooled::fit_pooled;
    use crate::models::testutil::tiny;

    #[test]
    fn single_expert_is_pooled() {
        let b = tiny(5);
        let cfg = FitConfig::default();
        let hr = fit_hard_routed(&b.train, &b.val, 1, &cfg).unwrap();
        let pooled = fit_pooled(&b.train, &b.val, &cfg).unwrap();
        let x = &b.eval[3].context;
        for (a, p) in hr.predict_w(x).iter().zip(pooled.predict_w(x)) {
            assert!((a - p).abs() < 1e-6, "{a} vs {p}");
        }
    }

    #[test]
    fn gate_is_one_hot() {
        let b = tiny(6);
        let cfg = FitConfig { restarts: 2, reg_grid: vec![1e-3], ..Default::default() };
        let m = fit_hard_routed(&b.train, &b.val, 3, &cfg).unwrap();
        for p in b.eval.iter().take(20) {
            let g = m.gate(&p.context).unwrap();
            assert_eq!(g.iter().filter(|v| **v == 1.0).count(), 1);
            assert_eq!(g.iter().sum::<f64>(), 1.0);
        }
    }
}
