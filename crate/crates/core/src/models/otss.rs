//! Output-targeted soft segmentation.
//!
//! A softmax gate `α(x)` over context features mixes a bank of expert
//! vectors, `ŵ(x) = Σ_k α_k(x) β_k`, and an affine baseline `b(x)` absorbs
//! context-only outcome variation:
//!
//! ```text
//! p̂(x, d) = σ(b(x) + ŵ(x)ᵀ z_d)
//! ```
//!
//! Gate, baseline and experts are trained jointly on the penalised log-loss
//! with full-batch Adam, validation early stopping and restart-and-select.
//! With `K = 1` the class is exactly the pooled one.
//!
//! Parameters are laid out as `[gate (K × F) | baseline (D+1) | experts (K × J)]`.

use log::warn;
use rand_distr::{Distribution, Normal};

use crate::benchgen::LoggedDataset;
use crate::error::{Error, Result};
use crate::optim::{self, Objective};
use crate::rng::{child_seed, stream};
use crate::{dot, softmax_in_place, softplus, sigmoid};

use super::pooled::pooled_solution;
use super::{rows, FitConfig, FitData, GateFeatures, ModelParams, WeightModel, BASELINE_FLOOR};

const GATE_INIT_SD: f64 = 0.1;
const EXPERT_JITTER_SD: f64 = 0.2;

/// Penalised training loss of the soft-segmentation model, with its
/// validation log-loss.
pub struct OtssObjective<'a> {
    train: &'a FitData,
    val: &'a FitData,
    k: usize,
    ridge: f64,
    f_dim: usize,
    train_gate: Vec<f64>,
    val_gate: Vec<f64>,
}

fn gate_matrix(data: &FitData, features: GateFeatures) -> Vec<f64> {
    (0..data.n).flat_map(|i| features.build(data.context(i))).collect()
}

impl<'a> OtssObjective<'a> {
    pub(crate) fn new(train: &'a FitData, val: &'a FitData, k: usize, features: GateFeatures, ridge: f64) -> Self {
        Self {
            train,
            val,
            k,
            ridge,
            f_dim: features.dim(train.d_x),
            train_gate: gate_matrix(train, features),
            val_gate: gate_matrix(val, features),
        }
    }

    fn offsets(&self) -> (usize, usize) {
        let base = self.k * self.f_dim;
        (base, base + self.train.dx1())
    }

    /// Logit and per-record intermediates for record `i` of `data`.
    fn forward(&self, data: &FitData, gate_feats: &[f64], i: usize, params: &[f64], alpha: &mut [f64], s: &mut [f64]) -> f64 {
        let (b_off, e_off) = self.offsets();
        let f = &gate_feats[i * self.f_dim..(i + 1) * self.f_dim];
        let z = data.zrow(i);
        for k in 0..self.k {
            alpha[k] = dot(&params[k * self.f_dim..(k + 1) * self.f_dim], f);
            s[k] = dot(&params[e_off + k * data.j..e_off + (k + 1) * data.j], z);
        }
        softmax_in_place(alpha);
        let mix: f64 = alpha.iter().zip(s.iter()).map(|(a, b)| a * b).sum();
        dot(&params[b_off..e_off], data.xrow(i)) + mix
    }

    fn penalty(&self, params: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let (b_off, e_off) = self.offsets();
        let mut total = 0.0;
        for (idx, &p) in params.iter().enumerate() {
            let lam = if (b_off..e_off).contains(&idx) { BASELINE_FLOOR } else { self.ridge };
            total += lam * p * p;
        }
        if let Some(g) = grad {
            for (idx, &p) in params.iter().enumerate() {
                let lam = if (b_off..e_off).contains(&idx) { BASELINE_FLOOR } else { self.ridge };
                g[idx] += 2.0 * lam * p;
            }
        }
        total
    }
}

impl Objective for OtssObjective<'_> {
    fn n_params(&self) -> usize {
        self.k * self.f_dim + self.train.dx1() + self.k * self.train.j
    }

    fn loss_grad(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let data = self.train;
        let (b_off, e_off) = self.offsets();
        let mut alpha = vec![0.0; self.k];
        let mut s = vec![0.0; self.k];
        let inv_n = 1.0 / data.n as f64;
        let mut loss = 0.0;
        for i in 0..data.n {
            let eta = self.forward(data, &self.train_gate, i, params, &mut alpha, &mut s);
            let y = data.y[i];
            loss += softplus(eta) - y * eta;
            let r = (sigmoid(eta) - y) * inv_n;
            let mix: f64 = alpha.iter().zip(&s).map(|(a, b)| a * b).sum();
            let f = &self.train_gate[i * self.f_dim..(i + 1) * self.f_dim];
            let z = data.zrow(i);
            for k in 0..self.k {
                let gk = r * alpha[k] * (s[k] - mix);
                if gk != 0.0 {
                    for (g, fv) in grad[k * self.f_dim..(k + 1) * self.f_dim].iter_mut().zip(f) {
                        *g += gk * fv;
                    }
                }
                let ek = r * alpha[k];
                for (g, zv) in grad[e_off + k * data.j..e_off + (k + 1) * data.j].iter_mut().zip(z) {
                    *g += ek * zv;
                }
            }
            for (g, xv) in grad[b_off..e_off].iter_mut().zip(data.xrow(i)) {
                *g += r * xv;
            }
        }
        loss * inv_n + self.penalty(params, Some(grad))
    }

    fn val_loss(&self, params: &[f64]) -> f64 {
        let mut alpha = vec![0.0; self.k];
        let mut s = vec![0.0; self.k];
        let total: f64 = (0..self.val.n)
            .map(|i| {
                let eta = self.forward(self.val, &self.val_gate, i, params, &mut alpha, &mut s);
                softplus(eta) - self.val.y[i] * eta
            })
            .sum();
        total / self.val.n as f64
    }
}

struct Candidate {
    params: Vec<f64>,
    val_loss: f64,
    initial_val: f64,
    ridge: f64,
    restart: usize,
    epochs: usize,
}

pub fn fit_otss(train: &LoggedDataset, val: &LoggedDataset, k: usize, cfg: &FitConfig) -> Result<WeightModel> {
    if k == 0 {
        return Err(Error::InvalidConfig("expert count must be at least 1".into()));
    }
    let train = FitData::new(train);
    let val = FitData::new(val);
    let pooled = pooled_solution(&train, &val, &cfg.reg_grid);
    let features = cfg.gate_features;
    let f_dim = features.dim(train.d_x);
    let adam = cfg.adam();
    let seed = child_seed(cfg.seed, "otss");
    let mut best: Option<Candidate> = None;
    let mut diverged = 0;
    let mut notes = Vec::new();
    for &ridge in &cfg.reg_grid {
        let obj = OtssObjective::new(&train, &val, k, features, ridge);
        for restart in 0..cfg.restarts {
            let mut rng = stream(seed, &format!("init/{ridge:e}/{restart}"));
            let gate_noise = Normal::new(0.0, GATE_INIT_SD).expect("valid sd");
            let jitter = Normal::new(0.0, EXPERT_JITTER_SD).expect("valid sd");
            let mut init: Vec<f64> = (0..k * f_dim).map(|_| gate_noise.sample(&mut rng)).collect();
            init.extend_from_slice(&pooled.baseline);
            for _ in 0..k {
                for &b in &pooled.beta {
                    // jitter only serves to separate experts
                    init.push(if k > 1 { b + jitter.sample(&mut rng) } else { b });
                }
            }
            match optim::train(&obj, init, &adam) {
                Some(out) => {
                    if best.as_ref().is_none_or(|b| out.best_val < b.val_loss) {
                        best = Some(Candidate {
                            params: out.params,
                            val_loss: out.best_val,
                            initial_val: out.initial_val,
                            ridge,
                            restart,
                            epochs: out.epochs,
                        });
                    }
                }
                None => {
                    diverged += 1;
                    warn!("otss restart {restart} at ridge {ridge} diverged; discarded");
                    notes.push(format!("restart {restart} ridge {ridge:e} diverged"));
                }
            }
        }
    }
    let best = best.ok_or(Error::Diverged { method: "otss".into(), restarts: diverged })?;
    let b_off = k * f_dim;
    let e_off = b_off + train.dx1();
    let mut model = WeightModel::new(
        "otss",
        &train,
        ModelParams::SoftGate {
            gate: rows(&best.params[..b_off], k),
            experts: rows(&best.params[e_off..], k),
            features,
        },
        best.params.len(),
    );
    model.baseline = Some(best.params[b_off..e_off].to_vec());
    model.val_loss = best.val_loss;
    model.select("k", k);
    model.select("ridge", best.ridge);
    model.select("restart", best.restart);
    model.select("epochs", best.epochs);
    notes.push(format!("initial_val_loss={:e}", best.initial_val));
    model.notes = notes;
    Ok(model)
}
