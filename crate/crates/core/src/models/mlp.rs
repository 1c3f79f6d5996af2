//! One-hidden-layer contextual map `w(x) = W₂ tanh(W₁x + b₁) + b₂`.
//!
//! Layout: `[W₁ (H × D) | b₁ (H) | W₂ (J × H) | b₂ (J) | baseline (D+1)]`.

use log::warn;
use rand_distr::{Distribution, Normal};

use crate::benchgen::LoggedDataset;
use crate::error::{Error, Result};
use crate::optim::{self, Objective};
use crate::rng::{child_seed, stream};
use crate::{dot, sigmoid, softplus};

use super::pooled::pooled_solution;
use super::{rows, FitConfig, FitData, ModelParams, WeightModel, BASELINE_FLOOR};

pub struct MlpObjective<'a> {
    train: &'a FitData,
    val: &'a FitData,
    hidden: usize,
    ridge: f64,
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    base: usize,
    end: usize,
}

impl<'a> MlpObjective<'a> {
    pub(crate) fn new(train: &'a FitData, val: &'a FitData, hidden: usize, ridge: f64) -> Self {
        Self { train, val, hidden, ridge }
    }

    fn layout(&self) -> Layout {
        let d = self.train.d_x;
        let h = self.hidden;
        let j = self.train.j;
        let w1 = 0;
        let b1 = w1 + h * d;
        let w2 = b1 + h;
        let b2 = w2 + j * h;
        let base = b2 + j;
        Layout { w1, b1, w2, b2, base, end: base + d + 1 }
    }

    fn logit(&self, data: &FitData, i: usize, p: &[f64], hid: &mut [f64]) -> f64 {
        let l = self.layout();
        let d = data.d_x;
        let x = data.context(i);
        for (hh, out) in hid.iter_mut().enumerate() {
            *out = (dot(&p[l.w1 + hh * d..l.w1 + (hh + 1) * d], x) + p[l.b1 + hh]).tanh();
        }
        let z = data.zrow(i);
        let mut score = 0.0;
        for (jj, zj) in z.iter().enumerate() {
            let wj = dot(&p[l.w2 + jj * self.hidden..l.w2 + (jj + 1) * self.hidden], hid) + p[l.b2 + jj];
            score += wj * zj;
        }
        dot(&p[l.base..l.end], data.xrow(i)) + score
    }
}

impl Objective for MlpObjective<'_> {
    fn n_params(&self) -> usize {
        self.layout().end
    }

    fn loss_grad(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let l = self.layout();
        let data = self.train;
        let d = data.d_x;
        let h = self.hidden;
        let mut hid = vec![0.0; h];
        let mut dh = vec![0.0; h];
        let inv_n = 1.0 / data.n as f64;
        let mut loss = 0.0;
        for i in 0..data.n {
            let eta = self.logit(data, i, p, &mut hid);
            let y = data.y[i];
            loss += softplus(eta) - y * eta;
            let r = (sigmoid(eta) - y) * inv_n;
            let z = data.zrow(i);
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (jj, zj) in z.iter().enumerate() {
                let rz = r * zj;
                grad[l.b2 + jj] += rz;
                let row = l.w2 + jj * h;
                for hh in 0..h {
                    grad[row + hh] += rz * hid[hh];
                    dh[hh] += rz * p[row + hh];
                }
            }
            let x = data.context(i);
            for hh in 0..h {
                let da = dh[hh] * (1.0 - hid[hh] * hid[hh]);
                grad[l.b1 + hh] += da;
                for (g, xv) in grad[l.w1 + hh * d..l.w1 + (hh + 1) * d].iter_mut().zip(x) {
                    *g += da * xv;
                }
            }
            for (g, xv) in grad[l.base..l.end].iter_mut().zip(data.xrow(i)) {
                *g += r * xv;
            }
        }
        let mut pen = 0.0;
        for (idx, &v) in p.iter().enumerate() {
            let lam = if idx >= l.base { BASELINE_FLOOR } else { self.ridge };
            pen += lam * v * v;
            grad[idx] += 2.0 * lam * v;
        }
        loss * inv_n + pen
    }

    fn val_loss(&self, p: &[f64]) -> f64 {
        let mut hid = vec![0.0; self.hidden];
        let total: f64 = (0..self.val.n)
            .map(|i| {
                let eta = self.logit(self.val, i, p, &mut hid);
                softplus(eta) - self.val.y[i] * eta
            })
            .sum();
        total / self.val.n as f64
    }
}

pub fn fit_mlp_contextual(train: &LoggedDataset, val: &LoggedDataset, cfg: &FitConfig) -> Result<WeightModel> {
    let train = FitData::new(train);
    let val = FitData::new(val);
    let pooled = pooled_solution(&train, &val, &cfg.reg_grid);
    let d = train.d_x;
    let h = cfg.hidden;
    let adam = cfg.adam();
    let seed = child_seed(cfg.seed, "mlp");
    let mut best: Option<(f64, Vec<f64>, f64, usize)> = None;
    let mut diverged = 0;
    for &ridge in &cfg.reg_grid {
        let obj = MlpObjective::new(&train, &val, h, ridge);
        for restart in 0..cfg.restarts {
            let mut rng = stream(seed, &format!("init/{ridge:e}/{restart}"));
            let input = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid sd");
            let mut init: Vec<f64> = (0..h * d).map(|_| input.sample(&mut rng)).collect();
            init.extend(std::iter::repeat_n(0.0, h));
            // zero output weights: the network starts at the pooled solution
            init.extend(std::iter::repeat_n(0.0, train.j * h));
            init.extend_from_slice(&pooled.beta);
            init.extend_from_slice(&pooled.baseline);
            match optim::train(&obj, init, &adam) {
                Some(out) => {
                    if best.as_ref().is_none_or(|b| out.best_val < b.0) {
                        best = Some((out.best_val, out.params, ridge, restart));
                    }
                }
                None => {
                    diverged += 1;
                    warn!("mlp restart {restart} at ridge {ridge} diverged; discarded");
                }
            }
        }
    }
    let (val_loss, p, ridge, restart) = best.ok_or(Error::Diverged { method: "mlp".into(), restarts: diverged })?;
    let l = MlpObjective::new(&train, &val, h, ridge).layout();
    let mut model = WeightModel::new(
        "mlp",
        &train,
        ModelParams::Mlp {
            w1: rows(&p[l.w1..l.b1], h),
            b1: p[l.b1..l.w2].to_vec(),
            w2: rows(&p[l.w2..l.b2], train.j),
            b2: p[l.b2..l.base].to_vec(),
        },
        p.len(),
    );
    model.baseline = Some(p[l.base..l.end].to_vec());
    model.val_loss = val_loss;
    model.select("hidden", h);
    model.select("ridge", ridge);
    model.select("restart", restart);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::pooled::fit_pooled;
    use crate::models::testutil::{quick_fit, tiny};
    use rand::Rng;

    #[test]
    fn gradient_matches_finite_differences() {
        let b = tiny(8);
        let train = FitData::new(&b.train);
        let val = FitData::new(&b.val);
        let obj = MlpObjective::new(&train, &val, 8, 1e-3);
        let mut rng = stream(2, "fd");
        let params: Vec<f64> = (0..obj.n_params()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut grad = vec![0.0; params.len()];
        obj.loss_grad(&params, &mut grad);
        let mut scratch = vec![0.0; params.len()];
        for _ in 0..20 {
            let idx = rng.random_range(0..params.len());
            let h = 1e-5;
            let mut p = params.clone();
            p[idx] += h;
            let up = obj.loss_grad(&p, &mut scratch);
            p[idx] -= 2.0 * h;
            let down = obj.loss_grad(&p, &mut scratch);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[idx]).abs() / fd.abs().max(grad[idx].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {idx}: {} vs {fd}", grad[idx]);
        }
    }

    #[test]
    fn zero_output_layer_reproduces_pooled_at_epoch_zero() {
        let b = tiny(9);
        let cfg = FitConfig { max_epochs: 1, patience: 1, restarts: 1, reg_grid: vec![1e-3], ..quick_fit() };
        let pooled = fit_pooled(&b.train, &b.val, &cfg).unwrap();
        let train = FitData::new(&b.train);
        let val = FitData::new(&b.val);
        let sol = pooled_solution(&train, &val, &cfg.reg_grid);
        let obj = MlpObjective::new(&train, &val, 4, 1e-3);
        let mut init = vec![0.3; 4 * train.d_x + 4];
        init.extend(std::iter::repeat_n(0.0, train.j * 4));
        init.extend_from_slice(&sol.beta);
        init.extend_from_slice(&sol.baseline);
        assert!((obj.val_loss(&init) - pooled.val_loss).abs() < 1e-12);
    }
}
