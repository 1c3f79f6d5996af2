//! Direct contextual maps `w(x) = W(1, x)` and their low-rank restriction.

use nalgebra::DMatrix;

use crate::benchgen::LoggedDataset;
use crate::error::Result;
use crate::linalg::balanced_factors;
use crate::logistic::{mean_log_loss, LogisticProblem};
use crate::dot;

use super::{penalty, rows, FitConfig, FitData, ModelParams, WeightModel, NEWTON_ITERS};

/// Design `[(1, x) | z ⊗ (1, x)]`; the bilinear expansion of `zᵀW(1, x)`.
fn bilinear_design(data: &FitData) -> DMatrix<f64> {
    let dx1 = data.dx1();
    DMatrix::from_fn(data.n, dx1 + data.j * dx1, |i, c| {
        let x = data.xrow(i);
        if c < dx1 {
            x[c]
        } else {
            let k = c - dx1;
            data.zrow(i)[k / dx1] * x[k % dx1]
        }
    })
}

/// `(baseline, W)` from a bilinear coefficient vector.
fn split_linear(coef: &[f64], dx1: usize, j: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    (coef[..dx1].to_vec(), rows(&coef[dx1..dx1 + j * dx1], j))
}

fn linear_logit(data: &FitData, i: usize, baseline: &[f64], w: &[Vec<f64>]) -> f64 {
    let x = data.xrow(i);
    dot(baseline, x) + data.zrow(i).iter().zip(w).map(|(zj, row)| zj * dot(row, x)).sum::<f64>()
}

struct LinearFit {
    baseline: Vec<f64>,
    w: Vec<Vec<f64>>,
    val_loss: f64,
}

fn fit_linear_at(train: &FitData, val: &FitData, ridge: f64) -> LinearFit {
    let x = bilinear_design(train);
    let dx1 = train.dx1();
    let pen = penalty(dx1, x.ncols(), ridge);
    let fit = LogisticProblem::new(&x, &train.y, &pen).fit(None, NEWTON_ITERS);
    let (baseline, w) = split_linear(&fit.coef, dx1, train.j);
    let val_loss = mean_log_loss((0..val.n).map(|i| linear_logit(val, i, &baseline, &w)), &val.y);
    LinearFit { baseline, w, val_loss }
}

pub fn fit_linear_contextual(train: &LoggedDataset, val: &LoggedDataset, cfg: &FitConfig) -> Result<WeightModel> {
    let train = FitData::new(train);
    let val = FitData::new(val);
    let (ridge, best) = cfg
        .reg_grid
        .iter()
        .map(|&r| (r, fit_linear_at(&train, &val, r)))
        .min_by(|a, b| a.1.val_loss.total_cmp(&b.1.val_loss))
        .expect("nonempty ridge grid");
    let dx1 = train.dx1();
    let mut model = WeightModel::new(
        "linear",
        &train,
        ModelParams::Linear { coef: best.w },
        dx1 + train.j * dx1,
    );
    model.baseline = Some(best.baseline);
    model.val_loss = best.val_loss;
    model.select("ridge", ridge);
    Ok(model)
}

/// State of the alternating low-rank fit.
struct LowRankState {
    baseline: Vec<f64>,
    /// `J × r`
    u: DMatrix<f64>,
    /// `(D+1) × r`
    v: DMatrix<f64>,
}

impl LowRankState {
    fn weight_rows(&self) -> Vec<Vec<f64>> {
        let w = &self.u * self.v.transpose();
        (0..w.nrows()).map(|j| w.row(j).iter().copied().collect()).collect()
    }

    fn objective(&self, data: &FitData, ridge: f64) -> f64 {
        let w = self.weight_rows();
        let nll = mean_log_loss((0..data.n).map(|i| linear_logit(data, i, &self.baseline, &w)), &data.y);
        let base: f64 = self.baseline.iter().map(|b| b * b).sum();
        nll + ridge * (self.u.norm_squared() + self.v.norm_squared()) + super::BASELINE_FLOOR * base
    }

    /// Refit `(baseline, U)` with `V` fixed.
    fn update_u(&mut self, data: &FitData, ridge: f64) {
        let dx1 = data.dx1();
        let r = self.u.ncols();
        let j = data.j;
        let h: Vec<Vec<f64>> = (0..data.n)
            .map(|i| (0..r).map(|c| dot(self.v.column(c).as_slice(), data.xrow(i))).collect())
            .collect();
        let x = DMatrix::from_fn(data.n, dx1 + j * r, |i, c| {
            if c < dx1 {
                data.xrow(i)[c]
            } else {
                let k = c - dx1;
                data.zrow(i)[k / r] * h[i][k % r]
            }
        });
        let mut init = self.baseline.clone();
        for jj in 0..j {
            for c in 0..r {
                init.push(self.u[(jj, c)]);
            }
        }
        let pen = penalty(dx1, x.ncols(), ridge);
        let fit = LogisticProblem::new(&x, &data.y, &pen).fit(Some(&init), NEWTON_ITERS);
        self.baseline = fit.coef[..dx1].to_vec();
        for jj in 0..j {
            for c in 0..r {
                self.u[(jj, c)] = fit.coef[dx1 + jj * r + c];
            }
        }
    }

    /// Refit `(baseline, V)` with `U` fixed.
    fn update_v(&mut self, data: &FitData, ridge: f64) {
        let dx1 = data.dx1();
        let r = self.u.ncols();
        let g: Vec<Vec<f64>> = (0..data.n)
            .map(|i| (0..r).map(|c| dot(self.u.column(c).as_slice(), data.zrow(i))).collect())
            .collect();
        let x = DMatrix::from_fn(data.n, dx1 + r * dx1, |i, c| {
            if c < dx1 {
                data.xrow(i)[c]
            } else {
                let k = c - dx1;
                g[i][k / dx1] * data.xrow(i)[k % dx1]
            }
        });
        let mut init = self.baseline.clone();
        for c in 0..r {
            for d in 0..dx1 {
                init.push(self.v[(d, c)]);
            }
        }
        let pen = penalty(dx1, x.ncols(), ridge);
        let fit = LogisticProblem::new(&x, &data.y, &pen).fit(Some(&init), NEWTON_ITERS);
        self.baseline = fit.coef[..dx1].to_vec();
        for c in 0..r {
            for d in 0..dx1 {
                self.v[(d, c)] = fit.coef[dx1 + c * dx1 + d];
            }
        }
    }
}

const MAX_ALTERNATIONS: usize = 40;
const STALL_ROUNDS: usize = 3;

/// Alternating minimisation at fixed rank and ridge, started from the
/// truncated SVD of the full linear fit.
fn fit_lowrank_at(train: &FitData, rank: usize, ridge: f64, init: &LinearFit) -> (LowRankState, f64) {
    let dx1 = train.dx1();
    let w = DMatrix::from_fn(train.j, dx1, |a, b| init.w[a][b]);
    let (u, v) = balanced_factors(&w, rank);
    let mut state = LowRankState { baseline: init.baseline.clone(), u, v };
    let mut best_obj = state.objective(train, ridge);
    let mut best = (state.baseline.clone(), state.u.clone(), state.v.clone());
    let mut stalled = 0;
    for _ in 0..MAX_ALTERNATIONS {
        state.update_u(train, ridge);
        state.update_v(train, ridge);
        let obj = state.objective(train, ridge);
        if obj < best_obj - 1e-10 * (1.0 + best_obj.abs()) {
            best_obj = obj;
            best = (state.baseline.clone(), state.u.clone(), state.v.clone());
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= STALL_ROUNDS {
                break;
            }
        }
    }
    (LowRankState { baseline: best.0, u: best.1, v: best.2 }, best_obj)
}

pub fn fit_lowrank_contextual(train: &LoggedDataset, val: &LoggedDataset, cfg: &FitConfig) -> Result<WeightModel> {
    let train = FitData::new(train);
    let val = FitData::new(val);
    let dx1 = train.dx1();
    let mut best: Option<(f64, usize, f64, LowRankState)> = None;
    for &ridge in &cfg.reg_grid {
        let linear = fit_linear_at(&train, &val, ridge);
        for &rank in &cfg.rank_grid {
            let rank = rank.min(train.j).min(dx1);
            let (state, _) = fit_lowrank_at(&train, rank, ridge, &linear);
            let w = state.weight_rows();
            let val_loss =
                mean_log_loss((0..val.n).map(|i| linear_logit(&val, i, &state.baseline, &w)), &val.y);
            if best.as_ref().is_none_or(|b| val_loss < b.0) {
                best = Some((val_loss, rank, ridge, state));
            }
        }
    }
    let (val_loss, rank, ridge, state) = best.expect("nonempty grids");
    let to_rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
    };
    let mut model = WeightModel::new(
        "lowrank",
        &train,
        ModelParams::LowRank { u: to_rows(&state.u), v: to_rows(&state.v) },
        dx1 + rank * (train.j + dx1),
    );
    model.baseline = Some(state.baseline);
    model.val_loss = val_loss;
    model.select("rank", rank);
    model.select("ridge", ridge);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::{ContextVector, LoggedRecord};
    use crate::models::testutil::tiny;

    #[test]
    fn full_rank_matches_linear_objective() {
        let b = tiny(3);
        let train = FitData::new(&b.train);
        let val = FitData::new(&b.val);
        let ridge = 1e-4;
        let linear = fit_linear_at(&train, &val, ridge);
        let full = train.j.min(train.dx1());
        let (state, _) = fit_lowrank_at(&train, full, ridge, &linear);
        let lin_nll = mean_log_loss((0..train.n).map(|i| linear_logit(&train, i, &linear.baseline, &linear.w)), &train.y);
        let w = state.weight_rows();
        let lr_nll = mean_log_loss((0..train.n).map(|i| linear_logit(&train, i, &state.baseline, &w)), &train.y);
        assert!((lin_nll - lr_nll).abs() < 1e-3, "{lin_nll} vs {lr_nll}");
    }

    #[test]
    fn zero_weight_start_is_pooled_at_zero() {
        // the bilinear design with W = 0 scores every decision identically
        let b = tiny(4);
        let train = FitData::new(&b.train);
        let baseline = vec![0.0; train.dx1()];
        let w = vec![vec![0.0; train.dx1()]; train.j];
        assert!((0..train.n).all(|i| linear_logit(&train, i, &baseline, &w) == 0.0));
    }

    /// Logged data whose true weight is exactly linear, `w*(x) = A x_sig`.
    fn linear_truth_dataset(n: usize, seed: u64) -> (crate::LoggedDataset, crate::LoggedDataset, Vec<(ContextVector, Vec<f64>)>) {
        use crate::benchgen::{draw_library, sample_contexts, BenchConfig};
        use crate::rng::stream;
        use rand::Rng;
        let cfg = BenchConfig { d_sig: 2, d_nuis: 0, j: 3, m: 20, seed, ..BenchConfig::panel_a(seed) };
        let lib = draw_library(&cfg).unwrap();
        let a = [[1.5, -0.5], [0.0, 1.0], [-1.0, 0.5]];
        let w_of = |x: &ContextVector| -> Vec<f64> {
            a.iter().map(|row| row[0] * x.signal()[0] + row[1] * x.signal()[1]).collect()
        };
        let mut rng = stream(seed, "lin/outcome");
        let make = |xs: Vec<ContextVector>, rng: &mut crate::rng::StreamRng| -> crate::LoggedDataset {
            let records = xs
                .into_iter()
                .enumerate()
                .map(|(i, x)| {
                    let d = i % lib.len();
                    let p = crate::sigmoid(crate::dot(&w_of(&x), lib.factor(d)));
                    let outcome = u8::from(rng.random::<f64>() < p);
                    LoggedRecord { context: x, decision_index: d, outcome }
                })
                .collect();
            crate::LoggedDataset { records, library: lib.clone() }
        };
        let train = make(sample_contexts(&cfg, "lin/train", n), &mut rng);
        let val = make(sample_contexts(&cfg, "lin/val", 1000), &mut rng);
        let eval = sample_contexts(&cfg, "lin/eval", 2000).into_iter().map(|x| {
            let w = w_of(&x);
            (x, w)
        }).collect();
        (train, val, eval)
    }

    #[test]
    fn linear_truth_error_shrinks_with_n() {
        let mse = |n: usize| -> f64 {
            let mut total = 0.0;
            for seed in 0..3 {
                let (train, val, eval) = linear_truth_dataset(n, seed);
                let m = fit_linear_contextual(&train, &val, &FitConfig::default()).unwrap();
                total += eval
                    .iter()
                    .map(|(x, w)| m.predict_w(x).iter().zip(w).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                    .sum::<f64>()
                    / eval.len() as f64;
            }
            total / 3.0
        };
        let small = mse(2000);
        let large = mse(8000);
        assert!(large < 0.5 * small, "n=2k {small}, n=8k {large}");
    }
}
