//! One shared weight vector for every context.

use crate::benchgen::LoggedDataset;
use crate::error::Result;
use crate::logistic::{mean_log_loss, LogisticFit, LogisticProblem};
use crate::dot;

use super::{penalty, FitConfig, FitData, ModelParams, WeightModel, NEWTON_ITERS};

/// Pooled logistic fit on `[(1, x) | z]`.
#[derive(Debug, Clone)]
pub struct PooledSolution {
    pub baseline: Vec<f64>,
    pub beta: Vec<f64>,
    pub ridge: f64,
    pub val_loss: f64,
}

pub(crate) fn fit_pooled_coef(data: &FitData, ridge: f64, weights: Option<&[f64]>, init: Option<&[f64]>) -> LogisticFit {
    let x = data.pooled_design();
    let pen = penalty(data.dx1(), data.dx1() + data.j, ridge);
    let problem = LogisticProblem { x: &x, y: &data.y, weights, penalty: &pen, norm: data.n as f64 };
    problem.fit(init, NEWTON_ITERS)
}

/// Per-record logit of the pooled outcome model.
pub(crate) fn pooled_logit(data: &FitData, i: usize, coef: &[f64]) -> f64 {
    let dx1 = data.dx1();
    dot(&coef[..dx1], data.xrow(i)) + dot(&coef[dx1..], data.zrow(i))
}

pub(crate) fn pooled_val_loss(val: &FitData, coef: &[f64]) -> f64 {
    mean_log_loss((0..val.n).map(|i| pooled_logit(val, i, coef)), &val.y)
}

/// Ridge strength chosen by validation log-loss.
pub(crate) fn pooled_solution(train: &FitData, val: &FitData, reg_grid: &[f64]) -> PooledSolution {
    let mut best: Option<PooledSolution> = None;
    for &ridge in reg_grid {
        let fit = fit_pooled_coef(train, ridge, None, None);
        let val_loss = pooled_val_loss(val, &fit.coef);
        if best.as_ref().is_none_or(|b| val_loss < b.val_loss) {
            let dx1 = train.dx1();
            best = Some(PooledSolution {
                baseline: fit.coef[..dx1].to_vec(),
                beta: fit.coef[dx1..].to_vec(),
                ridge,
                val_loss,
            });
        }
    }
    best.expect("nonempty ridge grid")
}

pub fn fit_pooled(train: &LoggedDataset, val: &LoggedDataset, cfg: &FitConfig) -> Result<WeightModel> {
    let train = FitData::new(train);
    let val = FitData::new(val);
    let sol = pooled_solution(&train, &val, &cfg.reg_grid);
    let mut model = WeightModel::new(
        "pooled",
        &train,
        ModelParams::Constant { weight: sol.beta.clone() },
        train.dx1() + train.j,
    );
    model.baseline = Some(sol.baseline.clone());
    model.val_loss = sol.val_loss;
    model.select("ridge", sol.ridge);
    Ok(model)
}
