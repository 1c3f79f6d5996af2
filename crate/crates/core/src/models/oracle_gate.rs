//! Soft-segmentation fit with the true gate plugged in: a plain logistic
//! regression on `(1, x, α*₁(x)z, …, α*_K(x)z)`.

use log::warn;
use nalgebra::DMatrix;

use crate::benchgen::{LoggedDataset, Truth};
use crate::error::Result;
use crate::logistic::{mean_log_loss, LogisticProblem};

use super::{rows, FitConfig, FitData, ModelParams, WeightModel, NEWTON_ITERS};

/// Ridge applied only when the augmented design is rank-deficient.
pub(crate) const SINGULAR_FLOOR: f64 = 1e-8;

pub(crate) fn oracle_design(ds: &LoggedDataset, truth: &Truth) -> DMatrix<f64> {
    let k = truth.n_experts();
    let dx1 = ds.d_x() + 1;
    let j = ds.j();
    let mut m = DMatrix::zeros(ds.len(), dx1 + k * j);
    for (i, r) in ds.records.iter().enumerate() {
        m[(i, 0)] = 1.0;
        for (c, v) in r.context.full().iter().enumerate() {
            m[(i, c + 1)] = *v;
        }
        let alpha = truth.gate(&r.context);
        let z = ds.factor(i);
        for (a, ak) in alpha.iter().enumerate() {
            for (jj, zj) in z.iter().enumerate() {
                m[(i, dx1 + a * j + jj)] = ak * zj;
            }
        }
    }
    m
}

/// Fit on explicit (possibly fractional) targets; returns the coefficients
/// and whether the singular-design floor was needed.
pub(crate) fn fit_oracle_coef(design: &DMatrix<f64>, y: &[f64]) -> (Vec<f64>, bool) {
    let p = design.ncols();
    let singular = design.tr_mul(design).cholesky().is_none();
    let pen = vec![if singular { SINGULAR_FLOOR } else { 0.0 }; p];
    let fit = LogisticProblem::new(design, y, &pen).fit(None, NEWTON_ITERS);
    (fit.coef, singular)
}

pub fn fit_oracle_gate_soft(train: &LoggedDataset, val: &LoggedDataset, truth: &Truth, _cfg: &FitConfig) -> Result<WeightModel> {
    let data = FitData::new(train);
    let design = oracle_design(train, truth);
    let (coef, singular) = fit_oracle_coef(&design, &data.y);
    if singular {
        warn!("oracle-gate design is singular; ridge floor {SINGULAR_FLOOR} applied");
    }
    let dx1 = data.dx1();
    let k = truth.n_experts();
    let experts = rows(&coef[dx1..], k);
    let val_design = oracle_design(val, truth);
    let eta = &val_design * nalgebra::DVector::from_column_slice(&coef);
    let val_y = val.outcomes();
    let mut model = WeightModel::new(
        "oracle_gate",
        &data,
        ModelParams::OracleGate { truth: truth.clone(), experts },
        coef.len(),
    );
    model.baseline = Some(coef[..dx1].to_vec());
    model.val_loss = mean_log_loss(eta.iter().copied(), &val_y);
    if singular {
        model.notes.push(format!("singular_design_floor={SINGULAR_FLOOR:e}"));
    }
    Ok(model)
}
