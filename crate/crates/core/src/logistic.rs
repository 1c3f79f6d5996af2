//! Ridge-penalised (optionally weighted) logistic regression by damped Newton.
//!
//! The objective is
//!
//! ```text
//! (1/norm) Σ_i w_i [softplus(η_i) − y_i η_i] + Σ_j penalty_j θ_j²,   η = Xθ
//! ```
//!
//! with `y_i ∈ [0, 1]` (soft targets allowed). Each step solves the Newton
//! system and backtracks until the Armijo condition holds, so the objective
//! never increases.

use nalgebra::{DMatrix, DVector};

use crate::linalg::solve_spd;
use crate::{sigmoid, softplus};

pub struct LogisticProblem<'a> {
    /// `n × p` design.
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub weights: Option<&'a [f64]>,
    pub penalty: &'a [f64],
    /// Normaliser of the data term; usually `n`.
    pub norm: f64,
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticProblem<'_> {
    pub fn new<'a>(x: &'a DMatrix<f64>, y: &'a [f64], penalty: &'a [f64]) -> LogisticProblem<'a> {
        LogisticProblem { x, y, weights: None, penalty, norm: x.nrows() as f64 }
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    pub fn objective(&self, coef: &DVector<f64>) -> f64 {
        let eta = self.x * coef;
        let data: f64 = eta
            .iter()
            .enumerate()
            .map(|(i, &e)| self.weight(i) * (softplus(e) - self.y[i] * e))
            .sum();
        let pen: f64 = coef.iter().zip(self.penalty).map(|(c, p)| p * c * c).sum();
        data / self.norm + pen
    }

    /// Newton iterations from `init` (zeros when absent).
    pub fn fit(&self, init: Option<&[f64]>, max_iter: usize) -> LogisticFit {
        let p = self.x.ncols();
        let n = self.x.nrows();
        let mut coef = match init {
            Some(c) => DVector::from_column_slice(c),
            None => DVector::zeros(p),
        };
        let mut obj = self.objective(&coef);
        let mut converged = false;
        let mut iterations = 0;
        let mut scaled = DMatrix::zeros(n, p);
        for it in 0..max_iter {
            iterations = it + 1;
            let eta = self.x * &coef;
            let mut resid = DVector::zeros(n);
            for i in 0..n {
                let pi = sigmoid(eta[i]);
                let wi = self.weight(i) / self.norm;
                resid[i] = wi * (pi - self.y[i]);
                let h = (wi * pi * (1.0 - pi)).sqrt();
                for j in 0..p {
                    scaled[(i, j)] = self.x[(i, j)] * h;
                }
            }
            let mut grad = self.x.tr_mul(&resid);
            let mut hess = scaled.tr_mul(&scaled);
            for j in 0..p {
                grad[j] += 2.0 * self.penalty[j] * coef[j];
                hess[(j, j)] += 2.0 * self.penalty[j];
            }
            let Some(step) = solve_spd(&hess, &grad) else { break };
            let slope = -grad.dot(&step);
            if slope > -1e-18 {
                converged = true;
                break;
            }
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let trial = &coef - t * &step;
                let trial_obj = self.objective(&trial);
                if trial_obj.is_finite() && trial_obj <= obj + 1e-4 * t * slope {
                    accepted = Some((trial, trial_obj));
                    break;
                }
                t *= 0.5;
            }
            let Some((next, next_obj)) = accepted else {
                converged = true;
                break;
            };
            let max_change = (t * &step).amax();
            let gain = obj - next_obj;
            coef = next;
            obj = next_obj;
            if max_change < 1e-10 || gain <= 1e-15 * (1.0 + obj.abs()) {
                converged = true;
                break;
            }
        }
        LogisticFit { coef: coef.as_slice().to_vec(), objective: obj, iterations, converged }
    }
}

/// Mean log-loss of predicted probabilities against binary outcomes.
pub fn mean_log_loss(eta: impl IntoIterator<Item = f64>, y: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (e, yi) in eta.into_iter().zip(y) {
        total += softplus(e) - yi * e;
        n += 1;
    }
    total / n as f64
}

/// Multinomial (softmax) regression with soft targets and a ridge penalty,
/// fitted by damped Newton on the full `K·p` parameter vector.
///
/// Returns the `K × p` coefficient matrix, row-major.
pub fn fit_softmax(x: &DMatrix<f64>, targets: &[Vec<f64>], ridge: f64, max_iter: usize) -> Vec<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let k = targets[0].len();
    let dim = k * p;
    let norm = n as f64;
    let probs_at = |theta: &DVector<f64>| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mut s: Vec<f64> = (0..k)
                    .map(|c| (0..p).map(|j| theta[c * p + j] * x[(i, j)]).sum())
                    .collect();
                crate::softmax_in_place(&mut s);
                s
            })
            .collect()
    };
    let objective = |theta: &DVector<f64>| -> f64 {
        let probs = probs_at(theta);
        let mut data = 0.0;
        for i in 0..n {
            for c in 0..k {
                if targets[i][c] > 0.0 {
                    data -= targets[i][c] * probs[i][c].max(1e-300).ln();
                }
            }
        }
        data / norm + ridge * theta.norm_squared()
    };
    let mut theta = DVector::zeros(dim);
    if k == 1 {
        return theta.as_slice().to_vec();
    }
    let mut obj = objective(&theta);
    for _ in 0..max_iter {
        let probs = probs_at(&theta);
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        for c in 0..k {
            let resid = DVector::from_fn(n, |i, _| (probs[i][c] - targets[i][c]) / norm);
            grad.rows_mut(c * p, p).copy_from(&x.tr_mul(&resid));
            for d in c..k {
                let w = DVector::from_fn(n, |i, _| (if c == d { probs[i][c] } else { 0.0 } - probs[i][c] * probs[i][d]) / norm);
                let mut xw = x.clone();
                for (i, mut row) in xw.row_iter_mut().enumerate() {
                    row *= w[i];
                }
                let block = x.tr_mul(&xw);
                hess.view_mut((c * p, d * p), (p, p)).copy_from(&block);
                if d != c {
                    hess.view_mut((d * p, c * p), (p, p)).copy_from(&block.transpose());
                }
            }
        }
        for j in 0..dim {
            grad[j] += 2.0 * ridge * theta[j];
            hess[(j, j)] += 2.0 * ridge;
        }
        let Some(step) = solve_spd(&hess, &grad) else { break };
        let slope = -grad.dot(&step);
        if slope > -1e-18 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &theta - t * &step;
            let trial_obj = objective(&trial);
            if trial_obj.is_finite() && trial_obj <= obj + 1e-4 * t * slope {
                accepted = Some((trial, trial_obj));
                break;
            }
            t *= 0.5;
        }
        let Some((next, next_obj)) = accepted else { break };
        let gain = obj - next_obj;
        theta = next;
        obj = next_obj;
        if gain <= 1e-13 * (1.0 + obj.abs()) {
            break;
        }
    }
    theta.as_slice().to_vec()
}
