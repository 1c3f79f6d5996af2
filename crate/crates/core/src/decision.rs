//! Finite decision libraries, linear scoring and exact regret.

use serde::{Deserialize, Serialize};

use crate::dot;
use crate::error::{check_dim, Error, Result};

/// An enumerable feasible set: `M` factor vectors of common length `J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionLibrary {
    factors: Vec<Vec<f64>>,
    dim: usize,
}

impl DecisionLibrary {
    pub fn new(factors: Vec<Vec<f64>>) -> Result<Self> {
        let first = factors.first().ok_or(Error::EmptyLibrary)?;
        let dim = first.len();
        for f in &factors {
            check_dim(dim, f.len())?;
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("non-finite factor value".into()));
            }
        }
        Ok(Self { factors, dim })
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Factor dimension `J`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn factor(&self, index: usize) -> &[f64] {
        &self.factors[index]
    }

    pub fn factors(&self) -> &[Vec<f64>] {
        &self.factors
    }

    /// Scores of every decision under `w`.
    pub fn scores(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, w.len())?;
        Ok(self.factors.iter().map(|z| dot(w, z)).collect())
    }
}

/// `wᵀz`.
pub fn score(w: &[f64], z: &[f64]) -> Result<f64> {
    check_dim(w.len(), z.len())?;
    Ok(dot(w, z))
}

/// First index attaining the maximum; lowest index wins ties.
fn first_argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Decision maximising `wᵀz` over the library, lowest index on ties.
pub fn argmax_decision(w: &[f64], lib: &DecisionLibrary) -> Result<usize> {
    if lib.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    Ok(first_argmax(&lib.scores(w)?))
}

/// Outcome of replacing `w*` by `ŵ` for one context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub oracle_index: usize,
    pub chosen_index: usize,
    /// True-score gap between the oracle and the chosen decision.
    pub regret: f64,
    /// Oracle score minus the best other true score; 0 when the optimum is not unique.
    pub margin_gamma: f64,
    /// `max_d |(ŵ − w*)ᵀ z_d|`.
    pub perturb_delta: f64,
}

impl RegretRecord {
    /// `R ≤ 2δ·1{γ ≤ 2δ}`.
    pub fn satisfies_transfer_bound(&self) -> bool {
        let two_delta = 2.0 * self.perturb_delta;
        let bound = if self.margin_gamma <= two_delta { two_delta } else { 0.0 };
        self.regret <= bound
    }
}

pub fn regret(w_star: &[f64], w_hat: &[f64], lib: &DecisionLibrary) -> Result<RegretRecord> {
    if lib.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    check_dim(w_star.len(), w_hat.len())?;
    let true_scores = lib.scores(w_star)?;
    let est_scores = lib.scores(w_hat)?;
    let oracle_index = first_argmax(&true_scores);
    let chosen_index = first_argmax(&est_scores);
    let best = true_scores[oracle_index];
    let runner_up = true_scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != oracle_index)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let margin_gamma = if runner_up == f64::NEG_INFINITY {
        // single decision: nothing to confuse it with
        f64::INFINITY
    } else if runner_up == best {
        0.0
    } else {
        best - runner_up
    };
    // The perturbation is measured directly as ŵᵀz − w*ᵀz rather than
    // (ŵ − w*)ᵀz so that it bounds the score errors used by the argmax.
    let perturb_delta = true_scores
        .iter()
        .zip(&est_scores)
        .map(|(t, e)| (e - t).abs())
        .fold(0.0, f64::max);
    Ok(RegretRecord {
        oracle_index,
        chosen_index,
        regret: best - true_scores[chosen_index],
        margin_gamma,
        perturb_delta,
    })
}
