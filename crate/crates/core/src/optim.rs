//! Full-batch Adam with gradient-norm clipping and validation early stopping.

/// A differentiable training objective with a held-out criterion.
pub trait Objective {
    fn n_params(&self) -> usize;
    /// Training objective (penalised); writes the gradient into `grad`.
    fn loss_grad(&self, params: &[f64], grad: &mut [f64]) -> f64;
    /// Validation criterion used for early stopping and model selection.
    fn val_loss(&self, params: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1e3,
            max_epochs: 3000,
            patience: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub params: Vec<f64>,
    pub best_val: f64,
    pub initial_val: f64,
    pub best_epoch: usize,
    pub epochs: usize,
}

/// Run Adam from `init`. Returns `None` if the loss or gradient goes non-finite.
pub fn train<O: Objective>(obj: &O, init: Vec<f64>, cfg: &AdamConfig) -> Option<TrainOutcome> {
    let n = obj.n_params();
    let mut params = init;
    let mut grad = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let initial_val = obj.val_loss(&params);
    if !initial_val.is_finite() {
        return None;
    }
    let mut best = (initial_val, params.clone(), 0usize);
    let mut since_best = 0;
    let mut epochs = 0;
    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        let loss = obj.loss_grad(&params, &mut grad);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let clip = if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
        let bc1 = 1.0 - cfg.beta1.powi(epoch as i32);
        let bc2 = 1.0 - cfg.beta2.powi(epoch as i32);
        for i in 0..n {
            let g = grad[i] * clip;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            params[i] -= cfg.step_size * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
        }
        let val = obj.val_loss(&params);
        if !val.is_finite() {
            return None;
        }
        if val < best.0 {
            best = (val, params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Some(TrainOutcome { params: best.1, best_val: best.0, initial_val, best_epoch: best.2, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;
    impl Objective for Quadratic {
        fn n_params(&self) -> usize {
            2
        }
        fn loss_grad(&self, p: &[f64], g: &mut [f64]) -> f64 {
            g[0] = 2.0 * (p[0] - 1.0);
            g[1] = 2.0 * (p[1] + 2.0);
            (p[0] - 1.0).powi(2) + (p[1] + 2.0).powi(2)
        }
        fn val_loss(&self, p: &[f64]) -> f64 {
            (p[0] - 1.0).powi(2) + (p[1] + 2.0).powi(2)
        }
    }

    #[test]
    fn converges_on_quadratic_and_never_worsens_validation() {
        let out = train(&Quadratic, vec![0.0, 0.0], &AdamConfig::default()).unwrap();
        assert!((out.params[0] - 1.0).abs() < 1e-2);
        assert!((out.params[1] + 2.0).abs() < 1e-2);
        assert!(out.best_val <= out.initial_val);
    }
}
