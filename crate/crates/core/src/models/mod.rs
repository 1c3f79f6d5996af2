//! Estimators mapping logged data to a decision-weight model.
//!
//! Every estimator consumes the same fitting and validation splits and the
//! same Bernoulli log-loss on `σ(b(x) + w(x)ᵀz_d)`. Only the weight map
//! `x ↦ w(x)` is exposed for decisions; the context-only baseline `b(x)` is
//! kept for validation scoring and persistence.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::benchgen::{affine, combine, ContextVector, LoggedDataset, Truth};
use crate::error::{Error, Result};
use crate::{dot, softmax_in_place};

mod align;
mod cluster;
mod contextual;
mod em;
mod hard_routed;
mod mlp;
pub(crate) mod oracle_gate;
pub mod otss;
mod pooled;

pub use align::{align_experts, Alignment};
pub use cluster::{fit_cluster_then_fit, kmeans, KMeansFit};
pub use contextual::{fit_linear_contextual, fit_lowrank_contextual};
pub use em::{fit_em_mixture, run_em, EmRun};
pub use hard_routed::fit_hard_routed;
pub use mlp::{fit_mlp_contextual, MlpObjective};
pub use oracle_gate::fit_oracle_gate_soft;
pub use otss::{fit_otss, OtssObjective};
pub use pooled::{fit_pooled, PooledSolution};

/// Ridge floor on baseline coefficients; keeps degenerate labels finite.
pub(crate) const BASELINE_FLOOR: f64 = 1e-8;
pub(crate) const NEWTON_ITERS: usize = 100;

/// Dense per-record views of a logged dataset.
#[derive(Debug, Clone)]
pub(crate) struct FitData {
    pub n: usize,
    pub d_x: usize,
    pub j: usize,
    /// `(1, x_full)` rows.
    pub xt: Vec<f64>,
    /// Factor vector of the logged decision.
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

impl FitData {
    pub fn new(ds: &LoggedDataset) -> Self {
        let n = ds.len();
        let d_x = ds.d_x();
        let j = ds.j();
        let mut xt = Vec::with_capacity(n * (d_x + 1));
        let mut z = Vec::with_capacity(n * j);
        for (i, r) in ds.records.iter().enumerate() {
            xt.push(1.0);
            xt.extend_from_slice(r.context.full());
            z.extend_from_slice(ds.factor(i));
        }
        Self { n, d_x, j, xt, z, y: ds.outcomes() }
    }

    pub fn dx1(&self) -> usize {
        self.d_x + 1
    }

    pub fn xrow(&self, i: usize) -> &[f64] {
        &self.xt[i * (self.d_x + 1)..(i + 1) * (self.d_x + 1)]
    }

    pub fn zrow(&self, i: usize) -> &[f64] {
        &self.z[i * self.j..(i + 1) * self.j]
    }

    /// Raw context (without the leading 1).
    pub fn context(&self, i: usize) -> &[f64] {
        &self.xrow(i)[1..]
    }

    pub fn subset(&self, idx: &[usize]) -> FitData {
        let mut out = FitData {
            n: idx.len(),
            d_x: self.d_x,
            j: self.j,
            xt: Vec::with_capacity(idx.len() * self.dx1()),
            z: Vec::with_capacity(idx.len() * self.j),
            y: Vec::with_capacity(idx.len()),
        };
        for &i in idx {
            out.xt.extend_from_slice(self.xrow(i));
            out.z.extend_from_slice(self.zrow(i));
            out.y.push(self.y[i]);
        }
        out
    }

    /// Design `[(1, x) | z]`, the pooled outcome model.
    pub fn pooled_design(&self) -> DMatrix<f64> {
        let p = self.dx1() + self.j;
        DMatrix::from_fn(self.n, p, |i, c| {
            if c < self.dx1() {
                self.xrow(i)[c]
            } else {
                self.zrow(i)[c - self.dx1()]
            }
        })
    }
}

/// Penalty vector: floor on the first `n_baseline` entries, `ridge` on the rest.
pub(crate) fn penalty(n_baseline: usize, n_total: usize, ridge: f64) -> Vec<f64> {
    (0..n_total).map(|i| if i < n_baseline { BASELINE_FLOOR } else { ridge }).collect()
}

/// Softmax gate features over a context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GateFeatures {
    /// `(1, x)`.
    #[default]
    Affine,
    /// `(1, x, x²)` elementwise.
    Quadratic,
}

impl GateFeatures {
    pub fn dim(self, d_x: usize) -> usize {
        match self {
            GateFeatures::Affine => d_x + 1,
            GateFeatures::Quadratic => 2 * d_x + 1,
        }
    }

    pub fn build(self, x: &[f64]) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.dim(x.len()));
        f.push(1.0);
        f.extend_from_slice(x);
        if self == GateFeatures::Quadratic {
            f.extend(x.iter().map(|v| v * v));
        }
        f
    }
}

fn softmax_rows(rows: &[Vec<f64>], features: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = rows.iter().map(|r| dot(r, features)).collect();
    softmax_in_place(&mut a);
    a
}

/// Fitted parameters of each model class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum ModelParams {
    /// `w(x) = β`.
    Constant { weight: Vec<f64> },
    /// `w(x) = W (1, x)`, rows of `W` indexed by factor.
    Linear { coef: Vec<Vec<f64>> },
    /// `w(x) = U Vᵀ(1, x)`; `u` is `J × r`, `v` is `(D+1) × r`.
    LowRank { u: Vec<Vec<f64>>, v: Vec<Vec<f64>> },
    /// `w(x) = W₂ tanh(W₁x + b₁) + b₂`.
    Mlp { w1: Vec<Vec<f64>>, b1: Vec<f64>, w2: Vec<Vec<f64>>, b2: Vec<f64> },
    /// Softmax gate over context features, interpolating an expert bank.
    SoftGate { gate: Vec<Vec<f64>>, experts: Vec<Vec<f64>>, features: GateFeatures },
    /// Post-hoc multinomial gate over `(1, x)`; argmax routing when `hard`.
    GatedBank { gate: Vec<Vec<f64>>, experts: Vec<Vec<f64>>, hard: bool },
    /// Route to the nearest centroid in raw context space.
    NearestCentroid { centroids: Vec<Vec<f64>>, experts: Vec<Vec<f64>> },
    /// Experts combined through the known true gate.
    OracleGate { truth: Truth, experts: Vec<Vec<f64>> },
}

impl ModelParams {
    /// Mixture weights, for the gated classes.
    pub fn gate(&self, x: &ContextVector) -> Option<Vec<f64>> {
        match self {
            ModelParams::SoftGate { gate, features, .. } => {
                Some(softmax_rows(gate, &features.build(x.full())))
            }
            ModelParams::GatedBank { gate, hard, .. } => {
                let a = softmax_rows(gate, &GateFeatures::Affine.build(x.full()));
                if *hard {
                    let best = first_argmax(&a);
                    let mut one_hot = vec![0.0; a.len()];
                    one_hot[best] = 1.0;
                    Some(one_hot)
                } else {
                    Some(a)
                }
            }
            ModelParams::OracleGate { truth, .. } => Some(truth.gate(x)),
            _ => None,
        }
    }

    pub fn predict_w(&self, x: &ContextVector) -> Vec<f64> {
        let xf = x.full();
        match self {
            ModelParams::Constant { weight } => weight.clone(),
            ModelParams::Linear { coef } => coef.iter().map(|row| affine(row, xf)).collect(),
            ModelParams::LowRank { u, v } => {
                let rank = u.first().map_or(0, |r| r.len());
                let h: Vec<f64> = (0..rank)
                    .map(|r| v[0][r] + xf.iter().enumerate().map(|(d, xv)| v[d + 1][r] * xv).sum::<f64>())
                    .collect();
                u.iter().map(|row| dot(row, &h)).collect()
            }
            ModelParams::Mlp { w1, b1, w2, b2 } => {
                let h: Vec<f64> = w1.iter().zip(b1).map(|(row, b)| (dot(row, xf) + b).tanh()).collect();
                w2.iter().zip(b2).map(|(row, b)| dot(row, &h) + b).collect()
            }
            ModelParams::SoftGate { experts, .. }
            | ModelParams::GatedBank { experts, .. }
            | ModelParams::OracleGate { experts, .. } => {
                combine(&self.gate(x).expect("gated class"), experts)
            }
            ModelParams::NearestCentroid { centroids, experts } => {
                experts[nearest_centroid(centroids, xf)].clone()
            }
        }
    }
}

pub(crate) fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn nearest_centroid(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, centroid) in centroids.iter().enumerate() {
        let d: f64 = centroid.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// Estimators of the comparison suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pooled,
    Linear,
    #[serde(rename = "lowrank")]
    LowRank,
    Mlp,
    Cluster,
    Em,
    HardRouted,
    Otss,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Pooled,
        Method::Linear,
        Method::LowRank,
        Method::Mlp,
        Method::Cluster,
        Method::Em,
        Method::HardRouted,
        Method::Otss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pooled => "pooled",
            Method::Linear => "linear",
            Method::LowRank => "lowrank",
            Method::Mlp => "mlp",
            Method::Cluster => "cluster",
            Method::Em => "em",
            Method::HardRouted => "hard_routed",
            Method::Otss => "otss",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

/// Training protocol shared by the estimators. Fields irrelevant to a given
/// method are ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub step_size: f64,
    pub reg_grid: Vec<f64>,
    /// Component-count grid (cluster-then-fit, EM); method default when absent.
    pub k_grid: Option<Vec<usize>>,
    pub rank_grid: Vec<usize>,
    /// Expert count for the soft-segmentation model and hard routing.
    pub k: usize,
    pub hidden: usize,
    pub gate_features: GateFeatures,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_epochs: 3000,
            patience: 100,
            step_size: 0.05,
            reg_grid: vec![1e-4, 1e-3, 1e-2],
            k_grid: None,
            rank_grid: vec![1, 2, 3],
            k: 2,
            hidden: 32,
            gate_features: GateFeatures::Affine,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn adam(&self) -> crate::optim::AdamConfig {
        crate::optim::AdamConfig {
            step_size: self.step_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            ..Default::default()
        }
    }

    pub fn k_grid_or(&self, default: &[usize]) -> Vec<usize> {
        self.k_grid.clone().unwrap_or_else(|| default.to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.restarts >= 1
            && self.max_epochs >= 1
            && self.patience >= 1
            && self.step_size > 0.0
            && !self.reg_grid.is_empty()
            && self.reg_grid.iter().all(|r| *r >= 0.0 && r.is_finite())
            && self.rank_grid.iter().all(|r| *r >= 1)
            && self.k >= 1
            && self.hidden >= 1
            && self.k_grid.as_ref().is_none_or(|g| !g.is_empty() && g.iter().all(|k| *k >= 1));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid fit configuration {self:?}")))
        }
    }
}

/// A fitted model: the artifact handed to the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightModel {
    pub format: String,
    pub name: String,
    pub d_x: usize,
    pub j: usize,
    pub params: ModelParams,
    /// Affine context-only baseline over `(1, x)`, when the class has a shared one.
    pub baseline: Option<Vec<f64>>,
    pub param_count: usize,
    pub fit_seconds: f64,
    pub selected: BTreeMap<String, String>,
    /// Validation criterion of the selected configuration.
    pub val_loss: f64,
    #[serde(default)]
    pub notes: Vec<String>,
}

pub const MODEL_FORMAT: &str = "softseg-model/1";

impl WeightModel {
    pub(crate) fn new(name: &str, data: &FitData, params: ModelParams, param_count: usize) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            name: name.to_string(),
            d_x: data.d_x,
            j: data.j,
            params,
            baseline: None,
            param_count,
            fit_seconds: 0.0,
            selected: BTreeMap::new(),
            val_loss: f64::NAN,
            notes: Vec::new(),
        }
    }

    pub fn predict_w(&self, x: &ContextVector) -> Vec<f64> {
        self.params.predict_w(x)
    }

    pub fn gate(&self, x: &ContextVector) -> Option<Vec<f64>> {
        self.params.gate(x)
    }

    pub(crate) fn select(&mut self, key: &str, value: impl ToString) {
        self.selected.insert(key.to_string(), value.to_string());
    }

    /// `key=value;...` rendering of the selected hyperparameters.
    pub fn selected_string(&self) -> String {
        self.selected.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let m: Self = crate::io::load(path)?;
        if m.format != MODEL_FORMAT {
            return Err(Error::Parse(format!("unknown model format {:?}", m.format)));
        }
        Ok(m)
    }
}

/// Fit `method` on the given splits, timing the whole selection protocol.
pub fn fit_method(
    method: Method,
    train: &LoggedDataset,
    val: &LoggedDataset,
    cfg: &FitConfig,
) -> Result<WeightModel> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidConfig("empty training or validation split".into()));
    }
    let start = Instant::now();
    let mut model = match method {
        Method::Pooled => fit_pooled(train, val, cfg)?,
        Method::Linear => fit_linear_contextual(train, val, cfg)?,
        Method::LowRank => fit_lowrank_contextual(train, val, cfg)?,
        Method::Mlp => fit_mlp_contextual(train, val, cfg)?,
        Method::Cluster => fit_cluster_then_fit(train, val, cfg)?,
        Method::Em => fit_em_mixture(train, val, cfg)?,
        Method::HardRouted => fit_hard_routed(train, val, cfg.k, cfg)?,
        Method::Otss => fit_otss(train, val, cfg.k, cfg)?,
    };
    model.fit_seconds = start.elapsed().as_secs_f64();
    Ok(model)
}

pub(crate) fn rows(data: &[f64], n_rows: usize) -> Vec<Vec<f64>> {
    let cols = if n_rows == 0 { 0 } else { data.len() / n_rows };
    data.chunks(cols.max(1)).take(n_rows).map(|c| c.to_vec()).collect()
}

/// Largest relative gap between the analytic gradient of a method's training
/// objective and central finite differences, over `coords` random coordinates
/// at a random parameter point. Only the gradient-trained classes (`otss`
/// with `k` experts, `mlp`) have one.
pub fn gradient_check(method: Method, train: &LoggedDataset, val: &LoggedDataset, k: usize, coords: usize, seed: u64) -> Result<f64> {
    use rand::Rng;

    use crate::optim::Objective;

    fn check<O: Objective>(obj: &O, coords: usize, seed: u64) -> f64 {
        let mut rng = crate::rng::stream(seed, "gradient_check");
        let params: Vec<f64> = (0..obj.n_params()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut grad = vec![0.0; params.len()];
        obj.loss_grad(&params, &mut grad);
        let mut scratch = vec![0.0; params.len()];
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..coords {
            let idx = rng.random_range(0..params.len());
            let mut p = params.clone();
            p[idx] += h;
            let up = obj.loss_grad(&p, &mut scratch);
            p[idx] -= 2.0 * h;
            let down = obj.loss_grad(&p, &mut scratch);
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - grad[idx]).abs() / fd.abs().max(grad[idx].abs()).max(1e-6));
        }
        worst
    }

    let train = FitData::new(train);
    let val = FitData::new(val);
    match method {
        Method::Otss => Ok(check(&OtssObjective::new(&train, &val, k, GateFeatures::Affine, 1e-3), coords, seed)),
        Method::Mlp => Ok(check(&MlpObjective::new(&train, &val, FitConfig::default().hidden, 1e-3), coords, seed)),
        other => Err(Error::Unsupported(format!("{other} has no gradient-trained objective"))),
    }
}
