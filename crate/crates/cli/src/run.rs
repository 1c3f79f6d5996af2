//! Panel, sweep, theory and runtime runners.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use log::{info, warn};
use rayon::prelude::*;
use softseg::benchgen::generate_benchmark;
use softseg::eval::{paired_bootstrap, time_fit, BOOTSTRAP_RESAMPLES};
use softseg::models::fit_method;
use softseg::rng::child_seed;
use softseg::theory::{run_theory_suite, write_report, TheoryCheck, TheorySuiteConfig};
use softseg::{evaluate, Benchmark, BootstrapResult, Error, Family, Method, SeedSummary};

use crate::config::{ExperimentConfig, MethodSpec, SweepAxis};
use crate::output::{fmt_f64, fmt_opt, write_csv};

/// Outcome of one (seed, method) cell.
#[derive(Debug, Clone)]
pub struct RunRow {
    pub seed: u64,
    pub label: String,
    pub result: std::result::Result<SeedSummary, String>,
    pub fit_seconds: f64,
    /// Hard invariants broken by this cell.
    pub invariant_failures: Vec<String>,
}

impl RunRow {
    pub fn ok(&self) -> Option<&SeedSummary> {
        self.result.as_ref().ok()
    }
}

const SIMPLEX_TOL: f64 = 1e-12;

fn run_cell(bench: &Benchmark, spec: &MethodSpec, cfg: &ExperimentConfig, seed: u64, benchmark: &str) -> RunRow {
    let label = spec.label();
    let fit_cfg = match cfg.fit_config(spec, seed) {
        Ok(c) => c,
        Err(e) => {
            return RunRow { seed, label, result: Err(e.to_string()), fit_seconds: 0.0, invariant_failures: Vec::new() };
        }
    };
    let mut invariant_failures = Vec::new();
    let model = match fit_method(spec.method, &bench.train, &bench.val, &fit_cfg) {
        Ok(m) => m,
        Err(e) => {
            if matches!(e, Error::EmNotMonotone { .. }) {
                invariant_failures.push(format!("{label} seed {seed}: {e}"));
            }
            warn!("{benchmark}: {label} failed on seed {seed}: {e}");
            return RunRow { seed, label, result: Err(e.to_string()), fit_seconds: 0.0, invariant_failures };
        }
    };
    let eval = match evaluate(&model, &bench.eval, &bench.library) {
        Ok(e) => e,
        Err(e) => return RunRow { seed, label, result: Err(e.to_string()), fit_seconds: model.fit_seconds, invariant_failures },
    };
    for p in &bench.eval {
        if let Some(a) = model.gate(&p.context) {
            let total: f64 = a.iter().sum();
            if a.iter().any(|v| *v < 0.0 || !v.is_finite()) || (total - 1.0).abs() > SIMPLEX_TOL {
                invariant_failures.push(format!("{label} seed {seed}: gate off the simplex (sum {total})"));
                break;
            }
        }
    }
    if eval.transfer_violations > 0 {
        invariant_failures.push(format!("{label} seed {seed}: {} regret-transfer violations", eval.transfer_violations));
    }
    let mut summary = SeedSummary::new(benchmark, seed, &model, &eval);
    summary.method = label.clone();
    RunRow { seed, label, result: Ok(summary), fit_seconds: model.fit_seconds, invariant_failures }
}

/// Generate each seed's benchmark and fit every method; rows come back in
/// (seed, method) order whatever the completion order.
pub fn run_grid(cfg: &ExperimentConfig, benchmark: &str) -> Result<Vec<RunRow>> {
    let benches: Vec<Benchmark> = cfg
        .seeds
        .par_iter()
        .map(|&s| generate_benchmark(&cfg.bench_for_seed(s), cfg.family, cfg.mode))
        .collect::<softseg::Result<_>>()?;
    let cells: Vec<(usize, usize)> =
        (0..benches.len()).flat_map(|b| (0..cfg.methods.len()).map(move |m| (b, m))).collect();
    Ok(cells
        .par_iter()
        .map(|&(b, m)| {
            let row = run_cell(&benches[b], &cfg.methods[m], cfg, cfg.seeds[b], benchmark);
            info!("{benchmark}: seed {} {} done", row.seed, row.label);
            row
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub method: String,
    pub seeds_ok: usize,
    pub mean_regret: f64,
    pub sd_regret: f64,
    pub mean_mse: f64,
    pub sd_mse: f64,
    pub mean_match: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

pub fn aggregate(rows: &[RunRow], labels: &[String]) -> Vec<AggregateRow> {
    labels
        .iter()
        .map(|label| {
            let ok: Vec<&SeedSummary> = rows.iter().filter(|r| &r.label == label).filter_map(|r| r.ok()).collect();
            let (mean_regret, sd_regret) = mean_sd(&ok.iter().map(|s| s.mean_regret).collect::<Vec<_>>());
            let (mean_mse, sd_mse) = mean_sd(&ok.iter().map(|s| s.weight_mse).collect::<Vec<_>>());
            let (mean_match, _) = mean_sd(&ok.iter().map(|s| s.match_rate).collect::<Vec<_>>());
            AggregateRow { method: label.clone(), seeds_ok: ok.len(), mean_regret, sd_regret, mean_mse, sd_mse, mean_match }
        })
        .collect()
}

/// All ordered method pairs `(a, b)` with `a` listed before `b`, for regret and weight MSE,
/// over the seeds where both succeeded.
pub fn bootstrap_pairs(rows: &[RunRow], labels: &[String]) -> Vec<(String, BootstrapResult)> {
    let mut out = Vec::new();
    for metric in ["regret", "weight_mse"] {
        for (i, a) in labels.iter().enumerate() {
            for b in &labels[i + 1..] {
                let mut va = Vec::new();
                let mut vb = Vec::new();
                for ra in rows.iter().filter(|r| &r.label == a) {
                    let Some(sa) = ra.ok() else { continue };
                    let Some(sb) = rows.iter().find(|r| &r.label == b && r.seed == ra.seed).and_then(|r| r.ok()) else {
                        continue;
                    };
                    let pick = |s: &SeedSummary| if metric == "regret" { s.mean_regret } else { s.weight_mse };
                    va.push(pick(sa));
                    vb.push(pick(sb));
                }
                let seed = child_seed(0, &format!("{metric}/{a}/{b}"));
                if let Ok(r) = paired_bootstrap(&va, &vb, (a, b), BOOTSTRAP_RESAMPLES, seed) {
                    out.push((metric.to_string(), r));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct PanelOutcome {
    pub dir: PathBuf,
    pub rows: Vec<RunRow>,
    pub aggregate: Vec<AggregateRow>,
    pub bootstrap: Vec<(String, BootstrapResult)>,
    pub invariant_failures: Vec<String>,
}

impl PanelOutcome {
    pub fn aggregate_for(&self, label: &str) -> Option<&AggregateRow> {
        self.aggregate.iter().find(|a| a.method == label)
    }

    pub fn bootstrap_for(&self, metric: &str, a: &str, b: &str) -> Option<&BootstrapResult> {
        self.bootstrap.iter().find(|(m, r)| m == metric && r.method_a == a && r.method_b == b).map(|(_, r)| r)
    }
}

pub fn output_dir(out: &Path, cfg: &ExperimentConfig) -> PathBuf {
    out.join(&cfg.name).join(cfg.hash())
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok(())
}

fn write_seed_rows(path: &Path, rows: &[RunRow], benchmark: &str) -> Result<()> {
    let header = [
        "benchmark", "seed", "method", "status", "weight_mse", "mean_regret", "match_rate", "gate_entropy_eff",
        "transfer_violations", "selected_hypers",
    ];
    let records = rows.iter().map(|r| match &r.result {
        Ok(s) => vec![
            benchmark.to_string(),
            r.seed.to_string(),
            r.label.clone(),
            "ok".into(),
            fmt_f64(s.weight_mse),
            fmt_f64(s.mean_regret),
            fmt_f64(s.match_rate),
            fmt_opt(s.gate_entropy_eff),
            s.transfer_violations.to_string(),
            s.selected_hypers.clone(),
        ],
        Err(e) => vec![
            benchmark.to_string(),
            r.seed.to_string(),
            r.label.clone(),
            format!("error: {e}"),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ],
    });
    write_csv(path, &header, records)
}

fn write_timings(path: &Path, rows: &[RunRow], benchmark: &str) -> Result<()> {
    write_csv(
        path,
        &["benchmark", "seed", "method", "fit_seconds"],
        rows.iter().map(|r| vec![benchmark.to_string(), r.seed.to_string(), r.label.clone(), fmt_f64(r.fit_seconds)]),
    )
}

fn write_aggregate(path: &Path, agg: &[AggregateRow], benchmark: &str) -> Result<()> {
    write_csv(
        path,
        &["benchmark", "method", "seeds_ok", "mean_regret", "sd_regret", "mean_weight_mse", "sd_weight_mse", "mean_match_rate"],
        agg.iter().map(|a| {
            vec![
                benchmark.to_string(),
                a.method.clone(),
                a.seeds_ok.to_string(),
                fmt_f64(a.mean_regret),
                fmt_f64(a.sd_regret),
                fmt_f64(a.mean_mse),
                fmt_f64(a.sd_mse),
                fmt_f64(a.mean_match),
            ]
        }),
    )
}

fn write_bootstrap(path: &Path, boot: &[(String, BootstrapResult)], benchmark: &str) -> Result<()> {
    write_csv(
        path,
        &["benchmark", "metric", "method_a", "method_b", "mean_diff", "ci_lo", "ci_hi", "resamples"],
        boot.iter().map(|(m, r)| {
            vec![
                benchmark.to_string(),
                m.clone(),
                r.method_a.clone(),
                r.method_b.clone(),
                fmt_f64(r.mean_diff),
                fmt_f64(r.ci_lo),
                fmt_f64(r.ci_hi),
                r.resamples.to_string(),
            ]
        }),
    )
}

fn labels(cfg: &ExperimentConfig) -> Vec<String> {
    cfg.methods.iter().map(|m| m.label()).collect()
}

/// Fit every method on every seed and write the panel tables.
pub fn run_panel(cfg: &ExperimentConfig, out: &Path) -> Result<PanelOutcome> {
    cfg.validate_runs()?;
    let dir = output_dir(out, cfg);
    std::fs::create_dir_all(&dir)?;
    write_config(&dir, cfg)?;
    let rows = run_grid(cfg, &cfg.name)?;
    let labels = labels(cfg);
    let agg = aggregate(&rows, &labels);
    let boot = bootstrap_pairs(&rows, &labels);
    write_seed_rows(&dir.join("seed_rows.csv"), &rows, &cfg.name)?;
    write_timings(&dir.join("timings.csv"), &rows, &cfg.name)?;
    write_aggregate(&dir.join("aggregate.csv"), &agg, &cfg.name)?;
    write_bootstrap(&dir.join("bootstrap.csv"), &boot, &cfg.name)?;
    let invariant_failures = rows.iter().flat_map(|r| r.invariant_failures.clone()).collect();
    Ok(PanelOutcome { dir, rows, aggregate: agg, bootstrap: boot, invariant_failures })
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub rows: Vec<RunRow>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    pub invariant_failures: Vec<String>,
}

impl SweepOutcome {
    /// Mean regret of `label` at each sweep value.
    pub fn mean_regret(&self, label: &str) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| {
                let v: Vec<f64> = p.rows.iter().filter(|r| r.label == label).filter_map(|r| r.ok()).map(|s| s.mean_regret).collect();
                mean_sd(&v).0
            })
            .collect()
    }
}

fn apply_axis(cfg: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::NTrain => {
            if value < 1.0 || value.fract() != 0.0 {
                bail!("n_train sweep values must be positive integers, got {value}");
            }
            // the evaluation set stays the one of the base configuration
            let n_eval = cfg.bench.n_eval();
            c.bench.n_train = value as usize;
            c.bench.n_eval = Some(n_eval);
            c.bench.n_total = c.bench.n_train + n_eval;
        }
        SweepAxis::Tau => c.bench.tau = value,
        SweepAxis::NuisanceScale => c.bench.nuisance_scale = value,
        SweepAxis::RandLevel => c.bench.rand_level = value,
    }
    Ok(c)
}

pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepOutcome> {
    cfg.validate_runs()?;
    let Some(spec) = cfg.sweep.clone() else { bail!("config has no sweep section") };
    if spec.values.is_empty() {
        bail!("sweep has no values");
    }
    match (spec.axis, cfg.family) {
        (SweepAxis::Tau, Family::MatchedK) => bail!("tau sweeps apply to the two-expert family"),
        (SweepAxis::RandLevel, Family::TwoExpert) => bail!("rand_level sweeps apply to the matched-K family"),
        _ => {}
    }
    let dir = output_dir(out, cfg);
    std::fs::create_dir_all(&dir)?;
    write_config(&dir, cfg)?;
    let mut points = Vec::new();
    for &value in &spec.values {
        let point_cfg = apply_axis(cfg, spec.axis, value)?;
        point_cfg.bench.validate()?;
        points.push(SweepPoint { value, rows: run_grid(&point_cfg, &cfg.name)? });
    }
    let axis = spec.axis.name();
    let long = points.iter().flat_map(|p| {
        p.rows.iter().map(move |r| {
            let (status, regret, mse) = match &r.result {
                Ok(s) => ("ok".to_string(), fmt_f64(s.mean_regret), fmt_f64(s.weight_mse)),
                Err(e) => (format!("error: {e}"), String::new(), String::new()),
            };
            vec![cfg.name.clone(), axis.to_string(), fmt_f64(p.value), r.label.clone(), r.seed.to_string(), status, regret, mse]
        })
    });
    write_csv(&dir.join("sweep.csv"), &["benchmark", "axis", "value", "method", "seed", "status", "regret", "weight_mse"], long)?;
    let labels = labels(cfg);
    let agg = points.iter().flat_map(|p| {
        aggregate(&p.rows, &labels).into_iter().map(move |a| {
            vec![axis.to_string(), fmt_f64(p.value), a.method, a.seeds_ok.to_string(), fmt_f64(a.mean_regret), fmt_f64(a.mean_mse)]
        })
    });
    write_csv(&dir.join("sweep_aggregate.csv"), &["axis", "value", "method", "seeds_ok", "mean_regret", "mean_weight_mse"], agg)?;
    let invariant_failures = points.iter().flat_map(|p| p.rows.iter().flat_map(|r| r.invariant_failures.clone())).collect();
    Ok(SweepOutcome { dir, axis: spec.axis, points, invariant_failures })
}

#[derive(Debug, Clone)]
pub struct TheoryOutcome {
    pub dir: PathBuf,
    pub checks: Vec<TheoryCheck>,
}

impl TheoryOutcome {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub fn run_theory(cfg: &ExperimentConfig, out: &Path, kappa_scale: Option<f64>) -> Result<TheoryOutcome> {
    let mut suite: TheorySuiteConfig = cfg.theory.clone().unwrap_or_default();
    if let Some(k) = kappa_scale {
        suite.kappa_scale = k;
    }
    let mut effective = cfg.clone();
    effective.theory = Some(suite.clone());
    let dir = output_dir(out, &effective);
    std::fs::create_dir_all(&dir)?;
    write_config(&dir, &effective)?;
    let checks = run_theory_suite(&suite)?;
    write_report(&dir.join("theory_report.txt"), &checks)?;
    Ok(TheoryOutcome { dir, checks })
}

#[derive(Debug, Clone)]
pub struct RuntimeRow {
    pub method: String,
    pub seconds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RuntimeOutcome {
    pub dir: PathBuf,
    pub rows: Vec<RuntimeRow>,
    /// Mean EM seconds over mean OTSS seconds.
    pub ratio: f64,
}

/// Time EM and OTSS, each with its full selection protocol, seed by seed.
pub fn run_runtime(cfg: &ExperimentConfig, out: &Path) -> Result<RuntimeOutcome> {
    let mut cfg = cfg.clone();
    for method in [Method::Em, Method::Otss] {
        if !cfg.methods.iter().any(|m| m.method == method) {
            cfg.methods.push(MethodSpec { method, label: None, fit: Default::default() });
        }
    }
    cfg.methods.retain(|m| matches!(m.method, Method::Em | Method::Otss));
    cfg.validate_runs()?;
    let dir = output_dir(out, &cfg);
    std::fs::create_dir_all(&dir)?;
    write_config(&dir, &cfg)?;
    let mut rows: Vec<RuntimeRow> = cfg.methods.iter().map(|m| RuntimeRow { method: m.label(), seconds: Vec::new() }).collect();
    for &seed in &cfg.seeds {
        let bench = generate_benchmark(&cfg.bench_for_seed(seed), cfg.family, cfg.mode)?;
        for (spec, row) in cfg.methods.iter().zip(rows.iter_mut()) {
            let fit_cfg = cfg.fit_config(spec, seed)?;
            let (model, secs) = time_fit(|| fit_method(spec.method, &bench.train, &bench.val, &fit_cfg));
            model?;
            row.seconds.push(secs);
        }
    }
    let mean_of = |m: Method| {
        let label = cfg.methods.iter().find(|s| s.method == m).map(|s| s.label()).expect("both methods present");
        mean_sd(&rows.iter().find(|r| r.method == label).expect("row").seconds).0
    };
    let ratio = mean_of(Method::Em) / mean_of(Method::Otss);
    let mut records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let (m, sd) = mean_sd(&r.seconds);
            vec![cfg.name.clone(), r.method.clone(), r.seconds.len().to_string(), fmt_f64(m), fmt_f64(sd)]
        })
        .collect();
    records.push(vec![cfg.name.clone(), "em/otss".into(), cfg.seeds.len().to_string(), fmt_f64(ratio), String::new()]);
    write_csv(&dir.join("runtime.csv"), &["benchmark", "method", "seeds", "mean_seconds", "sd_seconds"], records.into_iter())?;
    Ok(RuntimeOutcome { dir, rows, ratio })
}
