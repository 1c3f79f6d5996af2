//! Experiment configuration files.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use softseg::theory::TheorySuiteConfig;
use softseg::{BenchConfig, Family, FitConfig, Method, TruthMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    /// Row label; defaults to the method name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Overrides on top of the experiment-wide fit settings.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub fit: Map<String, Value>,
}

impl MethodSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.method.name().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NTrain,
    Tau,
    NuisanceScale,
    RandLevel,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NTrain => "n_train",
            SweepAxis::Tau => "tau",
            SweepAxis::NuisanceScale => "nuisance_scale",
            SweepAxis::RandLevel => "rand_level",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

fn default_seeds() -> Vec<u64> {
    (0..8).collect()
}

fn default_family() -> Family {
    Family::TwoExpert
}

fn default_mode() -> TruthMode {
    TruthMode::Soft
}

/// One experiment: a benchmark, the methods to fit on it and the seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Benchmark label; first path component under the output directory.
    pub name: String,
    #[serde(default = "default_family")]
    pub family: Family,
    #[serde(default = "default_mode")]
    pub mode: TruthMode,
    #[serde(default)]
    pub bench: BenchConfig,
    /// Fit settings shared by every method.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub fit: Map<String, Value>,
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheorySuiteConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| anyhow::anyhow!("config error at line {}, column {}: {e}", e.line(), e.column()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Shift every seed; the benchmark seed follows the first run seed.
    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        self.seeds.iter_mut().for_each(|s| *s += offset);
        if let Some(t) = self.theory.as_mut() {
            t.seed += offset;
            t.rate.seed += offset;
        }
        self
    }

    pub fn validate_runs(&self) -> Result<()> {
        if self.methods.is_empty() {
            bail!("config lists no methods");
        }
        if self.seeds.is_empty() {
            bail!("config lists no seeds");
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            bail!("seeds must be distinct");
        }
        let mut labels: Vec<String> = self.methods.iter().map(|m| m.label()).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.methods.len() {
            bail!("method labels must be distinct");
        }
        for m in &self.methods {
            self.fit_config(m, 0)?;
        }
        self.bench.validate()?;
        Ok(())
    }

    /// Shared fit settings, then the method's own overrides, then the run seed.
    pub fn fit_config(&self, spec: &MethodSpec, seed: u64) -> Result<FitConfig> {
        let mut value = serde_json::to_value(FitConfig::default())?;
        let obj = value.as_object_mut().expect("struct serializes to an object");
        for (k, v) in self.fit.iter().chain(spec.fit.iter()) {
            if !obj.contains_key(k) {
                bail!("unknown fit setting {k:?} for method {}", spec.label());
            }
            obj.insert(k.clone(), v.clone());
        }
        let mut cfg: FitConfig = serde_json::from_value(value).with_context(|| format!("fit settings of {}", spec.label()))?;
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bench_for_seed(&self, seed: u64) -> BenchConfig {
        BenchConfig { seed, ..self.bench.clone() }
    }

    /// Short content hash naming the output directory.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ExperimentConfig::from_json("{\n  \"name\": \"x\",\n  \"methods\": [oops]\n}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn overrides_merge_in_order() {
        let cfg = ExperimentConfig::from_json(
            r#"{"name": "x", "fit": {"restarts": 2, "k": 3},
                "methods": [{"method": "otss", "fit": {"k": 4}}, {"method": "pooled"}]}"#,
        )
        .unwrap();
        let otss = cfg.fit_config(&cfg.methods[0], 9).unwrap();
        assert_eq!((otss.restarts, otss.k, otss.seed), (2, 4, 9));
        assert_eq!(cfg.fit_config(&cfg.methods[1], 0).unwrap().k, 3);
        assert_eq!(cfg.seeds, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_unknown_settings_and_duplicates() {
        let typo = ExperimentConfig::from_json(r#"{"name": "x", "methods": [{"method": "otss", "fit": {"restart": 2}}]}"#).unwrap();
        assert!(typo.validate_runs().is_err());
        let dup = ExperimentConfig::from_json(r#"{"name": "x", "seeds": [1, 1], "methods": [{"method": "pooled"}]}"#).unwrap();
        assert!(dup.validate_runs().is_err());
        let none = ExperimentConfig::from_json(r#"{"name": "x"}"#).unwrap();
        assert!(none.validate_runs().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_json(r#"{"name": "x", "methods": [{"method": "pooled"}]}"#).unwrap();
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), a.with_seed_offset(1).hash());
    }
}
