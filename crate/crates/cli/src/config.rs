//! Run settings. Each command resolves its settings from, in increasing
//! precedence: built-in defaults or a replayed manifest, a `key = value`
//! config file, and command-line flags.

use std::fs;
use std::path::Path;

use mssl_core::driver::{Convergence, FitConfig};
use mssl_core::sampler::SamplerConfig;
use mssl_core::simgen::{OmegaStructure, SignalRegime};
use mssl_core::types::linear_grid;
use mssl_core::Hyperparameters;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSettings {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    /// Defaults to `q/2`.
    pub q_binary: Option<usize>,
    /// Extra rows drawn from the same truth and written under `test/`.
    pub n_test: usize,
    pub structure: String,
    pub regime: String,
    pub density: f64,
    pub rewire_prob: f64,
    pub seed: u64,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings {
            n: 200,
            p: 500,
            q: 4,
            q_binary: None,
            n_test: 0,
            structure: "ar1".into(),
            regime: "uniform".into(),
            density: 0.3,
            rewire_prob: 0.1,
            seed: 0,
        }
    }
}

impl SimulateSettings {
    pub const TEXT_KEYS: &'static [&'static str] = &["structure", "regime"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub seed: u64,
    pub h: usize,
    /// Default `1/√(n ln n)`.
    pub lambda1: Option<f64>,
    /// Default `n/100`.
    pub xi1: Option<f64>,
    /// `start:stop:count` or a comma list; default `10:100:10`.
    pub lambda0_grid: Option<String>,
    /// Default `n/10:n:10`.
    pub xi0_grid: Option<String>,
    pub a_theta: Option<f64>,
    pub b_theta: Option<f64>,
    pub a_eta: Option<f64>,
    pub b_eta: Option<f64>,
    pub max_outer: usize,
    pub rel_tol: f64,
    pub min_iter: usize,
    pub consecutive: usize,
    /// Sweep budget and tolerance of the coefficient step.
    pub cm_max_iter: usize,
    pub cm_tol: f64,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        let c = Convergence::default();
        let s = SamplerConfig::default();
        FitSettings {
            seed: 0,
            h: 2000,
            lambda1: None,
            xi1: None,
            lambda0_grid: None,
            xi0_grid: None,
            a_theta: None,
            b_theta: None,
            a_eta: None,
            b_eta: None,
            max_outer: c.max_outer,
            rel_tol: c.rel_tol,
            min_iter: c.min_iter,
            consecutive: c.consecutive,
            cm_max_iter: 1000,
            cm_tol: 1e-4,
            burn_in: s.burn_in,
            thin: s.thin,
        }
    }
}

impl FitSettings {
    pub const TEXT_KEYS: &'static [&'static str] = &["lambda0_grid", "xi0_grid"];

    /// Fit configuration for data of size `(n, p, q)` with the given seed.
    pub fn to_fit_config(&self, n: usize, p: usize, q: usize, seed: u64) -> CliResult<FitConfig> {
        let mut hyper = Hyperparameters::defaults(n, p, q);
        if let Some(v) = self.lambda1 {
            hyper.lambda1 = v;
        }
        if let Some(v) = self.xi1 {
            hyper.xi1 = v;
        }
        if let Some(g) = &self.lambda0_grid {
            hyper.lambda0_grid = parse_grid(g)?;
        }
        if let Some(g) = &self.xi0_grid {
            hyper.xi0_grid = parse_grid(g)?;
        }
        hyper.lambda0 = *hyper.lambda0_grid.last().unwrap_or(&hyper.lambda0);
        hyper.xi0 = *hyper.xi0_grid.last().unwrap_or(&hyper.xi0);
        for (slot, v) in [
            (&mut hyper.a_theta, self.a_theta),
            (&mut hyper.b_theta, self.b_theta),
            (&mut hyper.a_eta, self.a_eta),
            (&mut hyper.b_eta, self.b_eta),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        hyper.h = self.h;
        hyper.max_iter = self.cm_max_iter;
        hyper.tol = self.cm_tol;
        let mut cfg = FitConfig::new(hyper, seed);
        cfg.convergence = Convergence {
            max_outer: self.max_outer,
            rel_tol: self.rel_tol,
            min_iter: self.min_iter,
            consecutive: self.consecutive,
        };
        cfg.sampler = SamplerConfig { burn_in: self.burn_in, thin: self.thin };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSettings {
    /// Comma list of structure names, or `all`.
    pub structures: String,
    /// Comma list of regime names, or `all`.
    pub regimes: String,
    pub replicates: usize,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub q_binary: Option<usize>,
    pub density: f64,
    pub rewire_prob: f64,
    /// Forward simulations per test row for the predictive RMSE.
    pub pred_draws: usize,
    #[serde(flatten)]
    pub fit: FitSettings,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        BenchmarkSettings {
            structures: "all".into(),
            regimes: "all".into(),
            replicates: 10,
            n: 200,
            p: 100,
            q: 4,
            q_binary: None,
            density: 0.3,
            rewire_prob: 0.1,
            pred_draws: 1,
            fit: FitSettings { h: 100, ..FitSettings::default() },
        }
    }
}

impl BenchmarkSettings {
    pub const TEXT_KEYS: &'static [&'static str] =
        &["structures", "regimes", "lambda0_grid", "xi0_grid"];
}

/// `start:stop:count`, a comma-separated list, or a single value.
pub fn parse_grid(text: &str) -> CliResult<Vec<f64>> {
    let bad = |why: &str| CliError::Usage(format!("invalid grid {text:?}: {why}"));
    let t = text.trim();
    if t.contains(':') {
        let parts: Vec<&str> = t.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:count"));
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad("start is not a number"))?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad("stop is not a number"))?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad("count is not an integer"))?;
        if count == 0 || (count > 1 && !(hi > lo)) {
            return Err(bad("need count >= 1 and stop > start"));
        }
        return Ok(linear_grid(lo, hi, count));
    }
    t.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad("entries must be numbers")))
        .collect()
}

pub fn parse_structures(text: &str, rewire_prob: f64) -> CliResult<Vec<OmegaStructure>> {
    if text.trim().eq_ignore_ascii_case("all") {
        return Ok(with_rewire(OmegaStructure::all(), rewire_prob));
    }
    let mut out = Vec::new();
    for name in text.split(',') {
        let s = OmegaStructure::parse(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown structure {:?}; valid names are {}",
                name.trim(),
                OmegaStructure::NAMES.join(", ")
            ))
        })?;
        out.push(s);
    }
    Ok(with_rewire(out, rewire_prob))
}

fn with_rewire(list: Vec<OmegaStructure>, rewire_prob: f64) -> Vec<OmegaStructure> {
    list.into_iter()
        .map(|s| match s {
            OmegaStructure::SmallWorld { .. } => OmegaStructure::SmallWorld { rewire_prob },
            other => other,
        })
        .collect()
}

pub fn parse_regimes(text: &str, density: f64) -> CliResult<Vec<SignalRegime>> {
    let names: Vec<&str> = if text.trim().eq_ignore_ascii_case("all") {
        SignalRegime::NAMES.to_vec()
    } else {
        text.split(',').collect()
    };
    names
        .into_iter()
        .map(|name| {
            SignalRegime::parse(name).map(|r| r.with_density(density)).ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown regime {:?}; valid names are {}",
                    name.trim(),
                    SignalRegime::NAMES.join(", ")
                ))
            })
        })
        .collect()
}

/// Parses `key = value` lines; `#` starts a comment. Dashes in keys become
/// underscores.
pub fn read_config_file(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("{}: line {}: expected key = value", path.display(), i + 1))
        })?;
        out.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(out)
}

/// Layers settings: `base`, then `file` entries, then `flags` (a JSON object
/// holding only the flags that were given). Unknown keys are usage errors.
pub fn resolve<T: Serialize + DeserializeOwned>(
    base: T,
    text_keys: &[&str],
    file: &[(String, String)],
    flags: Value,
) -> CliResult<T> {
    let Value::Object(mut map) = serde_json::to_value(base).expect("settings serialize") else {
        unreachable!("settings are structs")
    };
    for (k, raw) in file {
        if !map.contains_key(k) {
            return Err(unknown_key(k, &map));
        }
        let v = if text_keys.contains(&k.as_str()) {
            Value::String(raw.clone())
        } else {
            serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()))
        };
        map.insert(k.clone(), v);
    }
    if let Value::Object(given) = flags {
        for (k, v) in given {
            if !map.contains_key(&k) {
                return Err(unknown_key(&k, &map));
            }
            map.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(map))
        .map_err(|e| CliError::Usage(format!("invalid setting: {e}")))
}

fn unknown_key(k: &str, map: &Map<String, Value>) -> CliError {
    let known: Vec<&str> = map.keys().map(String::as_str).collect();
    CliError::Usage(format!("unknown setting {k:?}; known settings: {}", known.join(", ")))
}
