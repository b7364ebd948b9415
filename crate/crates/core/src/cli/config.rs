//! Flat `key=value` experiment configuration with presets and overrides.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use crate::bootstrap::MultiplierDist;
use crate::constraints::PenaltyMode;
use crate::data::{parse_key_values, DmDesign};
use crate::error::{Error, Result};
use crate::fairness::Criterion;
use crate::model::{LossKind, LossSpec};
use crate::optim::StepSchedule;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    SyntheticDi,
    SyntheticDm { weights: [f64; 4] },
    Csv { path: PathBuf, schema: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub mode: Criterion,
    pub loss: LossKind,
    pub epsilon: Option<f64>,
    pub r2: Option<f64>,
    pub penalty: PenaltyMode,
    pub step_c: f64,
    pub step_a: f64,
    pub step_k0: f64,
    pub kappa: f64,
    pub iters: u64,
    pub checkpoints: Vec<u64>,
    pub b: usize,
    pub alpha: f64,
    pub n_constraint: usize,
    pub n_heldout: usize,
    pub n_data: usize,
    pub reps: usize,
    pub seed: u64,
    pub data: DataSource,
    /// Append a constant feature to synthetic data (CSV data always gets one).
    pub intercept: bool,
    pub multiplier: MultiplierDist,
    pub asym_draws: usize,
    pub density_at: Vec<u64>,
    pub tol: f64,
}

pub const KEYS: &[&str] = &[
    "mode", "loss", "epsilon", "r2", "penalty", "tau", "step-c", "step-a", "step-k0", "kappa", "iters",
    "checkpoints", "b", "alpha", "n-constraint", "n-heldout", "n-data", "reps", "seed", "data", "schema",
    "intercept", "dm-weights", "multiplier", "asym-draws", "density-at", "tol",
];

fn defaults() -> BTreeMap<String, String> {
    [
        ("mode", "di"),
        ("loss", "ce"),
        ("penalty", "hard"),
        ("tau", "50"),
        ("step-c", "0.01"),
        ("step-a", "0.501"),
        ("step-k0", "0"),
        ("kappa", "0.0001"),
        ("iters", "4000"),
        ("checkpoints", "geometric"),
        ("b", "100"),
        ("alpha", "0.05"),
        ("n-constraint", "200"),
        ("n-heldout", "100"),
        ("n-data", "100000"),
        ("reps", "100"),
        ("seed", "0"),
        ("data", "synthetic-di"),
        ("intercept", "true"),
        ("dm-weights", "0.25,0.25,0.25,0.25"),
        ("multiplier", "uniform-sqrt3"),
        ("asym-draws", "2000"),
        ("density-at", "final"),
        ("tol", "1e-10"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Per-dataset settings from the experiments' parameter table.
pub fn preset(name: &str) -> Result<BTreeMap<String, String>> {
    let pairs: &[(&str, &str)] = match name {
        "synthetic-di" => &[
            ("data", "synthetic-di"),
            ("mode", "di"),
            ("epsilon", "0.002"),
            ("b", "100"),
            ("n-heldout", "100"),
            ("n-constraint", "200"),
            ("reps", "100"),
        ],
        "adult" => &[
            ("mode", "di"),
            ("epsilon", "0.00001"),
            ("b", "200"),
            ("n-heldout", "1000"),
            ("n-constraint", "1000"),
            ("reps", "200"),
        ],
        "synthetic-dm" => &[
            ("data", "synthetic-dm"),
            ("mode", "dm"),
            ("r2", "500"),
            ("b", "100"),
            ("n-heldout", "100"),
            ("n-constraint", "250"),
            ("reps", "100"),
        ],
        "compas" => &[
            ("mode", "dm"),
            ("r2", "300"),
            ("b", "200"),
            ("n-heldout", "400"),
            ("n-constraint", "250"),
            ("reps", "200"),
        ],
        other => {
            return Err(Error::invalid(
                "preset",
                format!("unknown preset `{other}` (synthetic-di, adult, synthetic-dm, compas)"),
            ))
        }
    };
    Ok(pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
}

fn check_keys(map: &BTreeMap<String, String>, origin: &str) -> Result<()> {
    match map.keys().find(|k| !KEYS.contains(&k.as_str())) {
        Some(k) => Err(Error::invalid(k.clone(), format!("unknown key in {origin}"))),
        None => Ok(()),
    }
}

/// Layers, lowest precedence first: defaults, preset, config file, flags.
pub fn resolve(
    preset_name: Option<&str>,
    file_text: Option<&str>,
    overrides: &BTreeMap<String, String>,
) -> Result<ExperimentConfig> {
    let mut map = defaults();
    if let Some(p) = preset_name {
        map.extend(preset(p)?);
    }
    if let Some(text) = file_text {
        let mut file = parse_key_values(text)?;
        if let Some(p) = file.remove("preset") {
            if preset_name.is_none() {
                map.extend(preset(&p)?);
            }
        }
        check_keys(&file, "config file")?;
        map.extend(file);
    }
    check_keys(overrides, "flags")?;
    map.extend(overrides.iter().map(|(k, v)| (k.clone(), v.clone())));
    ExperimentConfig::from_map(&map)
}

fn get<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::invalid(key, "is required"))
}

fn num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = get(map, key)?;
    v.parse().map_err(|_| Error::invalid(key, format!("cannot parse `{v}`")))
}

fn opt_f64(map: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) if v.is_empty() => Ok(None),
        Some(_) => num(map, key).map(Some),
    }
}

fn u64_list(v: &str, key: &str) -> Result<Vec<u64>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::invalid(key, format!("cannot parse `{s}`"))))
        .collect()
}

/// `{16, 32, 64, …} ∩ [1, T]` followed by `T`.
pub fn geometric_checkpoints(iters: u64) -> Vec<u64> {
    let mut v = Vec::new();
    let mut k = 16;
    while k < iters {
        v.push(k);
        k *= 2;
    }
    v.push(iters);
    v
}

impl ExperimentConfig {
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mode = match get(map, "mode")? {
            "di" | "DI" => Criterion::Di,
            "dm" | "DM" => Criterion::Dm,
            v => return Err(Error::invalid("mode", format!("expected di or dm, got `{v}`"))),
        };
        let loss = match get(map, "loss")? {
            "ce" => LossKind::CrossEntropy,
            "squared" => LossKind::SquaredOneHot,
            v => return Err(Error::invalid("loss", format!("expected ce or squared, got `{v}`"))),
        };
        let tau: f64 = num(map, "tau")?;
        let penalty = match get(map, "penalty")? {
            "hard" => PenaltyMode::HardMin,
            "smooth" => PenaltyMode::Smooth { tau },
            v => return Err(Error::invalid("penalty", format!("expected hard or smooth, got `{v}`"))),
        };
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::invalid("tau", "must be finite and > 0"));
        }
        let epsilon = opt_f64(map, "epsilon")?;
        let r2 = opt_f64(map, "r2")?;
        match mode {
            Criterion::Di => match epsilon {
                None => return Err(Error::invalid("epsilon", "is required in di mode")),
                Some(e) if e.is_nan() || e < 0.0 => return Err(Error::invalid("epsilon", "must be >= 0")),
                _ => {}
            },
            Criterion::Dm => match r2 {
                None => return Err(Error::invalid("r2", "is required in dm mode")),
                Some(r) if !(r.is_finite() && r >= 0.0) => {
                    return Err(Error::invalid("r2", "must be finite and >= 0"))
                }
                _ => {}
            },
        }
        let step_c: f64 = num(map, "step-c")?;
        let step_a: f64 = num(map, "step-a")?;
        let step_k0: f64 = num(map, "step-k0")?;
        StepSchedule::with_offset(step_c, step_a, step_k0)?;
        let kappa: f64 = num(map, "kappa")?;
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::invalid("kappa", "must be finite and >= 0"));
        }
        if loss == LossKind::CrossEntropy && kappa == 0.0 {
            return Err(Error::invalid("kappa", "must be > 0 for the ce loss"));
        }
        let iters: u64 = num(map, "iters")?;
        if iters == 0 {
            return Err(Error::invalid("iters", "must be >= 1"));
        }
        let checkpoints = match get(map, "checkpoints")? {
            "geometric" => geometric_checkpoints(iters),
            v => {
                let mut c = u64_list(v, "checkpoints")?;
                if c.is_empty() {
                    return Err(Error::invalid("checkpoints", "must not be empty"));
                }
                if let Some(bad) = c.iter().find(|&&k| k == 0 || k > iters) {
                    return Err(Error::invalid("checkpoints", format!("{bad} is outside [1, {iters}]")));
                }
                c.sort_unstable();
                c.dedup();
                c
            }
        };
        let density_at = match get(map, "density-at")? {
            "final" => vec![iters],
            v => {
                let mut d = u64_list(v, "density-at")?;
                if let Some(bad) = d.iter().find(|k| !checkpoints.contains(k)) {
                    return Err(Error::invalid("density-at", format!("{bad} is not a checkpoint")));
                }
                d.sort_unstable();
                d.dedup();
                d
            }
        };
        let b: usize = num(map, "b")?;
        if b < 2 {
            return Err(Error::invalid("b", "must be >= 2"));
        }
        let alpha: f64 = num(map, "alpha")?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid("alpha", "must lie in (0, 1)"));
        }
        let n_constraint: usize = num(map, "n-constraint")?;
        let n_heldout: usize = num(map, "n-heldout")?;
        let n_data: usize = num(map, "n-data")?;
        let reps: usize = num(map, "reps")?;
        for (k, v) in [("n-constraint", n_constraint), ("n-heldout", n_heldout), ("n-data", n_data), ("reps", reps)] {
            if v == 0 {
                return Err(Error::invalid(k, "must be >= 1"));
            }
        }
        let weights: Vec<f64> = get(map, "dm-weights")?
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::invalid("dm-weights", format!("cannot parse `{s}`"))))
            .collect::<Result<_>>()?;
        let weights: [f64; 4] = weights
            .try_into()
            .map_err(|_| Error::invalid("dm-weights", "expected four comma-separated weights"))?;
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("dm-weights", "must be nonnegative with a positive sum"));
        }
        let data = match get(map, "data")? {
            "synthetic-di" => DataSource::SyntheticDi,
            "synthetic-dm" => DataSource::SyntheticDm { weights },
            path => DataSource::Csv {
                path: PathBuf::from(path),
                schema: map.get("schema").filter(|s| !s.is_empty()).map(PathBuf::from),
            },
        };
        if weights != DmDesign::UNIFORM && !matches!(data, DataSource::SyntheticDm { .. }) {
            return Err(Error::invalid("dm-weights", "only applies to synthetic-dm data"));
        }
        let intercept = match get(map, "intercept")? {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            v => return Err(Error::invalid("intercept", format!("expected true or false, got `{v}`"))),
        };
        let multiplier = match get(map, "multiplier")? {
            "uniform-sqrt3" => MultiplierDist::UniformSqrt3,
            "exponential" => MultiplierDist::Exponential,
            "degenerate" => MultiplierDist::Degenerate,
            v => {
                return Err(Error::invalid(
                    "multiplier",
                    format!("expected uniform-sqrt3, exponential or degenerate, got `{v}`"),
                ))
            }
        };
        let asym_draws: usize = num(map, "asym-draws")?;
        if asym_draws == 0 {
            return Err(Error::invalid("asym-draws", "must be >= 1"));
        }
        let tol: f64 = num(map, "tol")?;
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::invalid("tol", "must be > 0"));
        }
        Ok(Self {
            mode,
            loss,
            epsilon: if mode == Criterion::Di { epsilon } else { None },
            r2: if mode == Criterion::Dm { r2 } else { None },
            penalty,
            step_c,
            step_a,
            step_k0,
            kappa,
            iters,
            checkpoints,
            b,
            alpha,
            n_constraint,
            n_heldout,
            n_data,
            reps,
            seed: num(map, "seed")?,
            data,
            intercept,
            multiplier,
            asym_draws,
            density_at,
            tol,
        })
    }

    pub fn spec(&self) -> LossSpec {
        LossSpec {
            kind: self.loss,
            kappa: self.kappa,
        }
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule {
            c: self.step_c,
            a: self.step_a,
            k0: self.step_k0,
        }
    }

    /// JSON echo. Infinite ε is written as the string `"inf"`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if self.epsilon == Some(f64::INFINITY) {
            v["epsilon"] = serde_json::Value::from("inf");
        }
        v
    }
}
