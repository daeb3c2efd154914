//! Flat `key = value` scenario files.
//!
//! Values are kept as text until [`Settings::scenario`] so that figure
//! defaults, the config file, `--override` pairs and sweep points can be
//! layered in that order.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;
use zeno_core::model::{validate_params, DetectorBand, ModelParams, NumericalControls, Violations};

pub const KEYS: &[&str] = &[
    "gamma",
    "omega",
    "eta",
    "delta",
    "n",
    "flat",
    "center",
    "cutoff",
    "dk",
    "horizon",
    "step",
    "quad_tol",
    "force_cutoff",
    "samples",
    "products",
    "eta_sweep",
    "delta_sweep",
    "detuning_sweep",
    "out",
];

pub const DEFAULT_SAMPLES: usize = 500;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{key}`")]
    UnknownKey { key: String },
    #[error("line {line}: `{key}` given twice")]
    Duplicate { key: String, line: usize },
    #[error("`{key}`: cannot parse {value:?} ({reason})")]
    BadValue { key: String, value: String, reason: String },
    #[error("`{0}` is required")]
    Missing(&'static str),
    #[error("`{0}` must not be empty")]
    EmptyList(&'static str),
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Invalid(#[from] Violations),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Product {
    FormFactor,
    Evolve,
    Spectral,
    Report,
    Fig1,
    Fig2,
    Fig3,
}

impl Product {
    pub const ALL: [Product; 7] = [
        Product::FormFactor,
        Product::Evolve,
        Product::Spectral,
        Product::Report,
        Product::Fig1,
        Product::Fig2,
        Product::Fig3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Product::FormFactor => "formfactor",
            Product::Evolve => "evolve",
            Product::Spectral => "spectral",
            Product::Report => "report",
            Product::Fig1 => "fig1",
            Product::Fig2 => "fig2",
            Product::Fig3 => "fig3",
        }
    }
}

impl fmt::Display for Product {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Product {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Product::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| format!("unknown product `{s}`"))
    }
}

/// Raw key/value pairs, restricted to [`KEYS`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

fn known(key: &str) -> Result<&'static str, ConfigError> {
    KEYS.iter().copied().find(|k| *k == key).ok_or_else(|| ConfigError::UnknownKey { key: key.to_string() })
}

impl Settings {
    /// Parses a config document. `#` starts a comment; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut out = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
            };
            let key = known(k.trim())?;
            if out.values.insert(key, v.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate { key: key.to_string(), line: i + 1 });
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        self.values.insert(known(key)?, value.into());
        Ok(())
    }

    /// Applies a `key=value` pair from the command line.
    pub fn apply_override(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::Syntax { line: 0, text: pair.to_string() })?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn remove(&mut self, key: &str) {
        self.values.remove(key);
    }

    /// Copy of `self` with `defaults` filled in where a key is unset.
    pub fn with_defaults(&self, defaults: &[(&str, String)]) -> Result<Self, ConfigError> {
        let mut out = self.clone();
        for (k, v) in defaults {
            if !out.contains(k) {
                out.set(k, v.clone())?;
            }
        }
        Ok(out)
    }

    fn parsed<T: FromStr>(&self, key: &'static str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    fn list<T: FromStr>(&self, key: &'static str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let Some(raw) = self.get(key) else { return Ok(None) };
        let items: Vec<&str> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err(ConfigError::EmptyList(key));
        }
        items
            .into_iter()
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// Resolves the settings into a typed, validated scenario.
    pub fn scenario(&self) -> Result<ScenarioConfig, ConfigError> {
        let gamma = self.parsed("gamma")?.unwrap_or(1.0);
        let omega = self.parsed("omega")?.unwrap_or(0.0);
        let eta = self.parsed("eta")?.ok_or(ConfigError::Missing("eta"))?;
        let delta = self.parsed("delta")?.ok_or(ConfigError::Missing("delta"))?;
        let center = self.parsed("center")?.unwrap_or(omega);
        let flat = self.parsed("flat")?.unwrap_or(false);
        let n: Option<u32> = self.parsed("n")?;
        let band = match (flat, n) {
            (true, Some(_)) => return Err(ConfigError::Conflict("`n` and `flat = true` are exclusive".into())),
            (true, None) => DetectorBand::flat(eta, delta, center),
            (false, n) => DetectorBand::power_law(eta, delta, n.unwrap_or(6), center),
        };
        let mut numerics = NumericalControls {
            cutoff: self.parsed("cutoff")?,
            dk: self.parsed("dk")?,
            horizon: self.parsed("horizon")?,
            step: self.parsed("step")?,
            force_cutoff: self.parsed("force_cutoff")?.unwrap_or(false),
            ..NumericalControls::default()
        };
        if let Some(tol) = self.parsed("quad_tol")? {
            numerics.quad_tol = tol;
        }
        let params = ModelParams { gamma, omega, band, numerics };
        validate_params(&params)?;

        let samples = self.parsed("samples")?.unwrap_or(DEFAULT_SAMPLES);
        if samples < 2 {
            return Err(ConfigError::BadValue {
                key: "samples".into(),
                value: samples.to_string(),
                reason: "need at least 2".into(),
            });
        }
        let products = self.list::<Product>("products")?.unwrap_or_default();
        Ok(ScenarioConfig {
            params,
            out: self.get("out").map(PathBuf::from),
            products,
            sweep: SweepLists {
                eta: self.list("eta_sweep")?,
                delta: self.list("delta_sweep")?,
                detuning: self.list("detuning_sweep")?,
            },
            samples,
        })
    }

    /// One settings copy per sweep point, each with the sweep keys removed,
    /// paired with its subdirectory name.
    pub fn sweep_points(&self) -> Result<Vec<(String, Settings)>, ConfigError> {
        let cfg = self.scenario()?;
        let lists = &cfg.sweep;
        if lists.eta.is_none() && lists.delta.is_none() && lists.detuning.is_none() {
            return Err(ConfigError::Missing("eta_sweep, delta_sweep or detuning_sweep"));
        }
        let axis = |v: &Option<Vec<f64>>| v.clone().map_or(vec![None], |v| v.into_iter().map(Some).collect());
        let mut base = self.clone();
        for k in ["eta_sweep", "delta_sweep", "detuning_sweep", "products", "out"] {
            base.remove(k);
        }
        let mut points = Vec::new();
        for eta in axis(&lists.eta) {
            for delta in axis(&lists.delta) {
                for det in axis(&lists.detuning) {
                    let mut s = base.clone();
                    let mut name = Vec::new();
                    if let Some(v) = eta {
                        s.set("eta", v.to_string())?;
                        name.push(format!("eta={v}"));
                    }
                    if let Some(v) = delta {
                        s.set("delta", v.to_string())?;
                        name.push(format!("delta={v}"));
                    }
                    if let Some(v) = det {
                        s.set("center", (cfg.params.omega + v).to_string())?;
                        name.push(format!("detuning={v}"));
                    }
                    points.push((name.join("_"), s));
                }
            }
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepLists {
    pub eta: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
    /// Band center offsets from the atomic line.
    pub detuning: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub params: ModelParams,
    pub out: Option<PathBuf>,
    pub products: Vec<Product>,
    pub sweep: SweepLists,
    pub samples: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "gamma = 1\neta = 100 # detector\ndelta = 15.9\n";

    #[test]
    fn parses_comments_and_defaults() {
        let cfg = Settings::parse(BASE).unwrap().scenario().unwrap();
        assert_eq!(cfg.params.band.eta, 100.0);
        assert_eq!(cfg.params.band.center, 0.0);
        assert_eq!(cfg.samples, DEFAULT_SAMPLES);
        assert!(cfg.products.is_empty());
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = Settings::parse("gamma = 1\nlambda = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { ref key } if key == "lambda"), "{err}");
        let mut s = Settings::default();
        assert!(s.apply_override("etaa=1").is_err());
    }

    #[test]
    fn duplicates_and_syntax_are_rejected() {
        assert!(matches!(Settings::parse("eta=1\neta=2"), Err(ConfigError::Duplicate { line: 2, .. })));
        assert!(matches!(Settings::parse("eta 1"), Err(ConfigError::Syntax { line: 1, .. })));
    }

    #[test]
    fn empty_sweep_list_is_rejected() {
        let s = Settings::parse(&format!("{BASE}eta_sweep = ,\n")).unwrap();
        assert!(matches!(s.scenario(), Err(ConfigError::EmptyList("eta_sweep"))));
    }

    #[test]
    fn flat_and_n_conflict() {
        let s = Settings::parse(&format!("{BASE}flat = true\nn = 6\n")).unwrap();
        assert!(matches!(s.scenario(), Err(ConfigError::Conflict(_))));
    }

    #[test]
    fn invalid_model_is_a_config_error() {
        let s = Settings::parse(&format!("{BASE}n = 5\n")).unwrap();
        assert!(matches!(s.scenario(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn overrides_win_over_defaults() {
        let mut s = Settings::parse(BASE).unwrap();
        s.apply_override("eta=0").unwrap();
        let s = s.with_defaults(&[("eta", "3".into()), ("omega", "2".into())]).unwrap();
        let cfg = s.scenario().unwrap();
        assert_eq!((cfg.params.band.eta, cfg.params.omega), (0.0, 2.0));
        // center follows omega unless given
        assert_eq!(cfg.params.band.center, 2.0);
    }

    #[test]
    fn sweep_expands_the_cartesian_product() {
        let s = Settings::parse(&format!("{BASE}omega = 1\neta_sweep = 1, 2\ndetuning_sweep = 0,5,10\n")).unwrap();
        let points = s.sweep_points().unwrap();
        assert_eq!(points.len(), 6);
        assert_eq!(points[1].0, "eta=1_detuning=5");
        let cfg = points[1].1.scenario().unwrap();
        assert_eq!(cfg.params.band.center, 6.0);
        assert!(cfg.sweep.eta.is_none());
    }
}
