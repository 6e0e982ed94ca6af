//! TOML run configuration shared by every CLI command.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dsfm::{Bandwidth, FitOptions};
use crate::error::{Error, Result};
use crate::synth::{self, SynthConfig};
use crate::timeseries::DynamicsOptions;

/// Dates given either as TOML date literals or as `YYYY-MM-DD` strings.
pub(crate) mod date_format {
    use chrono::NaiveDate;
    use serde::{Deserialize, Deserializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Toml(toml::value::Datetime),
        Text(String),
    }

    fn parse<E: serde::de::Error>(raw: Raw) -> Result<NaiveDate, E> {
        let text = match raw {
            Raw::Toml(d) => match (d.date, d.time) {
                (Some(date), None) => date.to_string(),
                _ => return Err(E::custom(format!("expected a date without time, got {d}"))),
            },
            Raw::Text(t) => t,
        };
        NaiveDate::parse_from_str(&text, "%Y-%m-%d").map_err(|e| E::custom(format!("bad date {text:?}: {e}")))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDate, D::Error> {
        parse(Raw::deserialize(d)?)
    }

    pub fn deserialize_opt<'de, D: Deserializer<'de>>(d: D) -> Result<Option<NaiveDate>, D::Error> {
        Option::<Raw>::deserialize(d)?.map(parse::<D::Error>).transpose()
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    /// Directory holding the CSV inputs; relative paths below resolve against it.
    pub dir: PathBuf,
    pub trades: PathBuf,
    pub snapshots: PathBuf,
    pub rates: PathBuf,
    pub dividends: PathBuf,
    pub varswaps: PathBuf,
}

impl Default for InputPaths {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            trades: synth::TRADES_FILE.into(),
            snapshots: synth::SNAPSHOTS_FILE.into(),
            rates: synth::RATES_FILE.into(),
            dividends: synth::DIVIDENDS_FILE.into(),
            varswaps: synth::VARSWAPS_FILE.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasketConfig {
    pub index: String,
    /// Taken from the snapshot weights when empty.
    #[serde(default)]
    pub tickers: Vec<String>,
    #[serde(default)]
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateRange {
    #[serde(default, deserialize_with = "date_format::deserialize_opt")]
    pub from: Option<NaiveDate>,
    #[serde(default, deserialize_with = "date_format::deserialize_opt")]
    pub to: Option<NaiveDate>,
}

impl DateRange {
    pub fn bounds(&self) -> (NaiveDate, NaiveDate) {
        (self.from.unwrap_or(NaiveDate::MIN), self.to.unwrap_or(NaiveDate::MAX))
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        let (a, b) = self.bounds();
        d >= a && d <= b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsfmConfig {
    pub grid: [usize; 2],
    /// Searched by the bandwidth criterion when non-empty; otherwise `h_mu`
    /// and `h_phi` are used as given.
    pub bandwidth_candidates: Vec<[f64; 2]>,
    pub h_mu: [f64; 2],
    pub h_phi: Option<[f64; 2]>,
    /// Weighting bandwidth of the criterion; derived from the data when absent.
    pub h_star: Option<[f64; 2]>,
    pub l_max: usize,
    pub variance_threshold: f64,
}

impl Default for DsfmConfig {
    fn default() -> Self {
        let d = FitOptions::default();
        Self {
            grid: d.grid,
            bandwidth_candidates: Vec::new(),
            h_mu: [d.h_mu.h1, d.h_mu.h2],
            h_phi: None,
            h_star: None,
            l_max: d.l_max,
            variance_threshold: d.variance_threshold,
        }
    }
}

fn bandwidth(h: [f64; 2]) -> Result<Bandwidth> {
    Bandwidth::new(h[0], h[1]).map_err(|e| config_err(e.to_string()))
}

impl DsfmConfig {
    pub fn fit_options(&self) -> Result<FitOptions> {
        if self.grid.iter().any(|g| *g < 2) {
            return Err(config_err("dsfm.grid needs at least two nodes per axis"));
        }
        if !(0.0..=1.0).contains(&self.variance_threshold) {
            return Err(config_err("dsfm.variance_threshold must lie in [0, 1]"));
        }
        Ok(FitOptions {
            grid: self.grid,
            h_mu: bandwidth(self.h_mu)?,
            h_phi: self.h_phi.map(bandwidth).transpose()?,
            l_max: self.l_max,
            variance_threshold: self.variance_threshold,
        })
    }

    pub fn candidates(&self) -> Result<Vec<Bandwidth>> {
        self.bandwidth_candidates.iter().map(|h| bandwidth(*h)).collect()
    }

    pub fn h_star(&self) -> Result<Option<Bandwidth>> {
        self.h_star.map(bandwidth).transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeSettings {
    pub enabled: bool,
    /// Estimate threshold and slopes from the estimation sample instead of
    /// using the values below.
    pub fit: bool,
    pub threshold: f64,
    pub slope_low: f64,
    pub slope_high: f64,
}

impl Default for RegimeSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            fit: false,
            threshold: 21.0,
            slope_low: 0.0328,
            slope_high: 0.0091,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub tenors: Vec<f64>,
    /// Notional per variance point.
    pub notional: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            tenors: vec![0.083, 0.25, 0.5, 1.0],
            notional: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: InputPaths,
    pub basket: Option<BasketConfig>,
    pub estimation: DateRange,
    pub backtest_range: DateRange,
    pub dsfm: DsfmConfig,
    pub var: DynamicsOptions,
    pub regime: RegimeSettings,
    pub backtest: BacktestConfig,
    pub tree_steps: usize,
    pub forecast_horizon: usize,
    pub output_dir: PathBuf,
    pub synth: SynthConfig,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            inputs: InputPaths::default(),
            basket: None,
            estimation: DateRange::default(),
            backtest_range: DateRange::default(),
            dsfm: DsfmConfig::default(),
            var: DynamicsOptions::default(),
            regime: RegimeSettings::default(),
            backtest: BacktestConfig::default(),
            tree_steps: crate::vol::DEFAULT_TREE_STEPS,
            forecast_horizon: 5,
            output_dir: PathBuf::from("out"),
            synth: SynthConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if let (Some(est_end), Some(bt_start)) = (self.estimation.to, self.backtest_range.from) {
            if est_end >= bt_start {
                return Err(config_err(format!(
                    "estimation range must end before the backtest range starts ({est_end} >= {bt_start})"
                )));
            }
        }
        for (name, r) in [("estimation", &self.estimation), ("backtest_range", &self.backtest_range)] {
            if let (Some(a), Some(b)) = (r.from, r.to) {
                if a > b {
                    return Err(config_err(format!("{name}: from {a} is after to {b}")));
                }
            }
        }
        self.dsfm.fit_options()?;
        self.dsfm.candidates()?;
        self.dsfm.h_star()?;
        if self.var.p == Some(0) || self.var.p_max == 0 {
            return Err(config_err("VAR order must be positive"));
        }
        if self.backtest.tenors.iter().any(|t| !(*t > 0.0)) || !(self.backtest.notional > 0.0) {
            return Err(config_err("backtest tenors and notional must be positive"));
        }
        if self.tree_steps == 0 {
            return Err(config_err("tree_steps must be positive"));
        }
        if let Some(b) = &self.basket {
            if b.index.is_empty() || b.tickers.len() != b.weights.len() {
                return Err(config_err("basket needs an index ticker and one weight per ticker"));
            }
        }
        self.synth.validate().map_err(|e| config_err(format!("synth: {e}")))?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn input_dir(&self) -> PathBuf {
        self.resolve(&self.inputs.dir)
    }

    pub fn input(&self, file: &Path) -> PathBuf {
        if file.is_absolute() {
            file.to_path_buf()
        } else {
            self.input_dir().join(file)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn ranges_must_be_ordered() {
        let text = "[estimation]\nto = 2010-07-30\n[backtest_range]\nfrom = 2010-07-30\n";
        assert!(RunConfig::from_toml(text).unwrap_err().is_config());
        let text = "[estimation]\nto = 2010-07-30\n[backtest_range]\nfrom = 2010-08-02\n";
        RunConfig::from_toml(text).unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_bandwidths_rejected() {
        assert!(RunConfig::from_toml("colour = 1").is_err());
        assert!(RunConfig::from_toml("[dsfm]\nh_mu = [0.0, 0.2]").is_err());
    }
}
