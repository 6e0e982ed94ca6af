//! Seeded synthetic markets whose implied correlation surfaces follow a known
//! factor model. All randomness comes from one `ChaCha8Rng` stream seeded with
//! `SynthConfig::seed`, so output is identical across platforms.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::correlation::{basket_variance, fisher_z_inv, BasketSpec, CorrelationPoint, IvPoint};
use crate::error::{invalid, Error, Result};
use crate::marketdata::{
    add_trading_days, forward_moneyness, in_liquid_segment, write_market, write_trades, write_varswaps,
    year_fraction, ExerciseStyle, MarketData, MarketSnapshot, OptionRight, OptionTrade, RateCurve, SurfaceDay,
    SurfacePanel, SurfacePoint, VarSwapQuote, TAU_MIN, TRADING_DAYS_PER_YEAR,
};
use crate::vol::{american_price, european_price, realized_variance, PricingInputs};

pub const INDEX_TICKER: &str = "IDX";
const KAPPA_LO: f64 = 0.81;
const KAPPA_HI: f64 = 1.19;
const BURN_IN: usize = 200;
const RHO_CEILING: f64 = 0.9999;

/// Parameters of the two-segment relation between index vol (percentage
/// points) and correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub threshold: f64,
    pub slope_low: f64,
    pub slope_high: f64,
    pub noise_sd: f64,
    pub n: usize,
    pub vol_range: [f64; 2],
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self {
            threshold: 21.0,
            slope_low: 0.0328,
            slope_high: 0.0091,
            noise_sd: 0.01,
            n: 750,
            vol_range: [10.0, 40.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    #[serde(deserialize_with = "crate::config::date_format::deserialize")]
    pub start_date: NaiveDate,
    pub n_assets: usize,
    /// Days with option quotes and variance-swap strikes.
    pub n_days: usize,
    /// Additional price history after the last quote day.
    pub extra_days: usize,
    pub obs_per_day: usize,
    pub true_factor_count: usize,
    /// Fisher-scale mean surface `level + slope_u (u - 1/2) + slope_v (v - 1/2)`.
    pub mean_level: f64,
    pub mean_slope_u: f64,
    pub mean_slope_v: f64,
    /// Stationary standard deviation of each factor score.
    pub factor_sd: Vec<f64>,
    /// `(a1, a2)` of each factor's AR(2).
    pub factor_ar: Vec<[f64; 2]>,
    /// Fisher-scale observation noise on index points.
    pub noise_sd: f64,
    pub vol_range: [f64; 2],
    pub vol_persistence: f64,
    pub vol_of_vol: f64,
    pub smile_skew: [f64; 2],
    pub term_slope: [f64; 2],
    pub rate: f64,
    pub dividend_yield: f64,
    /// Listed expiries every this many trading days.
    pub expiry_spacing: u32,
    /// Constituent strike ladder in forward moneyness.
    pub ladder: Vec<f64>,
    pub emit_options: bool,
    /// Tree size for constituent prices; `generate` takes it from the run config.
    pub tree_steps: usize,
    pub tenors: Vec<f64>,
    /// Constituent strikes are `(1 + vrp)` times realized variance.
    pub vrp: f64,
    /// Realized correlation sits this far below the short-maturity ATM
    /// implied correlation.
    pub crp: f64,
    pub regime: Option<RegimeConfig>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            start_date: NaiveDate::from_ymd_opt(2009, 8, 3).expect("valid date"),
            n_assets: 5,
            n_days: 250,
            extra_days: 252,
            obs_per_day: 135,
            true_factor_count: 3,
            mean_level: 0.9,
            mean_slope_u: -0.1,
            mean_slope_v: 0.1,
            factor_sd: vec![0.14, 0.08, 0.05],
            factor_ar: vec![[0.35, 0.2], [0.3, 0.2], [0.25, 0.2]],
            noise_sd: 0.0,
            vol_range: [0.18, 0.32],
            vol_persistence: 0.98,
            vol_of_vol: 0.08,
            smile_skew: [0.3, 0.6],
            term_slope: [-0.1, 0.05],
            rate: 0.01,
            dividend_yield: 0.02,
            expiry_spacing: 21,
            ladder: (0..11).map(|k| 0.805 + 0.039 * k as f64).collect(),
            emit_options: true,
            tree_steps: crate::vol::DEFAULT_TREE_STEPS,
            tenors: vec![0.083, 0.25, 0.5, 1.0],
            vrp: 0.0,
            crp: 0.05,
            regime: None,
        }
    }
}

/// AR(2) stationary when its characteristic roots lie outside the unit circle.
pub fn ar2_is_stationary(a1: f64, a2: f64) -> bool {
    a2.abs() < 1.0 && a1 + a2 < 1.0 && a2 - a1 < 1.0
}

/// Innovation standard deviation giving stationary standard deviation `sd`.
fn ar2_innovation_sd(a1: f64, a2: f64, sd: f64) -> f64 {
    let ratio = (1.0 - a2) / ((1.0 + a2) * ((1.0 - a2).powi(2) - a1 * a1));
    sd / ratio.sqrt()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_assets < 2 {
            return Err(invalid("need at least two assets"));
        }
        if self.n_days == 0 || self.obs_per_day == 0 {
            return Err(invalid("n_days and obs_per_day must be positive"));
        }
        if !(1..=3).contains(&self.true_factor_count) {
            return Err(invalid("true_factor_count must be 1, 2 or 3"));
        }
        let l = self.true_factor_count;
        if self.factor_sd.len() < l || self.factor_ar.len() < l {
            return Err(invalid("factor_sd and factor_ar need one entry per factor"));
        }
        if self.factor_sd[..l].iter().any(|s| !(*s >= 0.0)) {
            return Err(invalid("factor standard deviations must be non-negative"));
        }
        if let Some([a1, a2]) = self.factor_ar[..l].iter().find(|[a1, a2]| !ar2_is_stationary(*a1, *a2)) {
            return Err(invalid(format!("factor AR(2) ({a1}, {a2}) is not stationary")));
        }
        if !(self.vol_range[0] > 0.0 && self.vol_range[0] <= self.vol_range[1]) {
            return Err(invalid("vol_range must be positive and ordered"));
        }
        if !(0.0..1.0).contains(&self.vol_persistence) || self.vol_of_vol < 0.0 || self.noise_sd < 0.0 {
            return Err(invalid("vol_persistence in [0, 1), vol_of_vol and noise_sd >= 0 required"));
        }
        if self.expiry_spacing == 0 {
            return Err(invalid("expiry_spacing must be positive"));
        }
        if self.emit_options {
            if self.ladder.len() < 2 || self.ladder.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid("ladder must hold at least two increasing moneyness levels"));
            }
            if self.ladder[0] > KAPPA_LO || *self.ladder.last().unwrap() < KAPPA_HI {
                return Err(invalid(format!("ladder must cover [{KAPPA_LO}, {KAPPA_HI}]")));
            }
            if self.tree_steps == 0 {
                return Err(invalid("tree_steps must be positive"));
            }
        }
        if self.tenors.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(invalid("tenors must lie in (0, 1]"));
        }
        if let Some(r) = &self.regime {
            if r.n < 20 || !(r.vol_range[0] < r.vol_range[1]) || r.noise_sd < 0.0 {
                return Err(invalid("regime sample needs n >= 20, an ordered vol range and noise >= 0"));
            }
        }
        Ok(())
    }

    fn mean_surface(&self, u: f64, v: f64) -> f64 {
        self.mean_level + self.mean_slope_u * (u - 0.5) + self.mean_slope_v * (v - 0.5)
    }

    /// Fisher-scale surface `m0 + sum_l z_l m_l` at unit-square coordinates.
    pub fn fisher_value(&self, z: &[f64], u: f64, v: f64) -> f64 {
        self.mean_surface(u, v) + z.iter().enumerate().map(|(l, zl)| zl * true_basis(l, u, v)).sum::<f64>()
    }
}

/// Orthonormal basis on the unit square: constant, maturity tilt, moneyness tilt.
pub fn true_basis(l: usize, u: f64, v: f64) -> f64 {
    match l {
        0 => 1.0,
        1 => 3f64.sqrt() * (2.0 * v - 1.0),
        2 => 3f64.sqrt() * (2.0 * u - 1.0),
        _ => 0.0,
    }
}

/// Raw moneyness of a unit coordinate.
pub fn kappa_of(u: f64) -> f64 {
    KAPPA_LO + (KAPPA_HI - KAPPA_LO) * u
}

pub fn u_of(kappa: f64) -> f64 {
    (kappa - KAPPA_LO) / (KAPPA_HI - KAPPA_LO)
}

/// Raw maturity of a unit coordinate; squaring skews maturities to the right.
pub fn tau_of(v: f64) -> f64 {
    TAU_MIN + (1.0 - TAU_MIN) * v * v
}

pub fn v_of(tau: f64) -> f64 {
    ((tau - TAU_MIN) / (1.0 - TAU_MIN)).clamp(0.0, 1.0).sqrt()
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Diagonal AR(2) factor scores after a burn-in.
fn simulate_scores(cfg: &SynthConfig, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let l = cfg.true_factor_count;
    let sds: Vec<f64> = (0..l)
        .map(|k| ar2_innovation_sd(cfg.factor_ar[k][0], cfg.factor_ar[k][1], cfg.factor_sd[k]))
        .collect();
    let mut prev = vec![0.0; l];
    let mut prev2 = vec![0.0; l];
    let mut out = Vec::with_capacity(n);
    for t in 0..BURN_IN + n {
        let z: Vec<f64> = (0..l)
            .map(|k| {
                let e = gauss(rng);
                cfg.factor_ar[k][0] * prev[k] + cfg.factor_ar[k][1] * prev2[k] + sds[k] * e
            })
            .collect();
        prev2 = std::mem::replace(&mut prev, z.clone());
        if t >= BURN_IN {
            out.push(z);
        }
    }
    out
}

fn weekdays_from(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let first = match start.weekday() {
        Weekday::Sat | Weekday::Sun => add_trading_days(start, 1),
        _ => start,
    };
    let mut out = Vec::with_capacity(n);
    let mut d = first;
    for _ in 0..n {
        out.push(d);
        d = add_trading_days(d, 1);
    }
    out
}

/// Panel drawn directly from the factor model, in raw coordinates, with
/// Fisher-scale values. Returns the panel and the true scores.
pub fn factor_panel(cfg: &SynthConfig) -> Result<(SurfacePanel, Vec<Vec<f64>>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scores = simulate_scores(cfg, cfg.n_days, &mut rng);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| invalid(e.to_string()))?;
    let dates = weekdays_from(cfg.start_date, cfg.n_days);
    let days = dates
        .iter()
        .zip(&scores)
        .map(|(&date, z)| {
            let points = (0..cfg.obs_per_day)
                .map(|_| {
                    let u: f64 = rng.gen();
                    let v: f64 = rng.gen();
                    SurfacePoint {
                        kappa: kappa_of(u),
                        tau: tau_of(v),
                        value: cfg.fisher_value(z, u, v) + noise.sample(&mut rng),
                    }
                })
                .collect();
            SurfaceDay { date, points }
        })
        .collect();
    Ok((SurfacePanel::new(days)?, scores))
}

/// Draws from the continuous two-segment relation.
pub fn breakpoint_sample(seed: u64, regime: &RegimeConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = Normal::new(0.0, regime.noise_sd).map_err(|e| invalid(e.to_string()))?;
    let c = regime.threshold;
    let x: Vec<f64> = (0..regime.n)
        .map(|_| rng.gen_range(regime.vol_range[0]..regime.vol_range[1]))
        .collect();
    let y = x
        .iter()
        .map(|&v| {
            let base = if v < c {
                regime.slope_low * v
            } else {
                regime.slope_low * c + regime.slope_high * (v - c)
            };
            base + eps.sample(&mut rng)
        })
        .collect();
    Ok((x, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakpointSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub index_ticker: String,
    pub basket: BasketSpec,
    /// Every simulated day; quote days are the first `n_days`.
    pub dates: Vec<NaiveDate>,
    pub scores: Vec<Vec<f64>>,
    /// Correlation of daily returns.
    pub realized_corr: Vec<f64>,
    /// Per-asset at-the-money vol level, by day.
    pub vol_levels: Vec<Vec<f64>>,
    /// Correlation at each generated index observation.
    pub correlation_points: Vec<CorrelationPoint>,
    pub breakpoint_sample: Option<BreakpointSample>,
}

impl GroundTruth {
    /// Noise-free implied correlation at raw coordinates on quote day `t`.
    pub fn implied_correlation(&self, t: usize, kappa: f64, tau: f64) -> f64 {
        fisher_z_inv(self.config.fisher_value(&self.scores[t], u_of(kappa), v_of(tau)))
    }
}

/// Implied-vol observations of one day as generated, before pricing.
#[derive(Debug, Clone, PartialEq)]
pub struct IvDay {
    pub date: NaiveDate,
    pub index: Vec<IvPoint>,
    pub constituents: Vec<Vec<IvPoint>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthMarket {
    pub trades: Vec<OptionTrade>,
    pub market: MarketData,
    pub varswaps: Vec<VarSwapQuote>,
    pub iv_days: Vec<IvDay>,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, Copy)]
struct Smile {
    skew: f64,
    term: f64,
}

impl Smile {
    fn vol(&self, level: f64, kappa: f64, tau: f64) -> f64 {
        level * (1.0 + self.skew * (1.0 - kappa) + self.term * (tau - 0.5))
    }
}

fn right_for(kappa: f64) -> OptionRight {
    if kappa < 1.0 {
        OptionRight::Put
    } else {
        OptionRight::Call
    }
}

pub fn generate_market(cfg: &SynthConfig) -> Result<SynthMarket> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_assets;
    let total_days = cfg.n_days + cfg.extra_days;
    let dates = weekdays_from(cfg.start_date, total_days);

    let tickers: Vec<String> = (0..n).map(|i| format!("S{:02}", i + 1)).collect();
    let raw_w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let w_total: f64 = raw_w.iter().sum();
    let mut weights: Vec<f64> = raw_w.iter().map(|x| x / w_total).collect();
    let rest: f64 = weights[1..].iter().sum();
    weights[0] = 1.0 - rest;
    let basket = BasketSpec::new(tickers.clone(), weights.clone())?;

    let base_vol: Vec<f64> = (0..n).map(|_| rng.gen_range(cfg.vol_range[0]..=cfg.vol_range[1])).collect();
    let smiles: Vec<Smile> = (0..n)
        .map(|_| Smile {
            skew: rng.gen_range(cfg.smile_skew[0]..=cfg.smile_skew[1]),
            term: rng.gen_range(cfg.term_slope[0]..=cfg.term_slope[1]),
        })
        .collect();
    let spot0: Vec<f64> = (0..n).map(|_| rng.gen_range(40.0..160.0)).collect();

    let scores = simulate_scores(cfg, total_days, &mut rng);

    // log vol deviations, AR(1) started from stationarity
    let phi = cfg.vol_persistence;
    let innov = cfg.vol_of_vol * (1.0 - phi * phi).sqrt();
    let mut x: Vec<f64> = (0..n).map(|_| cfg.vol_of_vol * gauss(&mut rng)).collect();
    let mut vol_levels = Vec::with_capacity(total_days);
    let mut realized_corr = Vec::with_capacity(total_days);
    let mut log_s: Vec<f64> = spot0.iter().map(|s| s.ln()).collect();
    let mut log_idx = 1000f64.ln();
    let mut paths: Vec<Vec<f64>> = vec![Vec::with_capacity(total_days); n + 1];
    for t in 0..total_days {
        if t > 0 {
            for xi in x.iter_mut() {
                *xi = phi * *xi + innov * gauss(&mut rng);
            }
        }
        let levels: Vec<f64> = base_vol.iter().zip(&x).map(|(b, xi)| b * xi.exp()).collect();
        let rho_atm = fisher_z_inv(cfg.fisher_value(&scores[t], 0.5, 0.0));
        let rho = (rho_atm - cfg.crp).clamp(0.0, 0.99);
        if t > 0 {
            let common = gauss(&mut rng);
            let mut idx_ret = 0.0;
            for i in 0..n {
                let own = gauss(&mut rng);
                let e = rho.sqrt() * common + (1.0 - rho).sqrt() * own;
                let s = vol_levels.last().map_or(levels[i], |l: &Vec<f64>| l[i]) / TRADING_DAYS_PER_YEAR.sqrt();
                let r = s * e - 0.5 * s * s;
                log_s[i] += r;
                idx_ret += weights[i] * r;
            }
            log_idx += idx_ret;
        }
        for i in 0..n {
            paths[i].push(log_s[i].exp());
        }
        paths[n].push(log_idx.exp());
        vol_levels.push(levels);
        realized_corr.push(rho);
    }

    let curve = RateCurve::new(vec![(1.0 / 12.0, cfg.rate), (1.0, cfg.rate + 0.005)])?;
    let div_step = 63;
    let dividends: BTreeMap<String, Vec<(NaiveDate, f64)>> = tickers
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let amount = cfg.dividend_yield / 4.0 * spot0[i];
            let offset = 10 + 7 * i;
            let divs = (offset..total_days + 300)
                .step_by(div_step)
                .map(|k| (add_trading_days(dates[0], k as u32), (amount * 1e4).round() / 1e4))
                .filter(|(_, a)| *a > 0.0)
                .collect();
            (t.clone(), divs)
        })
        .collect();

    let mut market = MarketData::new();
    for (t, &date) in dates.iter().enumerate() {
        let mut spot_by_ticker: BTreeMap<String, f64> =
            tickers.iter().enumerate().map(|(i, s)| (s.clone(), paths[i][t])).collect();
        spot_by_ticker.insert(INDEX_TICKER.to_string(), paths[n][t]);
        market.insert(
            date,
            MarketSnapshot {
                date: Some(date),
                spot_by_ticker,
                weights: tickers.iter().cloned().zip(weights.iter().copied()).collect(),
                rate_curve: curve.clone(),
                dividends: dividends.clone(),
            },
        );
    }

    let anchor = dates[0];
    let expiries: Vec<NaiveDate> = (1..=(total_days as u32 / cfg.expiry_spacing + 14))
        .map(|k| add_trading_days(anchor, k * cfg.expiry_spacing))
        .collect();
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| invalid(e.to_string()))?;

    let mut pending: Vec<(OptionTrade, PricingInputs)> = Vec::new();
    let mut iv_days = Vec::with_capacity(cfg.n_days);
    let mut points = Vec::new();
    for t in 0..cfg.n_days {
        let date = dates[t];
        let snap = &market[&date];
        let listed: Vec<(NaiveDate, f64)> = expiries
            .iter()
            .map(|&e| (e, year_fraction(date, e)))
            .filter(|(_, tau)| *tau >= TAU_MIN - 1e-12 && *tau <= 1.0 + 1e-12)
            .collect();
        if listed.is_empty() {
            return Err(invalid(format!("no listed expiry within the maturity range on {date}")));
        }
        let mut day = IvDay {
            date,
            index: Vec::with_capacity(cfg.obs_per_day),
            constituents: vec![Vec::new(); n],
        };
        let mut used: BTreeMap<NaiveDate, f64> = BTreeMap::new();
        let index_spot = snap.spot(INDEX_TICKER)?;
        for _ in 0..cfg.obs_per_day {
            let u: f64 = rng.gen();
            let target = tau_of(rng.gen());
            let &(expiry, tau) = listed
                .iter()
                .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
                .expect("non-empty");
            let rate = curve.rate(tau)?;
            let strike = kappa_of(u) * index_spot * (rate * tau).exp();
            let kappa = forward_moneyness(strike, index_spot, rate, tau);
            let vols: Vec<f64> = (0..n).map(|i| smiles[i].vol(vol_levels[t][i], kappa, tau)).collect();
            let y = cfg.fisher_value(&scores[t], u_of(kappa), v_of(tau)) + noise.sample(&mut rng);
            let rho = fisher_z_inv(y);
            if !(rho > 0.0 && rho < RHO_CEILING) {
                return Err(Error::Domain(format!(
                    "generated correlation {rho} on {date} outside (0, {RHO_CEILING})"
                )));
            }
            let index_vol = basket_variance(&vols, &weights, rho)?.sqrt();
            used.insert(expiry, tau);
            day.index.push(IvPoint { expiry, kappa, tau, vol: index_vol });
            points.push(CorrelationPoint { date, kappa, tau, rho, index_vol });
            if cfg.emit_options {
                let right = right_for(kappa);
                let inputs = PricingInputs::new(index_spot, strike, rate, tau, index_vol, right);
                pending.push((
                    OptionTrade {
                        trade_date: date,
                        expiry_date: expiry,
                        underlying: INDEX_TICKER.to_string(),
                        strike,
                        price: f64::NAN,
                        right,
                        style: ExerciseStyle::European,
                    },
                    inputs,
                ));
            }
        }
        for (i, ticker) in tickers.iter().enumerate() {
            let spot = snap.spot(ticker)?;
            for (&expiry, &tau) in &used {
                let rate = curve.rate(tau)?;
                let divs = snap.dividends_until(ticker, expiry);
                for &k in &cfg.ladder {
                    let strike = k * spot * (rate * tau).exp();
                    let kappa = forward_moneyness(strike, spot, rate, tau);
                    let right = right_for(kappa);
                    if !in_liquid_segment(right, kappa, tau) {
                        continue;
                    }
                    let vol = smiles[i].vol(vol_levels[t][i], kappa, tau);
                    day.constituents[i].push(IvPoint { expiry, kappa, tau, vol });
                    if cfg.emit_options {
                        let mut inputs = PricingInputs::new(spot, strike, rate, tau, vol, right);
                        inputs.dividends = divs.clone();
                        pending.push((
                            OptionTrade {
                                trade_date: date,
                                expiry_date: expiry,
                                underlying: ticker.clone(),
                                strike,
                                price: f64::NAN,
                                right,
                                style: ExerciseStyle::American,
                            },
                            inputs,
                        ));
                    }
                }
            }
        }
        iv_days.push(day);
    }
    let trades = pending
        .into_par_iter()
        .map(|(mut trade, inputs)| {
            trade.price = match trade.style {
                ExerciseStyle::European => european_price(&inputs)?,
                ExerciseStyle::American => american_price(&inputs, cfg.tree_steps)?,
            };
            Ok(trade)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut varswaps = Vec::new();
    for t in 0..total_days {
        for &tenor in &cfg.tenors {
            let rv: Vec<f64> = match (0..n).map(|i| realized_variance(&paths[i], t, tenor).map(|v| v.value)).collect()
            {
                Ok(v) => v,
                Err(_) => continue,
            };
            let strikes: Vec<f64> = rv.iter().map(|v| (1.0 + cfg.vrp) * v).collect();
            let implied_vols: Vec<f64> = strikes.iter().map(|v| v.sqrt()).collect();
            let rho = fisher_z_inv(cfg.fisher_value(&scores[t], 0.5, v_of(tenor)));
            let index_strike = basket_variance(&implied_vols, &weights, rho)?;
            varswaps.push(VarSwapQuote {
                date: dates[t],
                ticker: INDEX_TICKER.to_string(),
                tenor,
                strike_var: index_strike,
            });
            for (ticker, k) in tickers.iter().zip(&strikes) {
                varswaps.push(VarSwapQuote {
                    date: dates[t],
                    ticker: ticker.clone(),
                    tenor,
                    strike_var: *k,
                });
            }
        }
    }

    let breakpoint_sample = match &cfg.regime {
        Some(r) => {
            let (x, y) = breakpoint_sample(rng.gen(), r)?;
            Some(BreakpointSample { x, y })
        }
        None => None,
    };

    Ok(SynthMarket {
        trades,
        market,
        varswaps,
        iv_days,
        truth: GroundTruth {
            config: cfg.clone(),
            index_ticker: INDEX_TICKER.to_string(),
            basket,
            dates,
            scores,
            realized_corr,
            vol_levels,
            correlation_points: points,
            breakpoint_sample,
        },
    })
}

pub const TRADES_FILE: &str = "trades.csv";
pub const SNAPSHOTS_FILE: &str = "snapshots.csv";
pub const RATES_FILE: &str = "rates.csv";
pub const DIVIDENDS_FILE: &str = "dividends.csv";
pub const VARSWAPS_FILE: &str = "varswaps.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Write every input CSV plus the ground truth into `dir`, creating it.
pub fn write_market_files(dir: &Path, m: &SynthMarket) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_trades(create(dir, TRADES_FILE)?, &m.trades)?;
    write_market(
        &m.market,
        create(dir, SNAPSHOTS_FILE)?,
        create(dir, RATES_FILE)?,
        create(dir, DIVIDENDS_FILE)?,
    )?;
    write_varswaps(create(dir, VARSWAPS_FILE)?, &m.varswaps)?;
    let json = serde_json::to_string_pretty(&m.truth)?;
    fs::write(dir.join(GROUND_TRUTH_FILE), json + "\n")?;
    Ok(())
}
