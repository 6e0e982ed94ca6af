//! Black–Scholes and Cox–Ross–Rubinstein pricing, implied-volatility
//! inversion, model-free implied variance and realized variance.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};
use crate::marketdata::{OptionRight, TRADING_DAYS_PER_YEAR};

pub const VOL_LOWER: f64 = 1e-4;
pub const VOL_UPPER: f64 = 5.0;
pub const PRICE_TOLERANCE: f64 = 1e-8;
pub const MAX_BISECTIONS: usize = 200;
pub const DEFAULT_TREE_STEPS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingInputs {
    pub spot: f64,
    pub strike: f64,
    pub rate: f64,
    pub tau: f64,
    pub vol: f64,
    pub right: OptionRight,
    /// Cash dividends as `(time in years, amount)`; ignored by the European pricer.
    pub dividends: Vec<(f64, f64)>,
}

impl PricingInputs {
    pub fn new(spot: f64, strike: f64, rate: f64, tau: f64, vol: f64, right: OptionRight) -> Self {
        Self {
            spot,
            strike,
            rate,
            tau,
            vol,
            right,
            dividends: Vec::new(),
        }
    }

    pub fn with_vol(&self, vol: f64) -> Self {
        Self { vol, ..self.clone() }
    }

    fn check(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.vol > 0.0) {
            return Err(invalid(format!("vol must be positive, got {}", self.vol)));
        }
        if !(self.spot > 0.0 && self.strike > 0.0) {
            return Err(invalid("spot and strike must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    Realized,
    ModelFreeImplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub window_or_tenor: f64,
    pub as_of: Option<NaiveDate>,
    pub kind: VarianceKind,
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Black–Scholes value of a European option.
pub fn european_price(inputs: &PricingInputs) -> Result<f64> {
    inputs.check()?;
    let PricingInputs {
        spot: s,
        strike: k,
        rate: r,
        tau: t,
        vol,
        right,
        ..
    } = *inputs;
    let sd = vol * t.sqrt();
    let d1 = ((s / k).ln() + (r + 0.5 * vol * vol) * t) / sd;
    let d2 = d1 - sd;
    let df = (-r * t).exp();
    Ok(match right {
        OptionRight::Call => s * norm_cdf(d1) - k * df * norm_cdf(d2),
        OptionRight::Put => k * df * norm_cdf(-d2) - s * norm_cdf(-d1),
    })
}

fn dividend_pv(dividends: &[(f64, f64)], rate: f64, from: f64) -> f64 {
    dividends
        .iter()
        .filter(|(t, _)| *t > from)
        .map(|(t, a)| a * (-rate * (t - from)).exp())
        .sum()
}

/// CRR binomial value with early exercise at every node.
///
/// Cash dividends use the escrowed model: the tree runs on spot less the
/// present value of dividends paid before expiry, and the dividends still
/// outstanding at a node are added back when testing exercise.
pub fn american_price(inputs: &PricingInputs, steps: usize) -> Result<f64> {
    inputs.check()?;
    if steps < 2 {
        return Err(invalid("tree needs at least 2 steps"));
    }
    let PricingInputs {
        spot,
        strike,
        rate,
        tau,
        vol,
        right,
        ..
    } = *inputs;
    let divs: Vec<(f64, f64)> = inputs
        .dividends
        .iter()
        .copied()
        .filter(|(t, a)| *t > 0.0 && *t <= tau && *a > 0.0)
        .collect();
    let pv0 = dividend_pv(&divs, rate, 0.0);
    if pv0 >= spot {
        return Err(invalid(format!("dividend PV {pv0} not below spot {spot}")));
    }
    let escrowed = spot - pv0;

    let dt = tau / steps as f64;
    let u = (vol * dt.sqrt()).exp();
    let d = 1.0 / u;
    let growth = (rate * dt).exp();
    let p = ((growth - d) / (u - d)).clamp(0.0, 1.0);
    let disc = 1.0 / growth;
    let (pu, pd) = (disc * p, disc * (1.0 - p));

    let payoff = |s: f64| match right {
        OptionRight::Call => (s - strike).max(0.0),
        OptionRight::Put => (strike - s).max(0.0),
    };

    let u2 = u * u;
    let mut values: Vec<f64> = Vec::with_capacity(steps + 1);
    let mut s = escrowed * d.powi(steps as i32);
    for _ in 0..=steps {
        values.push(payoff(s));
        s *= u2;
    }
    for i in (0..steps).rev() {
        let t = i as f64 * dt;
        let pv_left = if divs.is_empty() { 0.0 } else { dividend_pv(&divs, rate, t) };
        let mut s = escrowed * d.powi(i as i32);
        for j in 0..=i {
            let cont = pu * values[j + 1] + pd * values[j];
            values[j] = cont.max(payoff(s + pv_left));
            s *= u2;
        }
    }
    Ok(values[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PricingModel {
    European,
    American { steps: usize },
}

impl PricingModel {
    pub fn price(&self, inputs: &PricingInputs) -> Result<f64> {
        match *self {
            PricingModel::European => european_price(inputs),
            PricingModel::American { steps } => american_price(inputs, steps),
        }
    }
}

/// Invert a market price for volatility by bisection on `[1e-4, 5]`.
///
/// `inputs.vol` is ignored.
pub fn implied_vol(market_price: f64, inputs: &PricingInputs, model: PricingModel) -> Result<f64> {
    if !market_price.is_finite() {
        return Err(invalid("non-finite market price"));
    }
    let price_at = |v: f64| model.price(&inputs.with_vol(v));
    let mut lo = VOL_LOWER;
    let mut hi = VOL_UPPER;
    let p_lo = price_at(lo)?;
    let p_hi = price_at(hi)?;
    if market_price < p_lo - PRICE_TOLERANCE || market_price > p_hi + PRICE_TOLERANCE {
        return Err(Error::UnattainablePrice {
            price: market_price,
            low: p_lo,
            high: p_hi,
        });
    }
    if (market_price - p_lo).abs() < PRICE_TOLERANCE {
        return Ok(lo);
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let diff = price_at(mid)? - market_price;
        if diff.abs() < PRICE_TOLERANCE || hi - lo < 1e-14 {
            return Ok(mid);
        }
        if diff > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::NoConvergence {
        low: lo,
        high: hi,
        iterations: MAX_BISECTIONS,
    })
}

/// One out-of-the-money quote in a variance-swap replication chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainQuote {
    pub strike: f64,
    pub price: f64,
    pub right: OptionRight,
}

/// Model-free implied variance from an out-of-the-money strike chain:
/// `2 e^{r tau} / tau * sum dK_k Q(K_k) / K_k^2` with centered spacings and
/// half spacings at the two ends. No tail extrapolation.
pub fn mfiv(chain: &[ChainQuote], spot: f64, rate: f64, tau: f64) -> Result<VarianceEstimate> {
    if chain.len() < 3 {
        return Err(invalid(format!("need at least 3 strikes, got {}", chain.len())));
    }
    if chain.windows(2).any(|w| w[1].strike <= w[0].strike) {
        return Err(invalid("strikes must be strictly increasing"));
    }
    if !(tau > 0.0 && spot > 0.0) {
        return Err(invalid("spot and tau must be positive"));
    }
    for q in chain {
        let expected = if q.strike < spot { OptionRight::Put } else { OptionRight::Call };
        if q.right != expected {
            return Err(invalid(format!(
                "strike {} must be quoted as an out-of-the-money {:?}",
                q.strike, expected
            )));
        }
    }
    let n = chain.len();
    let sum: f64 = (0..n)
        .map(|k| {
            let dk = if k == 0 {
                0.5 * (chain[1].strike - chain[0].strike)
            } else if k == n - 1 {
                0.5 * (chain[n - 1].strike - chain[n - 2].strike)
            } else {
                0.5 * (chain[k + 1].strike - chain[k - 1].strike)
            };
            dk * chain[k].price / (chain[k].strike * chain[k].strike)
        })
        .sum();
    Ok(VarianceEstimate {
        value: 2.0 * (rate * tau).exp() / tau * sum,
        window_or_tenor: tau,
        as_of: None,
        kind: VarianceKind::ModelFreeImplied,
    })
}

/// Annualized realized variance over `round(252 tau)` daily log returns
/// starting at price index `start`.
pub fn realized_variance(prices: &[f64], start: usize, tau: f64) -> Result<VarianceEstimate> {
    if !(tau > 0.0) {
        return Err(invalid("tau must be positive"));
    }
    let n = (tau * TRADING_DAYS_PER_YEAR).round() as usize;
    if n == 0 {
        return Err(invalid("window shorter than one day"));
    }
    let end = start + n;
    if end >= prices.len() {
        return Err(Error::InsufficientData(format!(
            "window ends at index {end}, series has {} prices",
            prices.len()
        )));
    }
    let window = &prices[start..=end];
    if window.iter().any(|p| !(*p > 0.0)) {
        return Err(invalid("prices must be positive"));
    }
    let sum: f64 = window.windows(2).map(|w| (w[1] / w[0]).ln().powi(2)).sum();
    Ok(VarianceEstimate {
        value: sum / tau,
        window_or_tenor: tau,
        as_of: None,
        kind: VarianceKind::Realized,
    })
}
