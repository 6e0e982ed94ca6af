//! Variance swaps, dispersion payoffs, correlation hedges, backtests and
//! summary statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::correlation::{cross_vol_sum, equicorrelation, BasketSpec};
use crate::error::{invalid, Error, Result};
use crate::marketdata::{VarSwapQuote, TRADING_DAYS_PER_YEAR};
use crate::vol::realized_variance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Long,
    Short,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Long => 1.0,
            Direction::Short => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSwap {
    pub underlying: String,
    pub strike_var: f64,
    pub tenor: f64,
    pub notional: f64,
    pub direction: Direction,
    pub open_date: NaiveDate,
}

impl VarianceSwap {
    pub fn validate(&self) -> Result<()> {
        if !(self.strike_var >= 0.0) || !(self.notional > 0.0) || !(self.tenor > 0.0) {
            return Err(invalid("variance swap needs strike >= 0, notional > 0, tenor > 0"));
        }
        Ok(())
    }
}

pub fn variance_swap_payoff(swap: &VarianceSwap, realized_var: f64) -> Result<f64> {
    if !(realized_var >= 0.0) {
        return Err(invalid("realized variance must be non-negative"));
    }
    Ok(swap.direction.sign() * (realized_var - swap.strike_var) * swap.notional)
}

/// Short index variance against long constituent variances with `w_i^2`
/// notionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionTrade {
    pub basket: BasketSpec,
    pub index_leg: VarianceSwap,
    pub constituent_legs: Vec<VarianceSwap>,
    pub open_date: NaiveDate,
    pub tenor: f64,
}

impl DispersionTrade {
    pub fn new(
        basket: BasketSpec,
        index_ticker: &str,
        index_strike_var: f64,
        constituent_strike_vars: &[f64],
        open_date: NaiveDate,
        tenor: f64,
        notional: f64,
    ) -> Result<Self> {
        basket.validate()?;
        if constituent_strike_vars.len() != basket.len() {
            return Err(invalid("one constituent strike per basket member required"));
        }
        let leg = |underlying: String, strike_var: f64, notional: f64, direction| VarianceSwap {
            underlying,
            strike_var,
            tenor,
            notional,
            direction,
            open_date,
        };
        let trade = Self {
            index_leg: leg(index_ticker.to_string(), index_strike_var, notional, Direction::Short),
            constituent_legs: basket
                .tickers
                .iter()
                .zip(&basket.weights)
                .zip(constituent_strike_vars)
                .map(|((t, w), k)| leg(t.clone(), *k, notional * w * w, Direction::Long))
                .collect(),
            basket,
            open_date,
            tenor,
        };
        trade.validate()?;
        Ok(trade)
    }

    pub fn validate(&self) -> Result<()> {
        self.index_leg.validate()?;
        if self.index_leg.direction != Direction::Short {
            return Err(invalid("index leg must be short"));
        }
        for leg in &self.constituent_legs {
            leg.validate()?;
            if leg.direction != Direction::Long {
                return Err(invalid("constituent legs must be long"));
            }
            if leg.tenor != self.tenor {
                return Err(invalid("leg tenors differ"));
            }
        }
        if self.index_leg.tenor != self.tenor {
            return Err(invalid("leg tenors differ"));
        }
        Ok(())
    }

    pub fn notional(&self) -> f64 {
        self.index_leg.notional
    }

    pub fn implied_vols(&self) -> Vec<f64> {
        self.constituent_legs.iter().map(|l| l.strike_var.sqrt()).collect()
    }

    /// Correlation implied by the leg strikes.
    pub fn implied_correlation(&self) -> Result<f64> {
        equicorrelation(self.index_leg.strike_var, &self.implied_vols(), &self.basket.weights)
    }
}

/// Sum of leg payoffs.
pub fn dispersion_payoff(trade: &DispersionTrade, realized_index_var: f64, realized_vars: &[f64]) -> Result<f64> {
    if realized_vars.len() != trade.constituent_legs.len() {
        return Err(invalid("realized variance missing for a constituent leg"));
    }
    let mut total = variance_swap_payoff(&trade.index_leg, realized_index_var)?;
    for (leg, rv) in trade.constituent_legs.iter().zip(realized_vars) {
        total += variance_swap_payoff(leg, *rv)?;
    }
    Ok(total)
}

/// The same payoff written through implied and realized equicorrelation.
pub fn dispersion_payoff_correlation_form(
    trade: &DispersionTrade,
    realized_index_var: f64,
    realized_vars: &[f64],
) -> Result<f64> {
    let w = &trade.basket.weights;
    let implied_vols = trade.implied_vols();
    let realized_vols: Vec<f64> = realized_vars.iter().map(|v| v.sqrt()).collect();
    let rho_implied = equicorrelation(trade.index_leg.strike_var, &implied_vols, w)?;
    let rho_realized = equicorrelation(realized_index_var, &realized_vols, w)?;
    Ok(trade.notional()
        * (rho_implied * cross_vol_sum(&implied_vols, w) - rho_realized * cross_vol_sum(&realized_vols, w)))
}

/// Value of the offsetting correlation position sized by the forecast.
pub fn naive_hedge_value(implied_vols: &[f64], weights: &[f64], mfic: f64, forecast_rho: f64, notional: f64) -> f64 {
    notional * cross_vol_sum(implied_vols, weights) * (mfic - forecast_rho)
}

/// `(D_h - D) / D`; `None` when `D` is zero.
pub fn hedge_error(d: f64, d_h: f64) -> Option<f64> {
    (d != 0.0).then(|| (d_h - d) / d)
}

/// Hedge only when the forecast is at or above the implied correlation.
pub fn advanced_payoff(d: f64, d_h: f64, forecast_rho: f64, mfic: f64) -> f64 {
    if forecast_rho >= mfic {
        d - d_h
    } else {
        d
    }
}

/// Inputs available to a forecaster for one trade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastContext {
    pub open_index: usize,
    pub expiry_index: usize,
    pub open_date: NaiveDate,
    pub expiry_date: NaiveDate,
    pub tenor: f64,
    /// Realized correlation over the trade's life; only an oracle may use it.
    pub realized_corr: f64,
}

pub trait CorrelationForecaster: Sync {
    fn forecast(&self, ctx: &ForecastContext) -> Result<f64>;
}

/// Perfect foresight: returns the realized correlation.
pub struct OracleForecaster;

impl CorrelationForecaster for OracleForecaster {
    fn forecast(&self, ctx: &ForecastContext) -> Result<f64> {
        Ok(ctx.realized_corr)
    }
}

/// Always returns the same correlation.
pub struct ConstantForecaster(pub f64);

impl CorrelationForecaster for ConstantForecaster {
    fn forecast(&self, _: &ForecastContext) -> Result<f64> {
        Ok(self.0)
    }
}

/// Market history needed to open and settle dispersion trades.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestData {
    pub basket: BasketSpec,
    pub index_ticker: String,
    /// Trading days, increasing.
    pub dates: Vec<NaiveDate>,
    /// Closing prices aligned with `dates`.
    pub prices: BTreeMap<String, Vec<f64>>,
    /// Variance-swap strikes by `(date, ticker)`: `(tenor, strike_var)` pairs.
    pub strikes: BTreeMap<(NaiveDate, String), Vec<(f64, f64)>>,
    pub notional: f64,
}

impl BacktestData {
    pub fn new(
        basket: BasketSpec,
        index_ticker: String,
        dates: Vec<NaiveDate>,
        prices: BTreeMap<String, Vec<f64>>,
        quotes: &[VarSwapQuote],
        notional: f64,
    ) -> Result<Self> {
        basket.validate()?;
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("backtest dates must increase strictly"));
        }
        for t in basket.tickers.iter().chain(std::iter::once(&index_ticker)) {
            match prices.get(t) {
                Some(p) if p.len() == dates.len() => {}
                _ => return Err(invalid(format!("price history for {t} does not cover every date"))),
            }
        }
        if !(notional > 0.0) {
            return Err(invalid("notional must be positive"));
        }
        let mut strikes: BTreeMap<(NaiveDate, String), Vec<(f64, f64)>> = BTreeMap::new();
        for q in quotes {
            strikes.entry((q.date, q.ticker.clone())).or_default().push((q.tenor, q.strike_var));
        }
        for v in strikes.values_mut() {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        Ok(Self {
            basket,
            index_ticker,
            dates,
            prices,
            strikes,
            notional,
        })
    }

    /// Strike for a tenor: exact match, else linear in tenor between quotes.
    pub fn strike(&self, date: NaiveDate, ticker: &str, tenor: f64) -> Option<f64> {
        let q = self.strikes.get(&(date, ticker.to_string()))?;
        if let Some((_, k)) = q.iter().find(|(t, _)| (t - tenor).abs() < 1e-9) {
            return Some(*k);
        }
        let i = q.partition_point(|(t, _)| *t < tenor);
        if i == 0 || i == q.len() {
            return None;
        }
        let ((t0, k0), (t1, k1)) = (q[i - 1], q[i]);
        Some(k0 + (k1 - k0) * (tenor - t0) / (t1 - t0))
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub open_date: NaiveDate,
    pub tenor: f64,
    pub mfic: f64,
    pub realized_corr: f64,
    pub forecast_corr: f64,
    pub d: f64,
    pub d_h: f64,
    pub d_adv: f64,
    pub hedge_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BacktestLedger {
    pub rows: Vec<LedgerRow>,
    pub tenor: f64,
    pub delta_t: f64,
    pub span: Option<(NaiveDate, NaiveDate)>,
    /// Origination dates lacking prices or strikes through expiry.
    pub incomplete: usize,
    pub forecast_failures: Vec<NaiveDate>,
}

pub const LEDGER_HEADER: [&str; 9] = [
    "open_date",
    "tenor",
    "mfic",
    "realized_corr",
    "forecast_corr",
    "D",
    "D_h",
    "D_adv",
    "hedge_error",
];

enum RowOutcome {
    Row(LedgerRow),
    Incomplete,
    ForecastFailed(NaiveDate),
}

fn backtest_row(data: &BacktestData, i: usize, tenor: f64, forecaster: &dyn CorrelationForecaster) -> Result<RowOutcome> {
    let n = (tenor * TRADING_DAYS_PER_YEAR).round() as usize;
    let e = i + n;
    if n == 0 || e >= data.dates.len() {
        return Ok(RowOutcome::Incomplete);
    }
    let open = data.dates[i];
    let tickers = &data.basket.tickers;
    let Some(index_strike) = data.strike(open, &data.index_ticker, tenor) else {
        return Ok(RowOutcome::Incomplete);
    };
    let Some(strikes) = tickers.iter().map(|t| data.strike(open, t, tenor)).collect::<Option<Vec<f64>>>() else {
        return Ok(RowOutcome::Incomplete);
    };
    let rv = |t: &String| realized_variance(&data.prices[t], i, tenor).map(|v| v.value);
    let index_rv = rv(&data.index_ticker)?;
    let rvs = tickers.iter().map(rv).collect::<Result<Vec<_>>>()?;

    let trade = DispersionTrade::new(
        data.basket.clone(),
        &data.index_ticker,
        index_strike,
        &strikes,
        open,
        tenor,
        data.notional,
    )?;
    let mfic = trade.implied_correlation()?;
    let realized_vols: Vec<f64> = rvs.iter().map(|v| v.sqrt()).collect();
    let realized_corr = equicorrelation(index_rv, &realized_vols, &data.basket.weights)?;
    let ctx = ForecastContext {
        open_index: i,
        expiry_index: e,
        open_date: open,
        expiry_date: data.dates[e],
        tenor,
        realized_corr,
    };
    let forecast = match forecaster.forecast(&ctx) {
        Ok(f) if f.is_finite() => f,
        _ => return Ok(RowOutcome::ForecastFailed(open)),
    };
    let d = dispersion_payoff(&trade, index_rv, &rvs)?;
    let d_h = naive_hedge_value(&trade.implied_vols(), &data.basket.weights, mfic, forecast, data.notional);
    Ok(RowOutcome::Row(LedgerRow {
        open_date: open,
        tenor,
        mfic,
        realized_corr,
        forecast_corr: forecast,
        d,
        d_h,
        d_adv: advanced_payoff(d, d_h, forecast, mfic),
        hedge_error: hedge_error(d, d_h),
    }))
}

/// One dispersion trade per trading day in `[from, to]`.
pub fn run_backtest(
    data: &BacktestData,
    tenor: f64,
    from: NaiveDate,
    to: NaiveDate,
    forecaster: &dyn CorrelationForecaster,
) -> Result<BacktestLedger> {
    if !(tenor > 0.0) {
        return Err(invalid("tenor must be positive"));
    }
    let opens: Vec<usize> = (0..data.dates.len())
        .filter(|&i| data.dates[i] >= from && data.dates[i] <= to)
        .collect();
    let outcomes = opens
        .par_iter()
        .map(|&i| backtest_row(data, i, tenor, forecaster))
        .collect::<Result<Vec<_>>>()?;
    let mut ledger = BacktestLedger {
        tenor,
        delta_t: 1.0 / TRADING_DAYS_PER_YEAR,
        ..Default::default()
    };
    for o in outcomes {
        match o {
            RowOutcome::Row(r) => ledger.rows.push(r),
            RowOutcome::Incomplete => ledger.incomplete += 1,
            RowOutcome::ForecastFailed(d) => ledger.forecast_failures.push(d),
        }
    }
    ledger.span = match (ledger.rows.first(), ledger.rows.last()) {
        (Some(a), Some(b)) => Some((a.open_date, b.open_date)),
        _ => None,
    };
    Ok(ledger)
}

pub fn write_ledger<W: Write>(out: W, ledgers: &[BacktestLedger]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LEDGER_HEADER)?;
    for l in ledgers {
        for r in &l.rows {
            w.write_record([
                r.open_date.to_string(),
                r.tenor.to_string(),
                r.mfic.to_string(),
                r.realized_corr.to_string(),
                r.forecast_corr.to_string(),
                r.d.to_string(),
                r.d_h.to_string(),
                r.d_adv.to_string(),
                r.hedge_error.map(|e| e.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Ledger rows grouped by tenor, in order of first appearance.
pub fn read_ledger<R: std::io::Read>(input: R) -> Result<Vec<BacktestLedger>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != LEDGER_HEADER {
        return Err(Error::Row {
            line: 1,
            message: format!("expected header {}", LEDGER_HEADER.join(",")),
        });
    }
    let mut ledgers: Vec<BacktestLedger> = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec?;
        let bad = |m: String| Error::Row { line, message: m };
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("{}: not a number: {:?}", LEDGER_HEADER[i], &rec[i])))
        };
        let open_date = NaiveDate::parse_from_str(rec[0].trim(), "%Y-%m-%d")
            .map_err(|_| bad(format!("open_date: bad date {:?}", &rec[0])))?;
        let row = LedgerRow {
            open_date,
            tenor: num(1)?,
            mfic: num(2)?,
            realized_corr: num(3)?,
            forecast_corr: num(4)?,
            d: num(5)?,
            d_h: num(6)?,
            d_adv: num(7)?,
            hedge_error: if rec[8].trim().is_empty() { None } else { Some(num(8)?) },
        };
        let pos = match ledgers.iter().position(|l| l.tenor == row.tenor) {
            Some(p) => p,
            None => {
                ledgers.push(BacktestLedger {
                    tenor: row.tenor,
                    delta_t: 1.0 / TRADING_DAYS_PER_YEAR,
                    ..Default::default()
                });
                ledgers.len() - 1
            }
        };
        ledgers[pos].rows.push(row);
    }
    for l in &mut ledgers {
        l.span = match (l.rows.first(), l.rows.last()) {
            (Some(a), Some(b)) => Some((a.open_date, b.open_date)),
            _ => None,
        };
    }
    Ok(ledgers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alternative {
    Less,
    Greater,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
    pub reject_at_5pct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation.
    pub stdd: f64,
    /// Standardized third central moment.
    pub skewness: f64,
    /// Standardized fourth central moment, not excess.
    pub kurtosis: f64,
    /// One-sided test of zero mean; `None` when the series is constant.
    pub mean_test: Option<TTest>,
}

/// One-sample t-test of zero mean against the stated alternative;
/// `None` when the sample has no dispersion.
pub fn mean_t_test(x: &[f64], alternative: Alternative) -> Result<Option<TTest>> {
    if x.len() < 2 {
        return Err(Error::InsufficientData("t-test needs two observations".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Ok(None);
    }
    let t = mean / (var / n).sqrt();
    let df = n - 1.0;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Domain(e.to_string()))?;
    let p_value = match alternative {
        Alternative::Less => dist.cdf(t),
        Alternative::Greater => 1.0 - dist.cdf(t),
    };
    Ok(Some(TTest {
        statistic: t,
        df,
        p_value,
        reject_at_5pct: p_value < 0.05,
    }))
}

/// Paired test on `x - y`; `Alternative::Less` means mean(x) < mean(y).
pub fn paired_t_test(x: &[f64], y: &[f64], alternative: Alternative) -> Result<Option<TTest>> {
    if x.len() != y.len() {
        return Err(invalid("paired samples differ in length"));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    mean_t_test(&d, alternative)
}

pub fn payoff_summary(x: &[f64], alternative: Alternative) -> Result<SummaryStats> {
    if x.len() < 2 {
        return Err(Error::InsufficientData("summary needs two observations".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite observation"));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(SummaryStats {
        n: k,
        min: sorted[0],
        max: sorted[k - 1],
        mean,
        median,
        stdd: (m2 * n / (n - 1.0)).sqrt(),
        skewness,
        kurtosis,
        mean_test: mean_t_test(x, alternative)?,
    })
}

fn cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2}")
    } else {
        "n/a".into()
    }
}

/// Hedge-error moments per tenor: tenor, min, max, mean, median, stdd,
/// skewness, kurtosis. Rows with `D = 0` are excluded.
pub fn hedge_error_table(ledgers: &[BacktestLedger]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
        "tau", "Min.", "Max.", "Mean.", "Median", "Stdd.", "Skew.", "Kurt."
    );
    for l in ledgers {
        let e: Vec<f64> = l.rows.iter().filter_map(|r| r.hedge_error).collect();
        let Ok(s) = payoff_summary(&e, Alternative::Less) else {
            continue;
        };
        let _ = writeln!(
            out,
            "{:<8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
            l.tenor,
            cell(s.min),
            cell(s.max),
            cell(s.mean),
            cell(s.median),
            cell(s.stdd),
            cell(s.skewness),
            cell(s.kurtosis)
        );
    }
    out
}

/// Payoff statistics of the three strategies for every tenor.
pub fn strategy_table(ledgers: &[BacktestLedger]) -> String {
    type Pick = fn(&LedgerRow) -> f64;
    let strategies: [(&str, &str, Pick); 3] = [
        ("D", "(no hedge)", |r| r.d),
        ("D - D_h", "(naive hedge)", |r| r.d - r.d_h),
        ("D_adv", "(advanced hedge)", |r| r.d_adv),
    ];
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18}{:<8}{:>10}{:>10}{:>10}{:>10}",
        "Strategy", "tau", "Min.", "Max.", "Mean.", "Stdd."
    );
    for (name, note, pick) in strategies {
        let mut line = 0;
        for l in ledgers {
            let xs: Vec<f64> = l.rows.iter().map(pick).collect();
            let Ok(s) = payoff_summary(&xs, Alternative::Greater) else {
                continue;
            };
            let label = match line {
                0 => name,
                1 => note,
                _ => "",
            };
            line += 1;
            let _ = writeln!(
                out,
                "{:<18}{:<8}{:>10}{:>10}{:>10}{:>10}",
                label,
                l.tenor,
                cell(s.min),
                cell(s.max),
                cell(s.mean),
                cell(s.stdd)
            );
        }
        if line == 1 {
            let _ = writeln!(out, "{note}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2010, 8, 2).unwrap()
    }

    fn swap(direction: Direction) -> VarianceSwap {
        VarianceSwap {
            underlying: "A".into(),
            strike_var: 0.04,
            tenor: 0.25,
            notional: 100.0,
            direction,
            open_date: day(),
        }
    }

    #[test]
    fn variance_swap_examples() {
        assert_eq!(variance_swap_payoff(&swap(Direction::Long), 0.04).unwrap(), 0.0);
        assert!((variance_swap_payoff(&swap(Direction::Long), 0.05).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            variance_swap_payoff(&swap(Direction::Short), 0.05).unwrap(),
            -variance_swap_payoff(&swap(Direction::Long), 0.05).unwrap()
        );
        assert!(variance_swap_payoff(&swap(Direction::Long), -0.1).is_err());
    }

    fn basket(n: usize, rng: &mut impl Rng) -> BasketSpec {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let rest: f64 = w[1..].iter().sum();
        w[0] = 1.0 - rest;
        BasketSpec::new((0..n).map(|i| format!("S{i}")).collect(), w).unwrap()
    }

    #[test]
    fn flat_expiry_pays_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = basket(4, &mut rng);
        let k = [0.04, 0.05, 0.06, 0.03];
        let t = DispersionTrade::new(b, "IDX", 0.03, &k, day(), 0.25, 1.0).unwrap();
        assert_eq!(dispersion_payoff(&t, 0.03, &k).unwrap(), 0.0);
    }

    #[test]
    fn lower_realized_correlation_pays() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = basket(3, &mut rng);
        let vols = [0.2, 0.25, 0.3];
        let vars: Vec<f64> = vols.iter().map(|v| v * v).collect();
        let implied = crate::correlation::basket_variance(&vols, &b.weights, 0.6).unwrap();
        let realized = crate::correlation::basket_variance(&vols, &b.weights, 0.4).unwrap();
        let t = DispersionTrade::new(b, "IDX", implied, &vars, day(), 0.25, 1.0).unwrap();
        assert!(dispersion_payoff(&t, realized, &vars).unwrap() > 0.0);
    }

    #[test]
    fn naive_hedge_examples() {
        let vols = [0.2, 0.3];
        let w = [0.5, 0.5];
        assert_eq!(naive_hedge_value(&vols, &w, 0.5, 0.5, 1.0), 0.0);
        let diff = naive_hedge_value(&vols, &w, 0.5, 0.4, 1.0) - naive_hedge_value(&vols, &w, 0.5, 0.6, 1.0);
        assert!((diff - 0.2 * cross_vol_sum(&vols, &w)).abs() < 1e-15);
    }

    #[test]
    fn hedge_error_examples() {
        assert_eq!(hedge_error(5.0, 5.0), Some(0.0));
        assert_eq!(hedge_error(5.0, 0.0), Some(-1.0));
        assert_eq!(hedge_error(0.0, 1.0), None);
        // forecast between realized 0.4 and implied 0.6
        let s = 0.03;
        let d = s * (0.6 - 0.4);
        let d_h = s * (0.6 - 0.5);
        let e = hedge_error(d, d_h).unwrap();
        assert!(e > -1.0 && e < 0.0);
    }

    #[test]
    fn advanced_branches() {
        assert_eq!(advanced_payoff(3.0, 1.0, 0.4, 0.5), 3.0);
        assert_eq!(advanced_payoff(3.0, 1.0, 0.5, 0.5), 2.0);
    }

    #[test]
    fn summary_degenerate_and_shift() {
        let s = payoff_summary(&[1.0, 1.0, 1.0], Alternative::Less).unwrap();
        assert_eq!((s.mean, s.stdd), (1.0, 0.0));
        assert!(s.mean_test.is_none());
        assert!(payoff_summary(&[1.0], Alternative::Less).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        let t = paired_t_test(&x, &y, Alternative::Less).unwrap().unwrap();
        assert!(t.p_value < 1e-10 && t.reject_at_5pct);
    }

    #[test]
    fn summary_of_normal_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..10000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = payoff_summary(&x, Alternative::Less).unwrap();
        assert!(s.mean.abs() < 0.03);
        assert!((s.kurtosis - 3.0).abs() < 0.15);
    }

    #[test]
    fn ledger_round_trip() {
        let row = |d: u32, tenor: f64, e: Option<f64>| LedgerRow {
            open_date: NaiveDate::from_ymd_opt(2010, 8, d).unwrap(),
            tenor,
            mfic: 0.6,
            realized_corr: 0.45,
            forecast_corr: 0.5,
            d: 1.0 / 3.0,
            d_h: 0.1,
            d_adv: 0.2,
            hedge_error: e,
        };
        let ledgers = vec![
            BacktestLedger {
                rows: vec![row(2, 0.25, Some(-0.7)), row(3, 0.25, None)],
                tenor: 0.25,
                delta_t: 1.0 / TRADING_DAYS_PER_YEAR,
                span: Some((row(2, 0.25, None).open_date, row(3, 0.25, None).open_date)),
                ..Default::default()
            },
            BacktestLedger {
                rows: vec![row(2, 1.0, Some(0.1))],
                tenor: 1.0,
                delta_t: 1.0 / TRADING_DAYS_PER_YEAR,
                span: Some((row(2, 1.0, None).open_date, row(2, 1.0, None).open_date)),
                ..Default::default()
            },
        ];
        let mut buf = Vec::new();
        write_ledger(&mut buf, &ledgers).unwrap();
        assert_eq!(read_ledger(buf.as_slice()).unwrap(), ledgers);

        let bad = "open_date,tenor,mfic,realized_corr,forecast_corr,D,D_h,D_adv,hedge_error\n2010-08-02,x,1,1,1,1,1,1,\n";
        match read_ledger(bad.as_bytes()) {
            Err(Error::Row { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn weights(raw: &[f64]) -> Vec<f64> {
        let total: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let rest: f64 = w[1..].iter().sum();
        w[0] = 1.0 - rest;
        w
    }

    proptest! {
        #[test]
        fn payoff_forms_agree(
            raw in prop::collection::vec(0.1f64..1.0, 2..12),
            seed_vols in prop::collection::vec((0.05f64..0.8, 0.05f64..0.8), 12),
            rho_i in 0.0f64..0.95,
            rho_r in 0.0f64..0.95,
            notional in 1.0f64..1e4,
        ) {
            let n = raw.len();
            let w = weights(&raw);
            let b = BasketSpec::new((0..n).map(|i| format!("S{i}")).collect(), w.clone()).unwrap();
            let iv: Vec<f64> = seed_vols[..n].iter().map(|p| p.0).collect();
            let rv: Vec<f64> = seed_vols[..n].iter().map(|p| p.1).collect();
            let k: Vec<f64> = iv.iter().map(|v| v * v).collect();
            let r: Vec<f64> = rv.iter().map(|v| v * v).collect();
            let index_k = crate::correlation::basket_variance(&iv, &w, rho_i).unwrap();
            let index_r = crate::correlation::basket_variance(&rv, &w, rho_r).unwrap();
            let day = NaiveDate::from_ymd_opt(2011, 3, 1).unwrap();
            let t = DispersionTrade::new(b, "IDX", index_k, &k, day, 0.25, notional).unwrap();
            let a = dispersion_payoff(&t, index_r, &r).unwrap();
            let c = dispersion_payoff_correlation_form(&t, index_r, &r).unwrap();
            prop_assert!((a - c).abs() <= 1e-10 * notional.max(1.0));
        }

        #[test]
        fn perfect_forecast_hedges_exactly(
            raw in prop::collection::vec(0.1f64..1.0, 2..8),
            vols in prop::collection::vec(0.05f64..0.8, 8),
            rho_i in 0.0f64..0.95,
            rho_r in 0.0f64..0.95,
        ) {
            let n = raw.len();
            let w = weights(&raw);
            let s = cross_vol_sum(&vols[..n], &w);
            let d = s * (rho_i - rho_r);
            let d_h = naive_hedge_value(&vols[..n], &w, rho_i, rho_r, 1.0);
            prop_assert!((d - d_h).abs() < 1e-14);
        }
    }
}
