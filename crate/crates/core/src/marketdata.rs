//! Option-trade ingestion, market snapshots, liquidity filtering and the
//! empirical-CDF coordinate transform onto the unit square.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Trading days per year used for every year fraction in the crate.
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

pub const KAPPA_MIN: f64 = 0.8;
pub const KAPPA_MAX: f64 = 1.2;
pub const TAU_MIN: f64 = 10.0 / TRADING_DAYS_PER_YEAR;
pub const TAU_MAX: f64 = 1.0;

/// Implied volatilities above this level are treated as misprints.
pub const MAX_IMPLIED_VOL: f64 = 0.50;

pub const TRADES_HEADER: [&str; 7] = [
    "trade_date",
    "expiry_date",
    "underlying",
    "strike",
    "price",
    "right",
    "style",
];
pub const SNAPSHOTS_HEADER: [&str; 4] = ["date", "ticker", "spot", "weight"];
pub const RATES_HEADER: [&str; 3] = ["date", "tenor_years", "rate"];
pub const DIVIDENDS_HEADER: [&str; 3] = ["ticker", "ex_date", "amount"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptionRight {
    #[serde(rename = "P")]
    Put,
    #[serde(rename = "C")]
    Call,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExerciseStyle {
    #[serde(rename = "E")]
    European,
    #[serde(rename = "A")]
    American,
}

/// One recorded option transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionTrade {
    pub trade_date: NaiveDate,
    pub expiry_date: NaiveDate,
    pub underlying: String,
    pub strike: f64,
    pub price: f64,
    pub right: OptionRight,
    pub style: ExerciseStyle,
}

impl OptionTrade {
    pub fn validate(&self) -> Result<()> {
        if self.expiry_date <= self.trade_date {
            return Err(invalid(format!(
                "expiry {} not after trade date {}",
                self.expiry_date, self.trade_date
            )));
        }
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(invalid(format!("strike must be positive, got {}", self.strike)));
        }
        if !(self.price > 0.0 && self.price.is_finite()) {
            return Err(invalid(format!("price must be positive, got {}", self.price)));
        }
        if self.underlying.is_empty() {
            return Err(invalid("empty underlying"));
        }
        Ok(())
    }

    pub fn year_fraction(&self) -> f64 {
        year_fraction(self.trade_date, self.expiry_date)
    }
}

/// Weekdays in `(from, to]`; the crate's trading calendar.
pub fn trading_days_between(from: NaiveDate, to: NaiveDate) -> i64 {
    if to == from {
        return 0;
    }
    if to < from {
        return -trading_days_between(to, from);
    }
    let days = (to - from).num_days();
    let full_weeks = days / 7;
    let mut count = full_weeks * 5;
    let mut d = from + chrono::Duration::days(full_weeks * 7);
    while d < to {
        d = d.succ_opt().expect("date overflow");
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            count += 1;
        }
    }
    count
}

/// Year fraction as trading days over 252.
pub fn year_fraction(from: NaiveDate, to: NaiveDate) -> f64 {
    trading_days_between(from, to) as f64 / TRADING_DAYS_PER_YEAR
}

/// Advance `date` by `n` weekdays.
pub fn add_trading_days(date: NaiveDate, n: u32) -> NaiveDate {
    let mut d = date;
    let mut left = n;
    while left > 0 {
        d = d.succ_opt().expect("date overflow");
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            left -= 1;
        }
    }
    d
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Row {
            line: 1,
            message: format!("expected header `{}`, got `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn row_err(record: &csv::StringRecord, message: impl std::fmt::Display) -> Error {
    Error::Row {
        line: record.position().map(|p| p.line()).unwrap_or(0),
        message: message.to_string(),
    }
}

fn field<'a>(record: &'a csv::StringRecord, idx: usize, name: &str) -> Result<&'a str> {
    record
        .get(idx)
        .map(str::trim)
        .ok_or_else(|| row_err(record, format!("missing field `{name}`")))
}

fn parse_date(record: &csv::StringRecord, idx: usize, name: &str) -> Result<NaiveDate> {
    let s = field(record, idx, name)?;
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| row_err(record, format!("bad {name} `{s}`: {e}")))
}

fn parse_f64(record: &csv::StringRecord, idx: usize, name: &str) -> Result<f64> {
    let s = field(record, idx, name)?;
    let v: f64 = s
        .parse()
        .map_err(|_| row_err(record, format!("bad {name} `{s}`")))?;
    if !v.is_finite() {
        return Err(row_err(record, format!("non-finite {name}")));
    }
    Ok(v)
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input)
}

/// Parse `trades.csv`. An empty stream yields an empty list.
pub fn parse_trades<R: Read>(input: R) -> Result<Vec<OptionTrade>> {
    let mut rdr = reader(input);
    if rdr.headers()?.is_empty() {
        return Ok(Vec::new());
    }
    check_header(&mut rdr, &TRADES_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let right = match field(&rec, 5, "right")? {
            "P" => OptionRight::Put,
            "C" => OptionRight::Call,
            other => return Err(row_err(&rec, format!("right must be P or C, got `{other}`"))),
        };
        let style = match field(&rec, 6, "style")? {
            "E" => ExerciseStyle::European,
            "A" => ExerciseStyle::American,
            other => return Err(row_err(&rec, format!("style must be E or A, got `{other}`"))),
        };
        let trade = OptionTrade {
            trade_date: parse_date(&rec, 0, "trade_date")?,
            expiry_date: parse_date(&rec, 1, "expiry_date")?,
            underlying: field(&rec, 2, "underlying")?.to_string(),
            strike: parse_f64(&rec, 3, "strike")?,
            price: parse_f64(&rec, 4, "price")?,
            right,
            style,
        };
        trade.validate().map_err(|e| row_err(&rec, e))?;
        out.push(trade);
    }
    Ok(out)
}

pub fn write_trades<W: Write>(out: W, trades: &[OptionTrade]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRADES_HEADER)?;
    for t in trades {
        w.write_record([
            t.trade_date.to_string(),
            t.expiry_date.to_string(),
            t.underlying.clone(),
            t.strike.to_string(),
            t.price.to_string(),
            match t.right {
                OptionRight::Put => "P".into(),
                OptionRight::Call => "C".into(),
            },
            match t.style {
                ExerciseStyle::European => "E".into(),
                ExerciseStyle::American => "A".into(),
            },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Piecewise-linear term structure of continuously compounded rates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RateCurve {
    /// `(tenor in years, rate)` with strictly increasing tenors.
    pub points: Vec<(f64, f64)>,
}

impl RateCurve {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("rate curve tenors must be strictly increasing"));
        }
        Ok(Self { points })
    }

    pub fn rate(&self, tau: f64) -> Result<f64> {
        interpolate_rate(&self.points, tau)
    }
}

/// Linear interpolation on the curve, clamped to the end tenors.
pub fn interpolate_rate(curve: &[(f64, f64)], tau: f64) -> Result<f64> {
    let (first, last) = match (curve.first(), curve.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(invalid("empty rate curve")),
    };
    if tau <= first.0 {
        return Ok(first.1);
    }
    if tau >= last.0 {
        return Ok(last.1);
    }
    let i = curve.partition_point(|p| p.0 <= tau);
    let (t0, r0) = curve[i - 1];
    let (t1, r1) = curve[i];
    if tau == t0 {
        return Ok(r0);
    }
    Ok(r0 + (r1 - r0) * (tau - t0) / (t1 - t0))
}

/// Everything known about the market on one date.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MarketSnapshot {
    pub date: Option<NaiveDate>,
    pub spot_by_ticker: BTreeMap<String, f64>,
    /// Basket weights; tickers without a weight (the index) are absent.
    pub weights: BTreeMap<String, f64>,
    pub rate_curve: RateCurve,
    pub dividends: BTreeMap<String, Vec<(NaiveDate, f64)>>,
}

impl MarketSnapshot {
    pub fn spot(&self, ticker: &str) -> Result<f64> {
        self.spot_by_ticker
            .get(ticker)
            .copied()
            .ok_or_else(|| invalid(format!("no spot for `{ticker}`")))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.weights.is_empty() {
            let total: f64 = self.weights.values().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(invalid(format!("weights sum to {total}, expected 1")));
            }
            if self.weights.values().any(|w| !(*w > 0.0 && *w < 1.0)) {
                return Err(invalid("weights must lie in (0, 1)"));
            }
        }
        if self.spot_by_ticker.values().any(|s| !(*s > 0.0)) {
            return Err(invalid("spots must be positive"));
        }
        Ok(())
    }

    /// Dividends of `ticker` paid strictly after the snapshot date and on or
    /// before `expiry`, as `(year fraction, amount)`.
    pub fn dividends_until(&self, ticker: &str, expiry: NaiveDate) -> Vec<(f64, f64)> {
        let Some(date) = self.date else {
            return Vec::new();
        };
        self.dividends
            .get(ticker)
            .map(|divs| {
                divs.iter()
                    .filter(|(d, _)| *d > date && *d <= expiry)
                    .map(|(d, a)| (year_fraction(date, *d), *a))
                    .filter(|(t, _)| *t > 0.0)
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Snapshots keyed by date.
pub type MarketData = BTreeMap<NaiveDate, MarketSnapshot>;

/// Assemble snapshots from the three CSV inputs.
pub fn load_market<R1: Read, R2: Read, R3: Read>(
    snapshots: R1,
    rates: R2,
    dividends: R3,
) -> Result<MarketData> {
    let mut market: MarketData = BTreeMap::new();

    let mut rdr = reader(snapshots);
    check_header(&mut rdr, &SNAPSHOTS_HEADER)?;
    for rec in rdr.records() {
        let rec = rec?;
        let date = parse_date(&rec, 0, "date")?;
        let ticker = field(&rec, 1, "ticker")?.to_string();
        let spot = parse_f64(&rec, 2, "spot")?;
        if spot <= 0.0 {
            return Err(row_err(&rec, "spot must be positive"));
        }
        let snap = market.entry(date).or_insert_with(|| MarketSnapshot {
            date: Some(date),
            ..Default::default()
        });
        snap.spot_by_ticker.insert(ticker.clone(), spot);
        let w = field(&rec, 3, "weight")?;
        if !w.is_empty() {
            snap.weights.insert(ticker, parse_f64(&rec, 3, "weight")?);
        }
    }

    let mut curves: BTreeMap<NaiveDate, Vec<(f64, f64)>> = BTreeMap::new();
    let mut rdr = reader(rates);
    check_header(&mut rdr, &RATES_HEADER)?;
    for rec in rdr.records() {
        let rec = rec?;
        let date = parse_date(&rec, 0, "date")?;
        let tenor = parse_f64(&rec, 1, "tenor_years")?;
        let rate = parse_f64(&rec, 2, "rate")?;
        curves.entry(date).or_default().push((tenor, rate));
    }

    let mut divs: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    let mut rdr = reader(dividends);
    check_header(&mut rdr, &DIVIDENDS_HEADER)?;
    for rec in rdr.records() {
        let rec = rec?;
        let ticker = field(&rec, 0, "ticker")?.to_string();
        let ex = parse_date(&rec, 1, "ex_date")?;
        let amount = parse_f64(&rec, 2, "amount")?;
        if amount < 0.0 {
            return Err(row_err(&rec, "dividend amount must be non-negative"));
        }
        divs.entry(ticker).or_default().push((ex, amount));
    }
    for v in divs.values_mut() {
        v.sort_by_key(|(d, _)| *d);
    }

    for (date, snap) in market.iter_mut() {
        if let Some(points) = curves.remove(date) {
            snap.rate_curve = RateCurve::new(points)?;
        }
        snap.dividends = divs.clone();
        snap.validate()
            .map_err(|e| invalid(format!("snapshot {date}: {e}")))?;
    }
    Ok(market)
}

/// Write the three snapshot-side CSVs.
pub fn write_market<W1: Write, W2: Write, W3: Write>(
    market: &MarketData,
    snapshots: W1,
    rates: W2,
    dividends: W3,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(snapshots);
    w.write_record(SNAPSHOTS_HEADER)?;
    for (date, snap) in market {
        for (ticker, spot) in &snap.spot_by_ticker {
            let weight = snap.weights.get(ticker).map(|w| w.to_string()).unwrap_or_default();
            w.write_record([date.to_string(), ticker.clone(), spot.to_string(), weight])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(rates);
    w.write_record(RATES_HEADER)?;
    for (date, snap) in market {
        for (tenor, rate) in &snap.rate_curve.points {
            w.write_record([date.to_string(), tenor.to_string(), rate.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(dividends);
    w.write_record(DIVIDENDS_HEADER)?;
    if let Some(snap) = market.values().next() {
        for (ticker, divs) in &snap.dividends {
            for (d, a) in divs {
                w.write_record([ticker.clone(), d.to_string(), a.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Fair variance-swap strike (annualized variance) quoted on a date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarSwapQuote {
    pub date: NaiveDate,
    pub ticker: String,
    pub tenor: f64,
    pub strike_var: f64,
}

pub const VARSWAPS_HEADER: [&str; 4] = ["date", "ticker", "tenor_years", "strike_var"];

pub fn parse_varswaps<R: Read>(input: R) -> Result<Vec<VarSwapQuote>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &VARSWAPS_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let q = VarSwapQuote {
            date: parse_date(&rec, 0, "date")?,
            ticker: field(&rec, 1, "ticker")?.to_string(),
            tenor: parse_f64(&rec, 2, "tenor_years")?,
            strike_var: parse_f64(&rec, 3, "strike_var")?,
        };
        if q.tenor <= 0.0 || q.strike_var < 0.0 {
            return Err(row_err(&rec, "tenor must be positive and strike non-negative"));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn write_varswaps<W: Write>(out: W, quotes: &[VarSwapQuote]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(VARSWAPS_HEADER)?;
    for q in quotes {
        w.write_record([q.date.to_string(), q.ticker.clone(), q.tenor.to_string(), q.strike_var.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// A scattered observation on the (moneyness, maturity) plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub kappa: f64,
    pub tau: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDay {
    pub date: NaiveDate,
    pub points: Vec<SurfacePoint>,
}

/// Per-day scattered observations over a date range.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SurfacePanel {
    pub days: Vec<SurfaceDay>,
}

impl SurfacePanel {
    pub fn new(days: Vec<SurfaceDay>) -> Result<Self> {
        let panel = Self { days };
        panel.validate()?;
        Ok(panel)
    }

    pub fn validate(&self) -> Result<()> {
        if self.days.windows(2).any(|w| w[1].date <= w[0].date) {
            return Err(invalid("panel dates must be strictly increasing"));
        }
        if let Some(d) = self.days.iter().find(|d| d.points.is_empty()) {
            return Err(invalid(format!("panel day {} has no observations", d.date)));
        }
        if self.days.iter().flat_map(|d| &d.points).any(|p| !(p.tau > 0.0)) {
            return Err(invalid("surface points need tau > 0"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn n_obs(&self) -> usize {
        self.days.iter().map(|d| d.points.len()).sum()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.days.iter().map(|d| d.date).collect()
    }

    /// Days with `from <= date <= to`.
    pub fn slice(&self, from: NaiveDate, to: NaiveDate) -> SurfacePanel {
        SurfacePanel {
            days: self
                .days
                .iter()
                .filter(|d| d.date >= from && d.date <= to)
                .cloned()
                .collect(),
        }
    }
}

/// An option trade that survived filtering, with the market inputs needed to
/// invert its implied volatility.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedQuote {
    pub trade: OptionTrade,
    pub kappa: f64,
    pub tau: f64,
    pub spot: f64,
    pub rate: f64,
    /// `(year fraction, amount)` for dividends before expiry.
    pub dividends: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuoteDay {
    pub date: NaiveDate,
    pub quotes: Vec<PreparedQuote>,
}

/// Filtered quotes grouped by trade date, dates increasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuotePanel {
    pub days: Vec<QuoteDay>,
}

/// Forward moneyness `K / (S e^{r tau})`.
pub fn forward_moneyness(strike: f64, spot: f64, rate: f64, tau: f64) -> f64 {
    strike / (spot * (rate * tau).exp())
}

/// True when the quote lies in the liquid segment: out of the money,
/// `kappa` in [0.8, 1.2] and `tau` in [10/252, 1].
pub fn in_liquid_segment(right: OptionRight, kappa: f64, tau: f64) -> bool {
    let otm = match right {
        OptionRight::Put => kappa < 1.0,
        OptionRight::Call => kappa >= 1.0,
    };
    otm && (KAPPA_MIN..=KAPPA_MAX).contains(&kappa) && (TAU_MIN - 1e-12..=TAU_MAX + 1e-12).contains(&tau)
}

/// Keep out-of-the-money quotes inside the liquid segment and attach forward
/// moneyness, maturity and the rate/dividend inputs of the pricer.
pub fn filter_and_prepare(trades: &[OptionTrade], market: &MarketData) -> Result<QuotePanel> {
    let mut days: BTreeMap<NaiveDate, Vec<PreparedQuote>> = BTreeMap::new();
    for trade in trades {
        let snap = market
            .get(&trade.trade_date)
            .ok_or(Error::MissingSnapshot(trade.trade_date))?;
        let tau = trade.year_fraction();
        if tau <= 0.0 {
            continue;
        }
        let spot = snap.spot(&trade.underlying)?;
        let rate = snap.rate_curve.rate(tau)?;
        let kappa = forward_moneyness(trade.strike, spot, rate, tau);
        if !in_liquid_segment(trade.right, kappa, tau) {
            continue;
        }
        let dividends = match trade.style {
            ExerciseStyle::American => snap.dividends_until(&trade.underlying, trade.expiry_date),
            ExerciseStyle::European => Vec::new(),
        };
        days.entry(trade.trade_date).or_default().push(PreparedQuote {
            trade: trade.clone(),
            kappa,
            tau,
            spot,
            rate,
            dividends,
        });
    }
    Ok(QuotePanel {
        days: days
            .into_iter()
            .map(|(date, quotes)| QuoteDay { date, quotes })
            .collect(),
    })
}

/// Monotone map between one raw coordinate and its pooled empirical CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfMap {
    /// Distinct observed values, increasing.
    pub knots: Vec<f64>,
    /// ECDF value at each knot, `#{x_i <= knot} / n`.
    pub values: Vec<f64>,
}

impl EcdfMap {
    pub fn fit(sample: &[f64]) -> Result<Self> {
        if sample.is_empty() {
            return Err(invalid("empty sample for ECDF"));
        }
        if sample.iter().any(|x| !x.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut knots = Vec::new();
        let mut values = Vec::new();
        for (i, x) in sorted.iter().enumerate() {
            if i + 1 < sorted.len() && sorted[i + 1] == *x {
                continue;
            }
            knots.push(*x);
            values.push((i + 1) as f64 / n);
        }
        Ok(Self { knots, values })
    }

    pub fn min(&self) -> f64 {
        self.knots[0]
    }

    pub fn max(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min() && x <= self.max()
    }

    /// ECDF value of `x`; linear between knots, error outside the observed range.
    pub fn forward(&self, x: f64) -> Result<f64> {
        if !self.contains(x) {
            return Err(Error::Domain(format!(
                "{x} outside observed range [{}, {}]",
                self.min(),
                self.max()
            )));
        }
        Ok(interp_monotone(&self.knots, &self.values, x))
    }

    /// Back-transform an ECDF value; clamps to the observed range.
    pub fn inverse(&self, u: f64) -> f64 {
        if u <= self.values[0] {
            return self.knots[0];
        }
        if u >= *self.values.last().unwrap() {
            return self.max();
        }
        interp_monotone(&self.values, &self.knots, u)
    }
}

fn interp_monotone(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|v| *v < x);
    if i < xs.len() && xs[i] == x {
        return ys[i];
    }
    if i == 0 {
        return ys[0];
    }
    if i == xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Pooled ECDF maps for moneyness and maturity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateMaps {
    pub kappa: EcdfMap,
    pub tau: EcdfMap,
}

impl CoordinateMaps {
    pub fn forward(&self, kappa: f64, tau: f64) -> Result<(f64, f64)> {
        Ok((self.kappa.forward(kappa)?, self.tau.forward(tau)?))
    }

    pub fn inverse(&self, u: f64, v: f64) -> (f64, f64) {
        (self.kappa.inverse(u), self.tau.inverse(v))
    }
}

/// Replace each coordinate by its empirical CDF over the whole panel.
pub fn ecdf_transform(panel: &SurfacePanel) -> Result<(SurfacePanel, CoordinateMaps)> {
    if panel.n_obs() == 0 {
        return Err(invalid("empty panel"));
    }
    let kappas: Vec<f64> = panel.days.iter().flat_map(|d| d.points.iter().map(|p| p.kappa)).collect();
    let taus: Vec<f64> = panel.days.iter().flat_map(|d| d.points.iter().map(|p| p.tau)).collect();
    let maps = CoordinateMaps {
        kappa: EcdfMap::fit(&kappas)?,
        tau: EcdfMap::fit(&taus)?,
    };
    let days = panel
        .days
        .iter()
        .map(|d| {
            let points = d
                .points
                .iter()
                .map(|p| {
                    let (u, v) = maps.forward(p.kappa, p.tau)?;
                    Ok(SurfacePoint {
                        kappa: u,
                        tau: v,
                        value: p.value,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SurfaceDay { date: d.date, points })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((SurfacePanel { days }, maps))
}
