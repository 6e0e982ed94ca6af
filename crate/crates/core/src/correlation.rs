//! Equicorrelation algebra, implied-correlation surface construction, the
//! Fisher-Z transform and the high-volatility regime correction.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::marketdata::{SurfaceDay, SurfacePanel, SurfacePoint, TAU_MIN};

/// Correlations at or beyond this magnitude are dropped before Fisher-Z.
pub const FISHER_CUTOFF: f64 = 0.9999;

pub const ICS_HEADER: [&str; 4] = ["date", "kappa", "tau", "rho"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasketSpec {
    pub tickers: Vec<String>,
    pub weights: Vec<f64>,
}

impl BasketSpec {
    pub fn new(tickers: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        let spec = Self { tickers, weights };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tickers.len() != self.weights.len() {
            return Err(invalid("basket tickers and weights differ in length"));
        }
        check_weights(&self.weights)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.len() < 2 {
        return Err(invalid("basket needs at least two assets"));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(invalid("basket weights must be positive"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() >= 1e-12 {
        return Err(invalid(format!("basket weights sum to {total}")));
    }
    Ok(())
}

fn check_vols(vols: &[f64], weights: &[f64]) -> Result<()> {
    if vols.len() != weights.len() {
        return Err(invalid("vols and weights differ in length"));
    }
    if vols.iter().any(|s| !(*s >= 0.0)) {
        return Err(invalid("vols must be non-negative"));
    }
    Ok(())
}

/// `sum_i w_i^2 s_i^2`, the fully diversified basket variance.
pub fn min_basket_variance(vols: &[f64], weights: &[f64]) -> f64 {
    vols.iter().zip(weights).map(|(s, w)| (w * s).powi(2)).sum()
}

/// `sum_{i != j} w_i w_j s_i s_j`.
pub fn cross_vol_sum(vols: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = vols.iter().zip(weights).map(|(s, w)| w * s).sum();
    total * total - min_basket_variance(vols, weights)
}

/// `(sum_i w_i s_i)^2`, the undiversified basket variance.
pub fn max_basket_variance(vols: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = vols.iter().zip(weights).map(|(s, w)| w * s).sum();
    total * total
}

/// Basket variance under a constant pairwise correlation.
pub fn basket_variance(vols: &[f64], weights: &[f64], rho: f64) -> Result<f64> {
    check_vols(vols, weights)?;
    let n = vols.len();
    if n < 2 {
        return Err(invalid("basket needs at least two assets"));
    }
    let lower = -1.0 / (n as f64 - 1.0);
    if !(rho > lower && rho <= 1.0) {
        return Err(Error::Domain(format!(
            "rho {rho} outside ({lower}, 1], correlation matrix not positive semidefinite"
        )));
    }
    Ok(min_basket_variance(vols, weights) + rho * cross_vol_sum(vols, weights))
}

/// The single correlation that reproduces `basket_var`.
pub fn equicorrelation(basket_var: f64, vols: &[f64], weights: &[f64]) -> Result<f64> {
    check_vols(vols, weights)?;
    let denom = cross_vol_sum(vols, weights);
    if !(denom > 0.0) {
        return Err(Error::Singular("cross-volatility sum is zero".into()));
    }
    Ok((basket_var - min_basket_variance(vols, weights)) / denom)
}

/// Position of `basket_var` between the minimum and maximum basket variances.
pub fn diversification_ratio(basket_var: f64, vols: &[f64], weights: &[f64]) -> Result<f64> {
    check_vols(vols, weights)?;
    let lo = min_basket_variance(vols, weights);
    let hi = max_basket_variance(vols, weights);
    if !(hi - lo > 0.0) {
        return Err(Error::Singular("maximum equals minimum basket variance".into()));
    }
    Ok((basket_var - lo) / (hi - lo))
}

/// Pair weights `c_ij = w_i w_j s_i s_j / sum_{k != l} w_k w_l s_k s_l`, zero diagonal.
pub fn decomposition_weights(vols: &[f64], weights: &[f64]) -> Result<DMatrix<f64>> {
    check_vols(vols, weights)?;
    let denom = cross_vol_sum(vols, weights);
    if !(denom > 0.0) {
        return Err(Error::Singular("cross-volatility sum is zero".into()));
    }
    let n = vols.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            weights[i] * weights[j] * vols[i] * vols[j] / denom
        }
    }))
}

/// Equicorrelation as the weighted average of the pairwise correlations.
pub fn weighted_average_decomposition(corr: &DMatrix<f64>, vols: &[f64], weights: &[f64]) -> Result<f64> {
    let n = vols.len();
    if corr.nrows() != n || corr.ncols() != n {
        return Err(invalid("correlation matrix shape does not match basket"));
    }
    for i in 0..n {
        if (corr[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(invalid("correlation matrix needs a unit diagonal"));
        }
        for j in 0..i {
            if (corr[(i, j)] - corr[(j, i)]).abs() > 1e-12 {
                return Err(invalid("correlation matrix is not symmetric"));
            }
        }
    }
    let c = decomposition_weights(vols, weights)?;
    Ok(c.component_mul(corr).sum())
}

/// Basket variance from a full correlation matrix.
pub fn basket_variance_full(corr: &DMatrix<f64>, vols: &[f64], weights: &[f64]) -> f64 {
    let n = vols.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += weights[i] * weights[j] * vols[i] * vols[j] * corr[(i, j)];
        }
    }
    acc
}

/// An implied-volatility observation tied to its listed expiry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvPoint {
    pub expiry: NaiveDate,
    pub kappa: f64,
    pub tau: f64,
    pub vol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub date: NaiveDate,
    pub kappa: f64,
    pub tau: f64,
    pub rho: f64,
    /// Index implied vol at this point, decimal.
    pub index_vol: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IcsDiagnostics {
    /// Index points whose expiry had too little constituent coverage.
    pub dropped_uncovered: usize,
    /// Index points that would need extrapolation in moneyness.
    pub dropped_extrapolation: usize,
    pub dropped_expiries: Vec<NaiveDate>,
}

impl IcsDiagnostics {
    pub fn absorb(&mut self, other: IcsDiagnostics) {
        self.dropped_uncovered += other.dropped_uncovered;
        self.dropped_extrapolation += other.dropped_extrapolation;
        self.dropped_expiries.extend(other.dropped_expiries);
    }
}

/// Sorted `(kappa, vol)` per expiry; duplicates at equal kappa are averaged.
fn smiles_by_expiry(points: &[IvPoint]) -> BTreeMap<NaiveDate, Vec<(f64, f64)>> {
    let mut raw: BTreeMap<NaiveDate, Vec<(f64, f64)>> = BTreeMap::new();
    for p in points {
        raw.entry(p.expiry).or_default().push((p.kappa, p.vol));
    }
    raw.into_iter()
        .map(|(e, mut v)| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut merged: Vec<(f64, f64, usize)> = Vec::with_capacity(v.len());
            for (k, s) in v {
                match merged.last_mut() {
                    Some(last) if last.0 == k => {
                        last.1 += s;
                        last.2 += 1;
                    }
                    _ => merged.push((k, s, 1)),
                }
            }
            (e, merged.into_iter().map(|(k, s, n)| (k, s / n as f64)).collect())
        })
        .collect()
}

fn interp_smile(smile: &[(f64, f64)], kappa: f64) -> Option<f64> {
    let (first, last) = (smile.first()?, smile.last()?);
    if kappa < first.0 || kappa > last.0 {
        return None;
    }
    let i = smile.partition_point(|p| p.0 < kappa);
    if smile[i].0 == kappa {
        return Some(smile[i].1);
    }
    let (k0, s0) = smile[i - 1];
    let (k1, s1) = smile[i];
    Some(s0 + (s1 - s0) * (kappa - k0) / (k1 - k0))
}

/// Implied correlation at each index observation of one day.
///
/// Constituent vols are interpolated linearly in moneyness within the index
/// point's expiry; points that would need extrapolation are dropped, as are
/// expiries where some constituent has fewer than two quotes.
pub fn implied_correlation_points(
    date: NaiveDate,
    index: &[IvPoint],
    constituents: &[&[IvPoint]],
    weights: &[f64],
) -> Result<(Vec<CorrelationPoint>, IcsDiagnostics)> {
    check_weights(weights)?;
    if constituents.len() != weights.len() {
        return Err(invalid("one IV set per basket constituent required"));
    }
    let smiles: Vec<_> = constituents.iter().map(|c| smiles_by_expiry(c)).collect();
    let mut diag = IcsDiagnostics::default();
    let mut out = Vec::with_capacity(index.len());
    let mut vols = vec![0.0; weights.len()];
    let mut index_points: Vec<&IvPoint> = index.iter().collect();
    index_points.sort_by(|a, b| a.expiry.cmp(&b.expiry).then(a.kappa.total_cmp(&b.kappa)));

    for p in index_points {
        let covered = smiles
            .iter()
            .all(|s| s.get(&p.expiry).is_some_and(|v| v.len() >= 2));
        if !covered {
            diag.dropped_uncovered += 1;
            if diag.dropped_expiries.last() != Some(&p.expiry) {
                diag.dropped_expiries.push(p.expiry);
            }
            continue;
        }
        let mut ok = true;
        for (slot, s) in vols.iter_mut().zip(&smiles) {
            match interp_smile(&s[&p.expiry], p.kappa) {
                Some(v) => *slot = v,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            diag.dropped_extrapolation += 1;
            continue;
        }
        let Ok(rho) = equicorrelation(p.vol * p.vol, &vols, weights) else {
            continue;
        };
        out.push(CorrelationPoint {
            date,
            kappa: p.kappa,
            tau: p.tau,
            rho,
            index_vol: p.vol,
        });
    }
    Ok((out, diag))
}

/// At-the-money index vol in percentage points: the shortest expiry with at
/// least ten trading days, interpolated at `kappa = 1` (nearest quote when 1
/// is not bracketed).
pub fn atm_index_vol_pct(index: &[IvPoint]) -> Option<f64> {
    let smiles = smiles_by_expiry(index);
    let taus: BTreeMap<NaiveDate, f64> = index.iter().map(|p| (p.expiry, p.tau)).collect();
    let (expiry, _) = taus.iter().find(|(_, t)| **t >= TAU_MIN - 1e-12)?;
    let smile = &smiles[expiry];
    let vol = interp_smile(smile, 1.0).unwrap_or_else(|| {
        smile
            .iter()
            .min_by(|a, b| (a.0 - 1.0).abs().total_cmp(&(b.0 - 1.0).abs()))
            .map(|p| p.1)
            .unwrap_or(f64::NAN)
    });
    vol.is_finite().then_some(100.0 * vol)
}

/// Fisher's Z transform `0.5 ln((1+u)/(1-u))`.
pub fn fisher_z(u: f64) -> Result<f64> {
    if !(u.abs() < 1.0) {
        return Err(Error::Domain(format!("Fisher-Z needs |u| < 1, got {u}")));
    }
    Ok(u.signum() * 0.5 * (2.0 * u.abs() / (1.0 - u.abs())).ln_1p())
}

pub fn fisher_z_inv(y: f64) -> f64 {
    y.signum() * y.abs().tanh()
}

/// Continuous two-segment linear fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub threshold: f64,
    pub slope_low: f64,
    pub slope_high: f64,
    pub intercept_low: f64,
    pub intercept_high: f64,
    pub sse: f64,
}

impl Breakpoint {
    pub fn predict(&self, x: f64) -> f64 {
        if x <= self.threshold {
            self.intercept_low + self.slope_low * x
        } else {
            self.intercept_high + self.slope_high * x
        }
    }
}

/// Least squares on `[1, x, (x - c)+]`; `None` when singular.
fn hinge_fit(x: &[f64], y: &[f64], c: f64) -> Option<(Vector3<f64>, f64)> {
    let mut xtx = Matrix3::zeros();
    let mut xty = Vector3::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let row = Vector3::new(1.0, xi, (xi - c).max(0.0));
        xtx += row * row.transpose();
        xty += row * yi;
    }
    let beta = xtx.cholesky()?.solve(&xty);
    let sse = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let fit = beta[0] + beta[1] * xi + beta[2] * (xi - c).max(0.0);
            (yi - fit).powi(2)
        })
        .sum();
    Some((beta, sse))
}

/// Segmented regression with one breakpoint, found by exhaustive search over
/// midpoints of consecutive distinct regressor values.
pub fn fit_breakpoint(x: &[f64], y: &[f64]) -> Result<Breakpoint> {
    if x.len() != y.len() {
        return Err(invalid("x and y differ in length"));
    }
    if x.len() < 20 {
        return Err(Error::InsufficientData(format!("need 20 observations, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("non-finite observation"));
    }
    let mut distinct = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(invalid("regressor is constant"));
    }
    if distinct.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "need 10 distinct regressor values, got {}",
            distinct.len()
        )));
    }
    let mut best: Option<(f64, Vector3<f64>, f64)> = None;
    // Keep at least two distinct values on each side of the knot.
    for i in 1..distinct.len() - 2 {
        let c = 0.5 * (distinct[i] + distinct[i + 1]);
        if let Some((beta, sse)) = hinge_fit(x, y, c) {
            if best.as_ref().map_or(true, |b| sse < b.2) {
                best = Some((c, beta, sse));
            }
        }
    }
    let (c, beta, sse) = best.ok_or_else(|| Error::Singular("no admissible breakpoint".into()))?;
    Ok(Breakpoint {
        threshold: c,
        slope_low: beta[1],
        slope_high: beta[1] + beta[2],
        intercept_low: beta[0],
        intercept_high: beta[0] - beta[2] * c,
        sse,
    })
}

/// Average several breakpoint fits.
pub fn average_breakpoints(fits: &[Breakpoint]) -> Option<Breakpoint> {
    if fits.is_empty() {
        return None;
    }
    let n = fits.len() as f64;
    let avg = |f: fn(&Breakpoint) -> f64| fits.iter().map(f).sum::<f64>() / n;
    Some(Breakpoint {
        threshold: avg(|b| b.threshold),
        slope_low: avg(|b| b.slope_low),
        slope_high: avg(|b| b.slope_high),
        intercept_low: avg(|b| b.intercept_low),
        intercept_high: avg(|b| b.intercept_high),
        sse: avg(|b| b.sse),
    })
}

/// On days whose ATM index vol (percentage points) exceeds the threshold,
/// replace each correlation by `slope_high * index vol` at that point; then
/// drop points outside the Fisher-Z domain.
pub fn regime_correct(
    points: &[CorrelationPoint],
    atm_vol_pct_by_day: &BTreeMap<NaiveDate, f64>,
    bp: &Breakpoint,
) -> Result<Vec<CorrelationPoint>> {
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        let atm = atm_vol_pct_by_day
            .get(&p.date)
            .ok_or_else(|| Error::InsufficientData(format!("no ATM index vol for {}", p.date)))?;
        let mut q = *p;
        if *atm > bp.threshold {
            q.rho = bp.slope_high * 100.0 * p.index_vol;
        }
        if q.rho.abs() < FISHER_CUTOFF {
            out.push(q);
        }
    }
    Ok(out)
}

/// Group correlation points into a panel with `value = rho`, dropping points
/// outside the Fisher-Z domain.
pub fn to_panel(points: &[CorrelationPoint]) -> SurfacePanel {
    let mut days: BTreeMap<NaiveDate, Vec<SurfacePoint>> = BTreeMap::new();
    for p in points.iter().filter(|p| p.rho.abs() < FISHER_CUTOFF) {
        days.entry(p.date).or_default().push(SurfacePoint {
            kappa: p.kappa,
            tau: p.tau,
            value: p.rho,
        });
    }
    SurfacePanel {
        days: days
            .into_iter()
            .map(|(date, points)| SurfaceDay { date, points })
            .collect(),
    }
}

/// Apply Fisher-Z to every value of a correlation panel.
pub fn fisher_panel(panel: &SurfacePanel) -> Result<SurfacePanel> {
    let days = panel
        .days
        .iter()
        .map(|d| {
            let points = d
                .points
                .iter()
                .map(|p| {
                    Ok(SurfacePoint {
                        value: fisher_z(p.value)?,
                        ..*p
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SurfaceDay { date: d.date, points })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SurfacePanel { days })
}

pub fn write_ics<W: Write>(out: W, panel: &SurfacePanel) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ICS_HEADER)?;
    for d in &panel.days {
        for p in &d.points {
            w.write_record([
                d.date.to_string(),
                p.kappa.to_string(),
                p.tau.to_string(),
                p.value.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_ics<R: Read>(input: R) -> Result<SurfacePanel> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != ICS_HEADER {
        return Err(Error::Row {
            line: 1,
            message: format!("expected header `{}`", ICS_HEADER.join(",")),
        });
    }
    let mut days: BTreeMap<NaiveDate, Vec<SurfacePoint>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |m: &str| Error::Row {
            line,
            message: m.to_string(),
        };
        let date = NaiveDate::parse_from_str(rec.get(0).unwrap_or(""), "%Y-%m-%d").map_err(|_| bad("bad date"))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad("bad number"))
        };
        days.entry(date).or_default().push(SurfacePoint {
            kappa: num(1)?,
            tau: num(2)?,
            value: num(3)?,
        });
    }
    SurfacePanel::new(
        days.into_iter()
            .map(|(date, points)| SurfaceDay { date, points })
            .collect(),
    )
}
