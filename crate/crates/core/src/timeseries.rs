//! Unit-root testing, VAR order selection, estimation, residual diagnostics
//! and forecasting for factor score series.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Error, Result};

/// Asymptotic 5% Dickey-Fuller critical value, constant but no trend.
pub const ADF_CRITICAL_5PCT: f64 = -2.86;
/// Two-sided 5% normal quantile used to prune augmentation lags.
const LAG_T_CRITICAL: f64 = 1.959963984540054;
const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub lags_used: usize,
    pub reject_at_5pct: bool,
    pub detail: String,
}

struct Ols {
    beta: DMatrix<f64>,
    resid: DMatrix<f64>,
    xtx_inv: DMatrix<f64>,
}

/// Multivariate least squares `Y = X B + U`; singular designs are errors.
fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Ols> {
    let k = x.ncols();
    let xtx = x.transpose() * x;
    let mut d = DVector::zeros(k);
    for i in 0..k {
        if !(xtx[(i, i)] > 0.0) {
            return Err(Error::Singular("regressor column is identically zero".into()));
        }
        d[i] = 1.0 / xtx[(i, i)].sqrt();
    }
    let scaled = DMatrix::from_fn(k, k, |i, j| xtx[(i, j)] * d[i] * d[j]);
    let chol = scaled
        .cholesky()
        .ok_or_else(|| Error::Singular("design matrix is rank deficient".into()))?;
    let l = chol.l_dirty();
    if (0..k).any(|i| l[(i, i)] * l[(i, i)] < PIVOT_TOLERANCE) {
        return Err(Error::Singular("design matrix is rank deficient".into()));
    }
    let dm = DMatrix::from_diagonal(&d);
    let inv_scaled = chol.inverse();
    let xtx_inv = &dm * inv_scaled * &dm;
    let beta = &xtx_inv * (x.transpose() * y);
    let resid = y - x * &beta;
    Ok(Ols { beta, resid, xtx_inv })
}

/// Augmented Dickey-Fuller test with a constant. Starts from `start_lags`
/// augmentation lags and drops the last one while it is insignificant.
pub fn adf_test(series: &[f64], start_lags: usize) -> Result<TestReport> {
    if series.len() < 30 {
        return Err(Error::InsufficientData(format!("ADF needs 30 observations, got {}", series.len())));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite value in series"));
    }
    let dy: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let mut k = start_lags;
    loop {
        // Row for dy[t], t = k..dy.len(): [1, y_t, dy_{t-1}, .., dy_{t-k}]
        let n = dy.len() - k;
        let x = DMatrix::from_fn(n, 2 + k, |r, c| {
            let t = r + k;
            match c {
                0 => 1.0,
                1 => series[t],
                _ => dy[t - (c - 1)],
            }
        });
        let y = DMatrix::from_fn(n, 1, |r, _| dy[r + k]);
        let fit = ols(&x, &y)?;
        let dof = n as f64 - (2 + k) as f64;
        let s2 = fit.resid.norm_squared() / dof;
        let t_stat = |c: usize| fit.beta[(c, 0)] / (s2 * fit.xtx_inv[(c, c)]).sqrt();
        if k > 0 && t_stat(1 + k).abs() < LAG_T_CRITICAL {
            k -= 1;
            continue;
        }
        let stat = t_stat(1);
        return Ok(TestReport {
            statistic: stat,
            lags_used: k,
            reject_at_5pct: stat < ADF_CRITICAL_5PCT,
            detail: format!("critical value {ADF_CRITICAL_5PCT} (5%, constant)"),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagRow {
    pub p: usize,
    pub log_det: f64,
    pub aic: f64,
    pub hqic: f64,
    pub sbic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagSelection {
    pub rows: Vec<LagRow>,
    pub best_aic: usize,
    pub best_hqic: usize,
    pub best_sbic: usize,
}

fn check_rows(z: &[Vec<f64>]) -> Result<usize> {
    let l = z.first().map_or(0, |r| r.len());
    if l == 0 {
        return Err(invalid("series needs at least one column"));
    }
    if z.iter().any(|r| r.len() != l || r.iter().any(|v| !v.is_finite())) {
        return Err(invalid("ragged or non-finite series"));
    }
    Ok(l)
}

/// Regressor matrix `[1, z_{t-1}, .., z_{t-p}]` and targets `z_t` for rows
/// `first..T`.
fn var_design(z: &[Vec<f64>], p: usize, first: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let l = z[0].len();
    let n = z.len() - first;
    let x = DMatrix::from_fn(n, 1 + l * p, |r, c| {
        if c == 0 {
            1.0
        } else {
            let lag = (c - 1) / l + 1;
            z[first + r - lag][(c - 1) % l]
        }
    });
    let y = DMatrix::from_fn(n, l, |r, c| z[first + r][c]);
    (x, y)
}

/// Information criteria of VAR(1..=p_max), all fitted on the common sample
/// that drops the first `p_max` rows.
pub fn select_lag_order(z: &[Vec<f64>], p_max: usize) -> Result<LagSelection> {
    let l = check_rows(z)?;
    if p_max == 0 {
        return Err(invalid("p_max must be at least 1"));
    }
    if z.len() <= l * p_max + 10 {
        return Err(Error::InsufficientData(format!(
            "lag selection needs more than {} rows, got {}",
            l * p_max + 10,
            z.len()
        )));
    }
    let t_eff = (z.len() - p_max) as f64;
    let mut rows = Vec::with_capacity(p_max);
    for p in 1..=p_max {
        let (x, y) = var_design(z, p, p_max);
        let fit = ols(&x, &y)?;
        let sigma = fit.resid.transpose() * &fit.resid / t_eff;
        let det = sigma.determinant();
        if !(det > 0.0) {
            return Err(Error::Singular("residual covariance is singular".into()));
        }
        let log_det = det.ln();
        let k = (p * l * l) as f64;
        rows.push(LagRow {
            p,
            log_det,
            aic: log_det + 2.0 * k / t_eff,
            hqic: log_det + 2.0 * t_eff.ln().ln() * k / t_eff,
            sbic: log_det + t_eff.ln() * k / t_eff,
        });
    }
    let argmin = |f: fn(&LagRow) -> f64| {
        rows.iter()
            .min_by(|a, b| f(a).total_cmp(&f(b)))
            .map(|r| r.p)
            .unwrap_or(1)
    };
    Ok(LagSelection {
        best_aic: argmin(|r| r.aic),
        best_hqic: argmin(|r| r.hqic),
        best_sbic: argmin(|r| r.sbic),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarModel {
    pub p: usize,
    pub intercept: Vec<f64>,
    /// `coefficients[i][r][c]`: effect of lag `i + 1` of series `c` on series `r`.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    pub intercept_se: Vec<f64>,
    pub coefficient_se: Vec<Vec<Vec<f64>>>,
    pub residual_cov: Vec<Vec<f64>>,
    /// First and one-past-last row index of the estimation sample.
    pub sample_span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarFit {
    pub model: VarModel,
    /// One row per estimation-sample observation.
    pub residuals: Vec<Vec<f64>>,
}

impl VarModel {
    pub fn dim(&self) -> usize {
        self.intercept.len()
    }

    pub fn coefficient_matrix(&self, lag: usize) -> DMatrix<f64> {
        let l = self.dim();
        DMatrix::from_fn(l, l, |r, c| self.coefficients[lag][r][c])
    }

    /// Companion matrix of the lag polynomial.
    pub fn companion(&self) -> DMatrix<f64> {
        let l = self.dim();
        let n = l * self.p;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..self.p {
            m.view_mut((0, i * l), (l, l)).copy_from(&self.coefficient_matrix(i));
        }
        for i in 1..self.p {
            m.view_mut((i * l, (i - 1) * l), (l, l)).fill_with_identity();
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.dim();
        let square = |m: &Vec<Vec<f64>>| m.len() == l && m.iter().all(|r| r.len() == l);
        if self.p == 0
            || self.coefficients.len() != self.p
            || !self.coefficients.iter().all(square)
            || !square(&self.residual_cov)
        {
            return Err(invalid("VAR model dimensions are inconsistent"));
        }
        Ok(())
    }
}

/// Equation-by-equation least squares with intercept.
pub fn fit_var(z: &[Vec<f64>], p: usize) -> Result<VarFit> {
    let l = check_rows(z)?;
    if p == 0 {
        return Err(invalid("VAR order must be at least 1"));
    }
    if z.len() <= l * p + 10 {
        return Err(Error::InsufficientData(format!(
            "VAR({p}) needs more than {} rows, got {}",
            l * p + 10,
            z.len()
        )));
    }
    let (x, y) = var_design(z, p, p);
    let fit = ols(&x, &y)?;
    let n = x.nrows();
    let dof = n as f64 - (l * p + 1) as f64;
    let cov = fit.resid.transpose() * &fit.resid / dof;
    let cov = (&cov + cov.transpose()) * 0.5;
    let se = |k: usize, eq: usize| (cov[(eq, eq)] * fit.xtx_inv[(k, k)]).sqrt();
    let model = VarModel {
        p,
        intercept: (0..l).map(|eq| fit.beta[(0, eq)]).collect(),
        intercept_se: (0..l).map(|eq| se(0, eq)).collect(),
        coefficients: (0..p)
            .map(|i| (0..l).map(|r| (0..l).map(|c| fit.beta[(1 + i * l + c, r)]).collect()).collect())
            .collect(),
        coefficient_se: (0..p)
            .map(|i| (0..l).map(|r| (0..l).map(|c| se(1 + i * l + c, r)).collect()).collect())
            .collect(),
        residual_cov: (0..l).map(|r| (0..l).map(|c| cov[(r, c)]).collect()).collect(),
        sample_span: (p, z.len()),
    };
    let residuals = (0..n).map(|r| fit.resid.row(r).iter().copied().collect()).collect();
    Ok(VarFit { model, residuals })
}

/// Multivariate Ljung-Box statistic on VAR residuals, with
/// `L^2 (max_lag - p)` degrees of freedom.
pub fn portmanteau_test(residuals: &[Vec<f64>], p: usize, max_lag: usize) -> Result<TestReport> {
    if max_lag <= p {
        return Err(invalid(format!("max_lag {max_lag} must exceed VAR order {p}")));
    }
    let l = check_rows(residuals)?;
    let t = residuals.len();
    if t <= max_lag {
        return Err(Error::InsufficientData("fewer residuals than lags".into()));
    }
    let u = DMatrix::from_fn(t, l, |r, c| residuals[r][c]);
    let df = (l * l * (max_lag - p)) as f64;
    let report = |stat: f64| -> Result<TestReport> {
        let chi = ChiSquared::new(df).map_err(|e| Error::Domain(e.to_string()))?;
        let p_value = 1.0 - chi.cdf(stat);
        Ok(TestReport {
            statistic: stat,
            lags_used: max_lag,
            reject_at_5pct: p_value < 0.05,
            detail: format!("df {df}, p-value {p_value:.4}"),
        })
    };
    if u.iter().all(|v| *v == 0.0) {
        return report(0.0);
    }
    let tf = t as f64;
    let cov_at = |h: usize| {
        let a = u.rows(h, t - h);
        let b = u.rows(0, t - h);
        a.transpose() * b / tf
    };
    let c0_inv = cov_at(0)
        .try_inverse()
        .ok_or_else(|| Error::Singular("residual covariance is singular".into()))?;
    let mut q = 0.0;
    for h in 1..=max_lag {
        let ch = cov_at(h);
        q += (ch.transpose() * &c0_inv * &ch * &c0_inv).trace() / (tf - h as f64);
    }
    report(tf * tf * q)
}

/// Iterated conditional-mean forecasts for `horizon` steps after the last
/// row of `history`.
pub fn forecast_var(model: &VarModel, history: &[Vec<f64>], horizon: usize) -> Result<Vec<Vec<f64>>> {
    model.validate()?;
    let l = model.dim();
    if history.len() < model.p {
        return Err(Error::InsufficientData(format!(
            "forecast needs {} observations, got {}",
            model.p,
            history.len()
        )));
    }
    if history.iter().any(|r| r.len() != l) {
        return Err(invalid("history width does not match model"));
    }
    let mut path: Vec<Vec<f64>> = history[history.len() - model.p..].to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let n = path.len();
        let next: Vec<f64> = (0..l)
            .map(|r| {
                model.intercept[r]
                    + (0..model.p)
                        .map(|i| (0..l).map(|c| model.coefficients[i][r][c] * path[n - 1 - i][c]).sum::<f64>())
                        .sum::<f64>()
            })
            .collect();
        path.push(next.clone());
        out.push(next);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsOptions {
    /// Fixed VAR order; chosen by AIC when absent.
    pub p: Option<usize>,
    pub p_max: usize,
    pub adf_start_lags: usize,
    pub portmanteau_lags: usize,
}

impl Default for DynamicsOptions {
    fn default() -> Self {
        Self {
            p: None,
            p_max: 4,
            adf_start_lags: 3,
            portmanteau_lags: 10,
        }
    }
}

/// VAR dynamics of factor scores, with unit-root factors modelled in first
/// differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDynamics {
    pub adf: Vec<TestReport>,
    pub differenced: Vec<bool>,
    /// ADF on the first differences of the differenced factors.
    pub adf_differenced: Vec<Option<TestReport>>,
    pub lag_selection: Option<LagSelection>,
    pub var: VarModel,
    pub portmanteau: Option<TestReport>,
}

fn column(z: &[Vec<f64>], c: usize) -> Vec<f64> {
    z.iter().map(|r| r[c]).collect()
}

/// Levels for stationary factors, first differences for the rest; the first
/// row is dropped so every column stays aligned.
fn stationary_transform(z: &[Vec<f64>], differenced: &[bool]) -> Vec<Vec<f64>> {
    (1..z.len())
        .map(|t| {
            differenced
                .iter()
                .enumerate()
                .map(|(c, &d)| if d { z[t][c] - z[t - 1][c] } else { z[t][c] })
                .collect()
        })
        .collect()
}

pub fn fit_dynamics(scores: &[Vec<f64>], options: &DynamicsOptions) -> Result<FactorDynamics> {
    let l = check_rows(scores)?;
    let adf = (0..l)
        .map(|c| adf_test(&column(scores, c), options.adf_start_lags))
        .collect::<Result<Vec<_>>>()?;
    let differenced: Vec<bool> = adf.iter().map(|r| !r.reject_at_5pct).collect();
    let adf_differenced = (0..l)
        .map(|c| {
            if !differenced[c] {
                return Ok(None);
            }
            let s = column(scores, c);
            let d: Vec<f64> = s.windows(2).map(|w| w[1] - w[0]).collect();
            adf_test(&d, options.adf_start_lags).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    let series = stationary_transform(scores, &differenced);
    let lag_selection = match options.p {
        Some(_) => None,
        None => Some(select_lag_order(&series, options.p_max)?),
    };
    let p = options.p.unwrap_or_else(|| lag_selection.as_ref().map_or(1, |s| s.best_aic));
    let fit = fit_var(&series, p)?;
    let portmanteau = if options.portmanteau_lags > p {
        Some(portmanteau_test(&fit.residuals, p, options.portmanteau_lags)?)
    } else {
        None
    };
    Ok(FactorDynamics {
        adf,
        differenced,
        adf_differenced,
        lag_selection,
        var: fit.model,
        portmanteau,
    })
}

impl FactorDynamics {
    /// Score forecasts in levels for `horizon` steps after `history`.
    pub fn forecast(&self, history: &[Vec<f64>], horizon: usize) -> Result<Vec<Vec<f64>>> {
        let need = self.var.p + usize::from(self.differenced.iter().any(|d| *d));
        if history.len() < need.max(1) {
            return Err(Error::InsufficientData(format!(
                "score forecast needs {need} observations, got {}",
                history.len()
            )));
        }
        let tail = &history[history.len() - need.max(1)..];
        let series = if self.differenced.iter().any(|d| *d) {
            stationary_transform(tail, &self.differenced)
        } else {
            tail.to_vec()
        };
        let raw = forecast_var(&self.var, &series, horizon)?;
        let mut level = history.last().cloned().unwrap_or_default();
        Ok(raw
            .into_iter()
            .map(|step| {
                for (c, v) in step.into_iter().enumerate() {
                    level[c] = if self.differenced[c] { level[c] + v } else { v };
                }
                level.clone()
            })
            .collect())
    }
}
