//! Stage orchestration: quotes to implied correlation surfaces, factor model
//! fits, forecasts and backtests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::correlation::{
    atm_index_vol_pct, read_ics, write_ics, fisher_panel, fit_breakpoint, implied_correlation_points, regime_correct, to_panel,
    BasketSpec, Breakpoint, CorrelationPoint, IcsDiagnostics, IvPoint,
};
use crate::dsfm::{
    default_h_star, evaluate_surface, fit_transformed, select_bandwidth, BandwidthSelection, DayScores, FactorModel,
};
use crate::error::{invalid, Error, Result, StageExt};
use crate::marketdata::{
    ecdf_transform, filter_and_prepare, load_market, parse_trades, parse_varswaps, ExerciseStyle, MarketData,
    OptionTrade, QuotePanel, SurfacePanel, SurfacePoint, VarSwapQuote, MAX_IMPLIED_VOL,
};
use crate::strategy::{
    hedge_error_table, payoff_summary, read_ledger, run_backtest, strategy_table, write_ledger, Alternative,
    BacktestData, BacktestLedger, CorrelationForecaster, ForecastContext, LedgerRow, OracleForecaster,
};
use crate::synth::{generate_market, write_market_files};
use crate::timeseries::fit_dynamics;
use crate::vol::{implied_vol, PricingInputs, PricingModel};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub struct Inputs {
    pub trades: Vec<OptionTrade>,
    pub market: MarketData,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let i = &cfg.inputs;
    let trades = parse_trades(open(&cfg.input(&i.trades))?)?;
    let market = load_market(
        open(&cfg.input(&i.snapshots))?,
        open(&cfg.input(&i.rates))?,
        open(&cfg.input(&i.dividends))?,
    )?;
    Ok(Inputs { trades, market })
}

pub fn load_varswaps(cfg: &RunConfig) -> Result<Vec<VarSwapQuote>> {
    parse_varswaps(open(&cfg.input(&cfg.inputs.varswaps))?)
}

/// Basket from the config, or from the weights of the first snapshot with the
/// index taken as the one ticker without a weight.
pub fn resolve_basket(cfg: &RunConfig, market: &MarketData) -> Result<(BasketSpec, String)> {
    if let Some(b) = &cfg.basket {
        if !b.tickers.is_empty() {
            let spec = BasketSpec::new(b.tickers.clone(), b.weights.clone())
                .map_err(|e| Error::Config(format!("basket: {e}")))?;
            return Ok((spec, b.index.clone()));
        }
    }
    let snap = market
        .values()
        .next()
        .ok_or_else(|| Error::InsufficientData("no market snapshots".into()))?;
    let (tickers, weights): (Vec<String>, Vec<f64>) = snap.weights.iter().map(|(t, w)| (t.clone(), *w)).unzip();
    let unweighted: Vec<&String> = snap.spot_by_ticker.keys().filter(|t| !snap.weights.contains_key(*t)).collect();
    let index = match (&cfg.basket, unweighted.as_slice()) {
        (Some(b), _) => b.index.clone(),
        (None, [one]) => (*one).clone(),
        _ => {
            return Err(Error::Config(
                "cannot infer the index ticker; set basket.index in the config".into(),
            ))
        }
    };
    Ok((BasketSpec::new(tickers, weights)?, index))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IvSummary {
    pub inverted: usize,
    pub failed: usize,
    pub above_cap: usize,
}

/// Implied vols of every prepared quote, grouped by date and underlying.
pub fn invert_quotes(
    panel: &QuotePanel,
    tree_steps: usize,
) -> (BTreeMap<NaiveDate, BTreeMap<String, Vec<IvPoint>>>, IvSummary) {
    let flat: Vec<_> = panel.days.iter().flat_map(|d| d.quotes.iter()).collect();
    let vols: Vec<Option<f64>> = flat
        .par_iter()
        .map(|q| {
            let mut inputs = PricingInputs::new(q.spot, q.trade.strike, q.rate, q.tau, 0.2, q.trade.right);
            inputs.dividends = q.dividends.clone();
            let model = match q.trade.style {
                ExerciseStyle::European => PricingModel::European,
                ExerciseStyle::American => PricingModel::American { steps: tree_steps },
            };
            implied_vol(q.trade.price, &inputs, model).ok()
        })
        .collect();
    let mut summary = IvSummary::default();
    let mut out: BTreeMap<NaiveDate, BTreeMap<String, Vec<IvPoint>>> = BTreeMap::new();
    for (q, v) in flat.iter().zip(vols) {
        match v {
            None => summary.failed += 1,
            Some(v) if v > MAX_IMPLIED_VOL => summary.above_cap += 1,
            Some(vol) => {
                summary.inverted += 1;
                out.entry(q.trade.trade_date)
                    .or_default()
                    .entry(q.trade.underlying.clone())
                    .or_default()
                    .push(IvPoint {
                        expiry: q.trade.expiry_date,
                        kappa: q.kappa,
                        tau: q.tau,
                        vol,
                    });
            }
        }
    }
    (out, summary)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IcsOutput {
    pub points: Vec<CorrelationPoint>,
    /// At-the-money index vol in percentage points, per day.
    pub atm_vol_pct: BTreeMap<NaiveDate, f64>,
    pub diagnostics: IcsDiagnostics,
    pub iv: IvSummary,
    pub breakpoint: Option<Breakpoint>,
}

/// Implied correlation points of every day with index and constituent quotes.
pub fn build_ics(inputs: &Inputs, basket: &BasketSpec, index: &str, cfg: &RunConfig) -> Result<IcsOutput> {
    let prepared = filter_and_prepare(&inputs.trades, &inputs.market).stage("marketdata")?;
    let (ivs, iv) = invert_quotes(&prepared, cfg.tree_steps);
    let mut out = IcsOutput {
        iv,
        ..Default::default()
    };
    let empty: Vec<IvPoint> = Vec::new();
    for (date, by_ticker) in &ivs {
        let Some(idx) = by_ticker.get(index) else {
            continue;
        };
        let cons: Vec<&[IvPoint]> = basket
            .tickers
            .iter()
            .map(|t| by_ticker.get(t).unwrap_or(&empty).as_slice())
            .collect();
        let (pts, diag) = implied_correlation_points(*date, idx, &cons, &basket.weights).stage("correlation")?;
        out.diagnostics.absorb(diag);
        if let Some(v) = atm_index_vol_pct(idx) {
            out.atm_vol_pct.insert(*date, v);
        }
        out.points.extend(pts);
    }
    if cfg.regime.enabled {
        let r = &cfg.regime;
        let bp = if r.fit {
            let est: Vec<&CorrelationPoint> =
                out.points.iter().filter(|p| cfg.estimation.contains(p.date)).collect();
            let x: Vec<f64> = est.iter().map(|p| 100.0 * p.index_vol).collect();
            let y: Vec<f64> = est.iter().map(|p| p.rho).collect();
            fit_breakpoint(&x, &y).stage("correlation")?
        } else {
            Breakpoint {
                threshold: r.threshold,
                slope_low: r.slope_low,
                slope_high: r.slope_high,
                intercept_low: 0.0,
                intercept_high: r.threshold * (r.slope_low - r.slope_high),
                sse: f64::NAN,
            }
        };
        out.points = regime_correct(&out.points, &out.atm_vol_pct, &bp).stage("correlation")?;
        out.breakpoint = Some(bp);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: FactorModel,
    pub selection: Option<BandwidthSelection>,
    /// Fisher-Z panel of every day, raw coordinates.
    pub panel: SurfacePanel,
}

/// Fit the factor model and its dynamics on the estimation range of a
/// Fisher-Z panel.
pub fn fit_model(panel: &SurfacePanel, cfg: &RunConfig) -> Result<FitOutput> {
    let (from, to) = cfg.estimation.bounds();
    let est = panel.slice(from, to);
    if est.is_empty() {
        return Err(Error::InsufficientData("no implied correlation data in the estimation range".into()))
            .stage("dsfm");
    }
    let mut options = cfg.dsfm.fit_options()?;
    let (transformed, maps) = ecdf_transform(&est).stage("dsfm")?;
    let candidates = cfg.dsfm.candidates()?;
    let mut h_star = cfg.dsfm.h_star()?;
    let selection = if candidates.is_empty() {
        None
    } else {
        let hs = match h_star {
            Some(h) => h,
            None => default_h_star(&transformed).stage("dsfm")?,
        };
        h_star = Some(hs);
        let sel = select_bandwidth(&transformed, &maps, &candidates, &options, hs).stage("dsfm")?;
        options.h_mu = sel.best;
        options.h_phi = Some(sel.best);
        Some(sel)
    };
    let mut model = fit_transformed(&transformed, maps, &options).stage("dsfm")?;
    model.h_star = h_star;
    if model.l() > 0 {
        model.dynamics = Some(fit_dynamics(&model.scores, &cfg.var).stage("timeseries")?);
    }
    Ok(FitOutput {
        model,
        selection,
        panel: panel.clone(),
    })
}

/// Implied correlation surfaces and the fitted model for loaded inputs.
pub fn run_fit(cfg: &RunConfig, inputs: &Inputs, basket: &BasketSpec, index: &str) -> Result<(FitOutput, IcsOutput)> {
    let ics = build_ics(inputs, basket, index, cfg)?;
    let panel = fisher_panel(&to_panel(&ics.points)).stage("correlation")?;
    let fit = fit_model(&panel, cfg)?;
    Ok((fit, ics))
}

/// Scores on every date: fitted scores inside the sample, projections of the
/// day's surface elsewhere, the previous value when a day has too little data.
pub fn score_history(model: &FactorModel, panel: &SurfacePanel, dates: &[NaiveDate]) -> Result<Vec<Vec<f64>>> {
    let fitted: BTreeMap<NaiveDate, &Vec<f64>> = model.dates.iter().copied().zip(&model.scores).collect();
    let by_day: BTreeMap<NaiveDate, &Vec<SurfacePoint>> = panel.days.iter().map(|d| (d.date, &d.points)).collect();
    let projected: Vec<Option<Vec<f64>>> = dates
        .par_iter()
        .map(|d| {
            if let Some(z) = fitted.get(d) {
                return Ok(Some((*z).clone()));
            }
            let Some(points) = by_day.get(d) else {
                return Ok(None);
            };
            let inside: Vec<SurfacePoint> = points
                .iter()
                .filter(|p| model.maps.kappa.contains(p.kappa) && model.maps.tau.contains(p.tau))
                .copied()
                .collect();
            Ok(match model.project_day(&inside)? {
                DayScores::Fitted { scores, .. } => Some(scores),
                DayScores::TooFew => None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut prev = vec![0.0; model.l()];
    Ok(projected
        .into_iter()
        .map(|z| {
            if let Some(z) = z {
                prev = z;
            }
            prev.clone()
        })
        .collect())
}

/// Forecast of the correlation at expiry from the scores one day before it,
/// at the money and at the shortest maturity the model covers.
pub struct DsfmForecaster<'a> {
    pub model: &'a FactorModel,
    pub history: Vec<Vec<f64>>,
}

impl DsfmForecaster<'_> {
    pub fn forecast_from(&self, last_index: usize) -> Result<f64> {
        let dynamics = self
            .model
            .dynamics
            .as_ref()
            .ok_or_else(|| invalid("model has no fitted dynamics"))?;
        let z = dynamics.forecast(&self.history[..=last_index], 1)?;
        evaluate_surface(self.model, &z[0], 1.0, self.model.maps.tau.min())
    }
}

impl CorrelationForecaster for DsfmForecaster<'_> {
    fn forecast(&self, ctx: &ForecastContext) -> Result<f64> {
        if ctx.expiry_index == 0 || ctx.expiry_index > self.history.len() {
            return Err(Error::InsufficientData("no score history before expiry".into()));
        }
        self.forecast_from(ctx.expiry_index - 1)
    }
}

pub fn backtest_data(cfg: &RunConfig, inputs: &Inputs, basket: &BasketSpec, index: &str) -> Result<BacktestData> {
    let varswaps = load_varswaps(cfg)?;
    let dates: Vec<NaiveDate> = inputs.market.keys().copied().collect();
    let prices = basket
        .tickers
        .iter()
        .map(String::as_str)
        .chain(std::iter::once(index))
        .map(|t| {
            let p = inputs
                .market
                .values()
                .map(|s| s.spot(t))
                .collect::<Result<Vec<f64>>>()?;
            Ok((t.to_string(), p))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    BacktestData::new(
        basket.clone(),
        index.to_string(),
        dates,
        prices,
        &varswaps,
        cfg.backtest.notional,
    )
}

/// Explained variance, unit-root, lag-order and VAR coefficient tables.
pub fn fit_report(fit: &FitOutput, ics: Option<&IcsOutput>) -> String {
    let m = &fit.model;
    let mut out = String::new();
    if let Some(ics) = ics {
        let _ = writeln!(
            out,
            "Implied correlation points: {} on {} days (IV failures {}, above cap {}, uncovered {}, extrapolation {})\n",
            ics.points.len(),
            fit.panel.len(),
            ics.iv.failed,
            ics.iv.above_cap,
            ics.diagnostics.dropped_uncovered,
            ics.diagnostics.dropped_extrapolation
        );
    }
    let _ = writeln!(
        out,
        "Bandwidths: h_mu = ({}, {}), h_phi = ({}, {}){}",
        m.h_mu.h1,
        m.h_mu.h2,
        m.h_phi.h1,
        m.h_phi.h2,
        m.h_star.map(|h| format!(", h* = ({:.4}, {:.4})", h.h1, h.h2)).unwrap_or_default()
    );
    if let Some(sel) = &fit.selection {
        let _ = writeln!(out, "\n{:<20}{:>16}", "Candidate", "Criterion");
        for c in &sel.table {
            let v = c.criterion.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "failed".into());
            let _ = writeln!(out, "{:<20}{:>16}", format!("({}, {})", c.h.h1, c.h.h2), v);
        }
    }

    let _ = writeln!(out, "\nExplained variance");
    let _ = writeln!(out, "{:<6}{:>14}{:>12}{:>12}", "l", "eigenvalue", "share", "cumulative");
    let total_shares: f64 = m.variance_shares.iter().sum();
    let mut cum = 0.0;
    for (l, share) in m.variance_shares.iter().enumerate() {
        cum += share;
        let ev = m.eigenvalues.get(l).map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{:<6}{:>14}{:>12.4}{:>12.4}", l + 1, ev, share, cum);
    }
    let _ = writeln!(
        out,
        "retained L = {}, explained variance {:.4} (listed shares sum {:.4})",
        m.l(),
        m.explained_variance,
        total_shares
    );

    let Some(d) = &m.dynamics else {
        let _ = writeln!(out, "\nNo factor dynamics (no retained components).");
        return out;
    };
    let _ = writeln!(out, "\nUnit-root tests (ADF with constant, 5% critical value -2.86)");
    let _ = writeln!(
        out,
        "{:<8}{:>12}{:>6}{:>10}{:>14}{:>6}",
        "Factor", "ADF", "lags", "I(0)", "ADF diff.", "lags"
    );
    for (l, r) in d.adf.iter().enumerate() {
        let (ds, dl) = match &d.adf_differenced[l] {
            Some(x) => (format!("{:.4}", x.statistic), x.lags_used.to_string()),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            out,
            "{:<8}{:>12.4}{:>6}{:>10}{:>14}{:>6}",
            format!("Z{}", l + 1),
            r.statistic,
            r.lags_used,
            if r.reject_at_5pct { "yes" } else { "no" },
            ds,
            dl
        );
    }

    let _ = writeln!(out, "\nLag order selection");
    match &d.lag_selection {
        Some(sel) => {
            let _ = writeln!(out, "{:<6}{:>14}{:>14}{:>14}", "p", "AIC", "HQIC", "SBIC");
            for r in &sel.rows {
                let star = |b: usize, v: f64| format!("{v:.4}{}", if b == r.p { "*" } else { " " });
                let _ = writeln!(
                    out,
                    "{:<6}{:>14}{:>14}{:>14}",
                    r.p,
                    star(sel.best_aic, r.aic),
                    star(sel.best_hqic, r.hqic),
                    star(sel.best_sbic, r.sbic)
                );
            }
        }
        None => {
            let _ = writeln!(out, "fixed p = {}", d.var.p);
        }
    }

    let v = &d.var;
    let _ = writeln!(out, "\nVAR({}) coefficients (standard errors)", v.p);
    let k = v.dim();
    let label = |l: usize| {
        if d.differenced[l] {
            format!("dZ{}", l + 1)
        } else {
            format!("Z{}", l + 1)
        }
    };
    let mut header = format!("{:<12}", "");
    for eq in 0..k {
        header += &format!("{:>24}", label(eq));
    }
    let _ = writeln!(out, "{header}");
    let cell = |c: f64, se: f64| format!("{c:.4} ({se:.4})");
    let mut row = format!("{:<12}", "const");
    for eq in 0..k {
        row += &format!("{:>24}", cell(v.intercept[eq], v.intercept_se[eq]));
    }
    let _ = writeln!(out, "{row}");
    for lag in 0..v.p {
        for var in 0..k {
            let mut row = format!("{:<12}", format!("{}(-{})", label(var), lag + 1));
            for eq in 0..k {
                row += &format!(
                    "{:>24}",
                    cell(v.coefficients[lag][eq][var], v.coefficient_se[lag][eq][var])
                );
            }
            let _ = writeln!(out, "{row}");
        }
    }
    if let Some(p) = &d.portmanteau {
        let _ = writeln!(out, "\nPortmanteau: {} ({})", format_args!("{:.4}", p.statistic), p.detail);
    }
    out
}

pub const MODEL_FILE: &str = "model.json";
pub const ICS_FILE: &str = "ics.csv";
pub const FIT_REPORT_FILE: &str = "fit_report.txt";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let mut f = create(dir, name)?;
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Writes a synthetic market into the configured input directory.
pub fn cmd_generate(cfg: &RunConfig) -> Result<PathBuf> {
    let mut synth = cfg.synth.clone();
    synth.tree_steps = cfg.tree_steps;
    let market = generate_market(&synth).stage("synth")?;
    let dir = cfg.input_dir();
    write_market_files(&dir, &market).stage("synth")?;
    Ok(dir)
}

fn load_all(cfg: &RunConfig) -> Result<(Inputs, BasketSpec, String)> {
    let inputs = load_inputs(cfg).stage("marketdata")?;
    let (basket, index) = resolve_basket(cfg, &inputs.market).stage("marketdata")?;
    Ok((inputs, basket, index))
}

fn write_fit(cfg: &RunConfig, fit: &FitOutput, ics: &IcsOutput) -> Result<()> {
    let dir = cfg.output_dir();
    let mut f = create(&dir, MODEL_FILE)?;
    fit.model.write(&mut f)?;
    f.flush()?;
    let mut f = create(&dir, ICS_FILE)?;
    write_ics(&mut f, &to_panel(&ics.points))?;
    f.flush()?;
    write_text(&dir, FIT_REPORT_FILE, &fit_report(fit, Some(ics)))
}

/// Fits the model and writes `model.json`, `ics.csv` and `fit_report.txt`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<FitOutput> {
    let (inputs, basket, index) = load_all(cfg)?;
    let (fit, ics) = run_fit(cfg, &inputs, &basket, &index)?;
    write_fit(cfg, &fit, &ics).stage("output")?;
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub step: usize,
    pub kappa: f64,
    pub tau: f64,
    pub rho: f64,
}

const FORECAST_KAPPAS: [f64; 5] = [0.9, 0.95, 1.0, 1.05, 1.1];

/// Model and Fisher-Z surfaces written by `fit`.
pub fn load_fitted(cfg: &RunConfig, model_path: Option<&Path>) -> Result<(FactorModel, SurfacePanel)> {
    let dir = cfg.output_dir();
    let model_path = model_path.map(|p| cfg.resolve(p)).unwrap_or_else(|| dir.join(MODEL_FILE));
    let model = FactorModel::read(open(&model_path)?)
        .map_err(|e| invalid(format!("{}: {e}", model_path.display())))
        .stage("model")?;
    let ics_path = model_path.with_file_name(ICS_FILE);
    let panel = read_ics(open(&ics_path)?).stage("model")?;
    let panel = fisher_panel(&panel).stage("model")?;
    Ok((model, panel))
}

/// Correlation forecasts for the steps after the last surface date, at the
/// backtest tenors and a few moneyness levels inside the fitted range.
pub fn cmd_forecast(cfg: &RunConfig, model_path: Option<&Path>) -> Result<Vec<ForecastRow>> {
    let (model, panel) = load_fitted(cfg, model_path)?;
    let model = &model;
    let dynamics = model
        .dynamics
        .as_ref()
        .ok_or_else(|| Error::InsufficientData("model has no retained factors to forecast".into()))
        .stage("timeseries")?;
    let mut dates: Vec<NaiveDate> = panel.days.iter().map(|d| d.date).chain(model.dates.iter().copied()).collect();
    dates.sort();
    dates.dedup();
    let history = score_history(model, &panel, &dates).stage("dsfm")?;
    let path = dynamics.forecast(&history, cfg.forecast_horizon).stage("timeseries")?;
    let maps = &model.maps;
    let mut taus: Vec<f64> = std::iter::once(maps.tau.min())
        .chain(cfg.backtest.tenors.iter().copied().filter(|t| maps.tau.contains(*t)))
        .collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let kappas: Vec<f64> = FORECAST_KAPPAS.iter().copied().filter(|k| maps.kappa.contains(*k)).collect();
    let mut rows = Vec::new();
    for (step, z) in path.iter().enumerate() {
        for &tau in &taus {
            for &kappa in &kappas {
                let rho = evaluate_surface(model, z, kappa, tau).stage("dsfm")?;
                rows.push(ForecastRow {
                    step: step + 1,
                    kappa,
                    tau,
                    rho,
                });
            }
        }
    }
    let mut w = csv::Writer::from_writer(create(&cfg.output_dir(), FORECAST_FILE)?);
    w.write_record(["step", "kappa", "tau", "rho"])?;
    for r in &rows {
        w.write_record([r.step.to_string(), r.kappa.to_string(), r.tau.to_string(), r.rho.to_string()])?;
    }
    w.flush()?;
    Ok(rows)
}

/// Dispersion backtest for every configured tenor. Writes `ledger.csv` and
/// `summary.txt`; with `oracle` the realized correlation is the forecast and
/// no model is needed.
pub fn cmd_backtest(cfg: &RunConfig, model_path: Option<&Path>, oracle: bool) -> Result<Vec<BacktestLedger>> {
    let (inputs, basket, index) = load_all(cfg)?;
    let data = backtest_data(cfg, &inputs, &basket, &index).stage("marketdata")?;
    let (from, to) = cfg.backtest_range.bounds();
    let fitted;
    let dsfm;
    let forecaster: &dyn CorrelationForecaster = if oracle {
        &OracleForecaster
    } else {
        let (model, panel) = load_fitted(cfg, model_path)?;
        if model.dynamics.is_none() {
            return Err(Error::InsufficientData("model has no retained factors to forecast".into()))
                .stage("timeseries");
        }
        let history = score_history(&model, &panel, &data.dates).stage("dsfm")?;
        fitted = model;
        dsfm = DsfmForecaster {
            model: &fitted,
            history,
        };
        &dsfm
    };
    let ledgers = cfg
        .backtest
        .tenors
        .iter()
        .map(|&tenor| run_backtest(&data, tenor, from, to, forecaster))
        .collect::<Result<Vec<_>>>()
        .stage("strategy")?;
    write_backtest(cfg, &ledgers).stage("output")?;
    Ok(ledgers)
}

fn write_backtest(cfg: &RunConfig, ledgers: &[BacktestLedger]) -> Result<()> {
    let dir = cfg.output_dir();
    let mut f = create(&dir, LEDGER_FILE)?;
    write_ledger(&mut f, ledgers)?;
    f.flush()?;
    write_text(&dir, SUMMARY_FILE, &summary_text(ledgers))
}

/// Re-renders `summary.txt` from an existing `ledger.csv`.
pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let dir = cfg.output_dir();
    let ledgers = open(&dir.join(LEDGER_FILE))
        .and_then(read_ledger)
        .stage("strategy")?;
    let text = summary_text(&ledgers);
    write_text(&dir, SUMMARY_FILE, &text).stage("output")?;
    Ok(text)
}

/// Hedge-error and strategy tables followed by one-sided mean tests.
pub fn summary_text(ledgers: &[BacktestLedger]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Hedge error (D_h - D) / D\n");
    out += &hedge_error_table(ledgers);
    let _ = writeln!(out, "\nStrategy payoffs\n");
    out += &strategy_table(ledgers);
    let _ = writeln!(out, "\nMean tests (one-sided, 5%)\n");
    let _ = writeln!(
        out,
        "{:<14}{:<8}{:>6}{:>12}{:>12}{:>10}  {}",
        "Series", "tau", "n", "t", "p", "H1", "reject"
    );
    type Pick = fn(&LedgerRow) -> Option<f64>;
    let series: [(&str, Alternative, Pick); 4] = [
        ("hedge error", Alternative::Less, |r| r.hedge_error),
        ("D", Alternative::Greater, |r| Some(r.d)),
        ("D - D_h", Alternative::Greater, |r| Some(r.d - r.d_h)),
        ("D_adv", Alternative::Greater, |r| Some(r.d_adv)),
    ];
    for (name, alt, pick) in series {
        for l in ledgers {
            let xs: Vec<f64> = l.rows.iter().filter_map(pick).collect();
            let h1 = match alt {
                Alternative::Less => "mean < 0",
                Alternative::Greater => "mean > 0",
            };
            let line = match payoff_summary(&xs, alt).ok().and_then(|s| s.mean_test) {
                Some(t) => format!(
                    "{:<14}{:<8}{:>6}{:>12.4}{:>12.4}{:>10}  {}",
                    name,
                    l.tenor,
                    xs.len(),
                    t.statistic,
                    t.p_value,
                    h1,
                    if t.reject_at_5pct { "yes" } else { "no" }
                ),
                None => format!("{:<14}{:<8}{:>6}{:>12}{:>12}{:>10}  n/a", name, l.tenor, xs.len(), "-", "-", h1),
            };
            let _ = writeln!(out, "{line}");
        }
    }
    let notes: Vec<String> = ledgers
        .iter()
        .filter(|l| l.incomplete > 0 || !l.forecast_failures.is_empty())
        .map(|l| {
            format!(
                "tau {}: {} incomplete origination days, {} forecast failures",
                l.tenor,
                l.incomplete,
                l.forecast_failures.len()
            )
        })
        .collect();
    if !notes.is_empty() {
        let _ = writeln!(out);
        for n in notes {
            let _ = writeln!(out, "{n}");
        }
    }
    out
}
