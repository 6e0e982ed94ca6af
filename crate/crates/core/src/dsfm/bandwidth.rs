//! Bandwidth choice by a density-weighted, AIC-penalized residual criterion.

use serde::{Deserialize, Serialize};

use super::smooth::product_kernel;
use super::{fit_transformed, Bandwidth, FactorModel, FitOptions};
use crate::error::{Error, Result};
use crate::marketdata::{CoordinateMaps, SurfacePanel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub h: Bandwidth,
    /// `None` when the fit failed for this candidate.
    pub criterion: Option<f64>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSelection {
    pub best: Bandwidth,
    pub h_star: Bandwidth,
    pub table: Vec<CandidateScore>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median over days of each day's median absolute pairwise coordinate
/// difference, per axis; days with fewer than two points are skipped.
pub fn default_h_star(panel: &SurfacePanel) -> Result<Bandwidth> {
    let mut per_day = [Vec::new(), Vec::new()];
    for d in &panel.days {
        if d.points.len() < 2 {
            continue;
        }
        for (axis, out) in per_day.iter_mut().enumerate() {
            let xs: Vec<f64> = d.points.iter().map(|p| if axis == 0 { p.kappa } else { p.tau }).collect();
            let mut diffs = Vec::with_capacity(xs.len() * (xs.len() - 1) / 2);
            for j in 0..xs.len() {
                for k in 0..j {
                    diffs.push((xs[j] - xs[k]).abs());
                }
            }
            out.push(median(&mut diffs));
        }
    }
    if per_day[0].is_empty() {
        return Err(Error::InsufficientData("no day with two observations".into()));
    }
    let clamp = |x: f64| x.clamp(1e-3, 0.999);
    Bandwidth::new(clamp(median(&mut per_day[0])), clamp(median(&mut per_day[1])))
}

/// Criterion value of a fitted model with smoothing bandwidth `h` and
/// weighting bandwidth `h_star`, on the transformed panel it was fitted to.
pub fn criterion(model: &FactorModel, panel: &SurfacePanel, h: Bandwidth, h_star: Bandwidth) -> Result<f64> {
    let t_days = panel.days.len() as f64;
    let k0 = product_kernel(0.0, 0.0, h);
    let mut total = 0.0;
    for (t, d) in panel.days.iter().enumerate() {
        let j_t = d.points.len();
        if j_t == 0 {
            continue;
        }
        let jf = j_t as f64;
        let z = &model.scores[t];
        let mut day_sum = 0.0;
        for p in &d.points {
            let mut dens_h = 0.0;
            let mut dens_star = 0.0;
            for q in &d.points {
                dens_h += product_kernel(q.kappa - p.kappa, q.tau - p.tau, h);
                dens_star += product_kernel(q.kappa - p.kappa, q.tau - p.tau, h_star);
            }
            dens_h /= jf;
            dens_star /= jf;
            let resid = p.value - model.transformed_value(z, p.kappa, p.tau)?;
            let leverage = k0 / dens_h;
            day_sum += resid * resid / dens_star * (2.0 * leverage / (t_days * jf)).exp();
        }
        total += day_sum / jf;
    }
    Ok(total / t_days)
}

/// Fit the model once per candidate (mean and pair smoothers share the
/// candidate) and keep the candidate with the smallest criterion.
pub fn select_bandwidth(
    panel: &SurfacePanel,
    maps: &CoordinateMaps,
    candidates: &[Bandwidth],
    options: &FitOptions,
    h_star: Bandwidth,
) -> Result<BandwidthSelection> {
    if candidates.is_empty() {
        return Err(crate::error::invalid("no bandwidth candidates"));
    }
    h_star.validate()?;
    let mut table = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, Bandwidth)> = None;
    for &h in candidates {
        let opts = FitOptions {
            h_mu: h,
            h_phi: Some(h),
            ..options.clone()
        };
        let outcome = fit_transformed(panel, maps.clone(), &opts).and_then(|m| criterion(&m, panel, h, h_star));
        match outcome {
            Ok(c) if c.is_finite() => {
                if best.map_or(true, |(bc, _)| c < bc) {
                    best = Some((c, h));
                }
                table.push(CandidateScore { h, criterion: Some(c), message: None });
            }
            Ok(c) => table.push(CandidateScore {
                h,
                criterion: None,
                message: Some(format!("non-finite criterion {c}")),
            }),
            Err(e) => table.push(CandidateScore { h, criterion: None, message: Some(e.to_string()) }),
        }
    }
    let (_, best) = best.ok_or_else(|| Error::Singular("every bandwidth candidate failed".into()))?;
    Ok(BandwidthSelection { best, h_star, table })
}
