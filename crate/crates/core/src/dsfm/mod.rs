//! Dynamic semiparametric factor model for correlation surfaces.

pub mod bandwidth;
pub mod fpca;
pub mod grid;
pub mod scores;
pub mod smooth;

use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::correlation::fisher_z_inv;
use crate::error::{invalid, Result};
use crate::marketdata::{ecdf_transform, CoordinateMaps, SurfaceDay, SurfacePanel, SurfacePoint};
use crate::timeseries::FactorDynamics;

pub use bandwidth::{default_h_star, select_bandwidth, BandwidthSelection};
pub use fpca::{covariance_surface, fpca, Fpca};
pub use grid::Grid2D;
pub use scores::{day_scores, factor_scores, DayScores, ScoreResult};
pub use smooth::{smooth_mean, smooth_pair_surface, smooth_second_moment, PairTerm, SmoothResult};

/// Kernel widths in the transformed moneyness and maturity coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub h1: f64,
    pub h2: f64,
}

impl Bandwidth {
    pub fn new(h1: f64, h2: f64) -> Result<Self> {
        let h = Self { h1, h2 };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h1 > 0.0 && self.h1 < 1.0 && self.h2 > 0.0 && self.h2 < 1.0) {
            return Err(invalid(format!("bandwidth ({}, {}) outside (0, 1)", self.h1, self.h2)));
        }
        Ok(())
    }
}

impl Default for Bandwidth {
    fn default() -> Self {
        Self { h1: 0.12, h2: 0.17 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub grid: [usize; 2],
    pub h_mu: Bandwidth,
    /// Defaults to `h_mu`.
    pub h_phi: Option<Bandwidth>,
    pub l_max: usize,
    pub variance_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            grid: [25, 25],
            h_mu: Bandwidth::default(),
            h_phi: None,
            l_max: 3,
            variance_threshold: 0.95,
        }
    }
}

impl FitOptions {
    pub fn h_phi(&self) -> Bandwidth {
        self.h_phi.unwrap_or(self.h_mu)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub flagged_mean_nodes: Vec<usize>,
    pub flagged_pair_count: usize,
    pub carried_forward_days: Vec<NaiveDate>,
    pub ridge_days: Vec<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub grid: Grid2D,
    /// Mean surface, row-major on the grid.
    pub m0: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance: f64,
    /// Variance share of the leading components, retained or not.
    pub variance_shares: Vec<f64>,
    pub dates: Vec<NaiveDate>,
    pub scores: Vec<Vec<f64>>,
    pub h_mu: Bandwidth,
    pub h_phi: Bandwidth,
    /// Weighting bandwidth used when `h_mu` was selected by criterion.
    pub h_star: Option<Bandwidth>,
    pub maps: CoordinateMaps,
    pub diagnostics: FitDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<FactorDynamics>,
}

const SHARES_REPORTED: usize = 10;

/// Fit on a panel whose values are Fisher-Z correlations in raw coordinates.
pub fn fit_factor_model(panel: &SurfacePanel, options: &FitOptions) -> Result<FactorModel> {
    panel.validate()?;
    let (transformed, maps) = ecdf_transform(panel)?;
    fit_transformed(&transformed, maps, options)
}

fn pooled_mean(panel: &SurfacePanel) -> f64 {
    let n = panel.n_obs();
    if n == 0 {
        return 0.0;
    }
    panel.days.iter().flat_map(|d| d.points.iter().map(|p| p.value)).sum::<f64>() / n as f64
}

fn shifted(panel: &SurfacePanel, shift: f64) -> SurfacePanel {
    SurfacePanel {
        days: panel
            .days
            .iter()
            .map(|d| SurfaceDay {
                date: d.date,
                points: d.points.iter().map(|p| SurfacePoint { value: p.value - shift, ..*p }).collect(),
            })
            .collect(),
    }
}

/// Fit on a panel already mapped to the unit square.
pub fn fit_transformed(panel: &SurfacePanel, maps: CoordinateMaps, options: &FitOptions) -> Result<FactorModel> {
    let grid = Grid2D::new(options.grid[0], options.grid[1])?;
    let h_mu = options.h_mu;
    let h_phi = options.h_phi();
    // Covariance is shift invariant; smoothing responses around their pooled
    // mean avoids cancellation between the second moment and the mean product.
    let shift = pooled_mean(panel);
    let centered = shifted(panel, shift);
    let mut mean = smooth_mean(&centered, &grid, h_mu)?;
    let phi = smooth_second_moment(&centered, &grid, h_phi)?;
    let psi = covariance_surface(&phi.values, &mean.values)?;
    mean.values.iter_mut().for_each(|m| *m += shift);
    let pca = fpca(&psi, &grid, options.l_max, options.variance_threshold)?;
    let sc = factor_scores(panel, &grid, &mean.values, &pca.basis)?;
    let total: f64 = pca.spectrum.iter().sum();
    let dates = panel.dates();
    Ok(FactorModel {
        variance_shares: pca
            .spectrum
            .iter()
            .take(SHARES_REPORTED)
            .map(|l| if total > 0.0 { l / total } else { 0.0 })
            .collect(),
        diagnostics: FitDiagnostics {
            flagged_mean_nodes: mean.flagged,
            flagged_pair_count: phi.flagged.len(),
            carried_forward_days: sc.carried_forward.iter().map(|&t| dates[t]).collect(),
            ridge_days: sc.ridge.iter().map(|&t| dates[t]).collect(),
        },
        grid,
        m0: mean.values,
        basis: pca.basis,
        eigenvalues: pca.eigenvalues,
        explained_variance: pca.explained_variance,
        dates,
        scores: sc.scores,
        h_mu,
        h_phi,
        h_star: None,
        maps,
        dynamics: None,
    })
}

impl FactorModel {
    pub fn l(&self) -> usize {
        self.basis.len()
    }

    /// `m0 + sum_l z_l m_l` at a point of the unit square.
    pub fn transformed_value(&self, z: &[f64], u: f64, v: f64) -> Result<f64> {
        if z.len() != self.l() {
            return Err(invalid(format!("expected {} scores, got {}", self.l(), z.len())));
        }
        Ok(self.grid.interpolate(&self.m0, u, v)
            + z.iter().zip(&self.basis).map(|(zl, m)| zl * self.grid.interpolate(m, u, v)).sum::<f64>())
    }

    /// Scores of a new day under the fitted basis.
    pub fn project_day(&self, points: &[SurfacePoint]) -> Result<DayScores> {
        let mapped = points
            .iter()
            .map(|p| {
                let (u, v) = self.maps.forward(p.kappa, p.tau)?;
                Ok(SurfacePoint { kappa: u, tau: v, value: p.value })
            })
            .collect::<Result<Vec<_>>>()?;
        day_scores(&mapped, &self.grid, &self.m0, &self.basis)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_json()?.as_bytes())?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut s = String::new();
        input.read_to_string(&mut s)?;
        Self::from_json(&s)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let n = self.grid.len();
        if self.m0.len() != n || self.basis.iter().any(|b| b.len() != n) {
            return Err(invalid("model surfaces do not match grid"));
        }
        if self.eigenvalues.len() != self.basis.len() {
            return Err(invalid("one eigenvalue per basis surface required"));
        }
        if self.eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(invalid("eigenvalues must be nonincreasing"));
        }
        if self.scores.len() != self.dates.len() || self.scores.iter().any(|s| s.len() != self.basis.len()) {
            return Err(invalid("score matrix shape does not match dates and basis"));
        }
        Ok(())
    }
}

/// Correlation implied by scores `z` at raw coordinates `(kappa, tau)`.
pub fn evaluate_surface(model: &FactorModel, z: &[f64], kappa: f64, tau: f64) -> Result<f64> {
    let (u, v) = model.maps.forward(kappa, tau)?;
    Ok(fisher_z_inv(model.transformed_value(z, u, v)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marketdata::EcdfMap;

    fn toy_model() -> FactorModel {
        let grid = Grid2D::new(5, 5).unwrap();
        let m0: Vec<f64> = (0..grid.len()).map(|k| 0.3 + 0.01 * k as f64).collect();
        let basis = vec![(0..grid.len()).map(|k| ((k % 7) as f64 - 3.0) * 0.1).collect()];
        FactorModel {
            m0,
            basis,
            eigenvalues: vec![0.5],
            explained_variance: 1.0,
            variance_shares: vec![1.0],
            dates: vec![NaiveDate::from_ymd_opt(2010, 1, 4).unwrap()],
            scores: vec![vec![0.25]],
            h_mu: Bandwidth::default(),
            h_phi: Bandwidth::default(),
            h_star: Some(Bandwidth::new(0.3, 0.3).unwrap()),
            maps: CoordinateMaps {
                kappa: EcdfMap { knots: vec![0.0, 2.0], values: vec![0.0, 1.0] },
                tau: EcdfMap { knots: vec![0.0, 1.0], values: vec![0.0, 1.0] },
            },
            diagnostics: FitDiagnostics::default(),
            dynamics: None,
            grid,
        }
    }

    #[test]
    fn zero_scores_give_mean_surface() {
        let m = toy_model();
        let r = evaluate_surface(&m, &[0.0], 1.0, 0.5).unwrap();
        let y = m.grid.interpolate(&m.m0, 0.5, 0.5);
        assert!((r - y.tanh()).abs() < 1e-15);
    }

    #[test]
    fn grid_nodes_are_exact() {
        let m = toy_model();
        let k = m.grid.index(1, 3);
        let (u, v) = m.grid.node(k);
        let expected = m.m0[k] + 0.7 * m.basis[0][k];
        assert_eq!(evaluate_surface(&m, &[0.7], 2.0 * u, v).unwrap(), fisher_z_inv(expected));
    }

    #[test]
    fn outside_hull_is_an_error() {
        let m = toy_model();
        assert!(evaluate_surface(&m, &[0.0], 2.3, 0.5).is_err());
        assert!(evaluate_surface(&m, &[0.0, 1.0], 1.0, 0.5).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut m = toy_model();
        m.m0[3] = 0.1 + 0.2;
        m.basis[0][2] = std::f64::consts::PI / 7.0;
        let s = m.to_json().unwrap();
        let back = FactorModel::from_json(&s).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), s);
    }

    #[test]
    fn project_day_maps_coordinates() {
        let m = toy_model();
        let pts: Vec<SurfacePoint> = [(0.3, 0.1), (1.0, 0.5), (1.7, 0.9)]
            .iter()
            .map(|&(kappa, tau)| {
                let (u, v) = m.maps.forward(kappa, tau).unwrap();
                SurfacePoint { kappa, tau, value: m.transformed_value(&[-0.4], u, v).unwrap() }
            })
            .collect();
        let DayScores::Fitted { scores, .. } = m.project_day(&pts).unwrap() else { panic!() };
        assert!((scores[0] + 0.4).abs() < 1e-10);
    }
}
