use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::Grid2D;
use crate::error::{invalid, Result};
use crate::marketdata::{SurfacePanel, SurfacePoint};

pub const RIDGE_PENALTY: f64 = 1e-8;
const PIVOT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    /// One row of `L` scores per day.
    pub scores: Vec<Vec<f64>>,
    /// Days with fewer than `L + 1` observations, filled from the previous day.
    pub carried_forward: Vec<usize>,
    /// Days whose design was singular and solved with a ridge penalty.
    pub ridge: Vec<usize>,
}

/// Outcome of one day's least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub enum DayScores {
    Fitted { scores: Vec<f64>, ridge: bool },
    TooFew,
}

/// Least squares of `Y - m0(X)` on the basis surfaces at the day's points.
pub fn day_scores(points: &[SurfacePoint], grid: &Grid2D, m0: &[f64], basis: &[Vec<f64>]) -> Result<DayScores> {
    if m0.len() != grid.len() || basis.iter().any(|b| b.len() != grid.len()) {
        return Err(invalid("surfaces do not match grid"));
    }
    let l = basis.len();
    if points.len() < l + 1 {
        return Ok(DayScores::TooFew);
    }
    if l == 0 {
        return Ok(DayScores::Fitted { scores: Vec::new(), ridge: false });
    }
    let x = DMatrix::from_fn(points.len(), l, |j, k| grid.interpolate(&basis[k], points[j].kappa, points[j].tau));
    let y = DVector::from_iterator(
        points.len(),
        points.iter().map(|p| p.value - grid.interpolate(m0, p.kappa, p.tau)),
    );
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    if let Some(beta) = scaled_solve(&xtx, &xty) {
        return Ok(DayScores::Fitted { scores: beta.iter().copied().collect(), ridge: false });
    }
    let ridge = &xtx + DMatrix::identity(l, l) * RIDGE_PENALTY;
    let beta = ridge
        .cholesky()
        .map(|c| c.solve(&xty))
        .ok_or_else(|| crate::error::Error::Singular("ridge system not positive definite".into()))?;
    Ok(DayScores::Fitted { scores: beta.iter().copied().collect(), ridge: true })
}

fn scaled_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    let mut d = DVector::zeros(n);
    for i in 0..n {
        if !(a[(i, i)] > 0.0) {
            return None;
        }
        d[i] = 1.0 / a[(i, i)].sqrt();
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * d[i] * d[j]);
    let chol = scaled.cholesky()?;
    let lo = chol.l_dirty();
    if (0..n).any(|i| lo[(i, i)] * lo[(i, i)] < PIVOT_TOLERANCE) {
        return None;
    }
    Some(chol.solve(&b.component_mul(&d)).component_mul(&d))
}

/// Per-day scores for a whole panel; short days repeat the previous day's
/// scores (zeros for a leading short day).
pub fn factor_scores(panel: &SurfacePanel, grid: &Grid2D, m0: &[f64], basis: &[Vec<f64>]) -> Result<ScoreResult> {
    let fits = panel
        .days
        .par_iter()
        .map(|d| day_scores(&d.points, grid, m0, basis))
        .collect::<Result<Vec<_>>>()?;
    let mut out = ScoreResult {
        scores: Vec::with_capacity(fits.len()),
        carried_forward: Vec::new(),
        ridge: Vec::new(),
    };
    let mut prev = vec![0.0; basis.len()];
    for (t, f) in fits.into_iter().enumerate() {
        match f {
            DayScores::Fitted { scores, ridge } => {
                if ridge {
                    out.ridge.push(t);
                }
                prev = scores.clone();
                out.scores.push(scores);
            }
            DayScores::TooFew => {
                out.carried_forward.push(t);
                out.scores.push(prev.clone());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marketdata::SurfaceDay;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn surfaces(grid: &Grid2D) -> (Vec<f64>, Vec<Vec<f64>>) {
        let f = |g: &dyn Fn(f64, f64) -> f64| (0..grid.len()).map(|k| { let (u, v) = grid.node(k); g(u, v) }).collect::<Vec<_>>();
        (
            f(&|u, v| 0.4 + 0.1 * u * v),
            vec![f(&|_, _| 1.0), f(&|u, _| 3f64.sqrt() * (2.0 * u - 1.0)), f(&|_, v| 3f64.sqrt() * (2.0 * v - 1.0))],
        )
    }

    fn day(points: Vec<SurfacePoint>) -> SurfaceDay {
        SurfaceDay { date: NaiveDate::from_ymd_opt(2010, 1, 4).unwrap(), points }
    }

    #[test]
    fn exact_model_gives_exact_scores() {
        let grid = Grid2D::new(11, 11).unwrap();
        let (m0, basis) = surfaces(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = [2.0, -1.0, 0.0];
        let pts: Vec<SurfacePoint> = (0..60)
            .map(|_| {
                let (u, v) = (rng.gen::<f64>(), rng.gen::<f64>());
                let y = grid.interpolate(&m0, u, v) + (0..3).map(|l| z[l] * grid.interpolate(&basis[l], u, v)).sum::<f64>();
                SurfacePoint { kappa: u, tau: v, value: y }
            })
            .collect();
        match day_scores(&pts, &grid, &m0, &basis).unwrap() {
            DayScores::Fitted { scores, ridge } => {
                assert!(!ridge);
                for (a, b) in scores.iter().zip(z) {
                    assert!((a - b).abs() < 1e-8);
                }
            }
            DayScores::TooFew => panic!(),
        }
    }

    #[test]
    fn noisy_scores_within_standard_errors() {
        let grid = Grid2D::new(11, 11).unwrap();
        let (m0, basis) = surfaces(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let z = [0.5, 0.3, -0.2];
        let coords: Vec<(f64, f64)> = (0..135).map(|_| (rng.gen(), rng.gen())).collect();
        let pts: Vec<SurfacePoint> = coords
            .iter()
            .map(|&(u, v)| {
                let y = grid.interpolate(&m0, u, v)
                    + (0..3).map(|l| z[l] * grid.interpolate(&basis[l], u, v)).sum::<f64>()
                    + noise.sample(&mut rng);
                SurfacePoint { kappa: u, tau: v, value: y }
            })
            .collect();
        let DayScores::Fitted { scores, .. } = day_scores(&pts, &grid, &m0, &basis).unwrap() else { panic!() };
        // OLS covariance sigma^2 (X'X)^-1
        let x = DMatrix::from_fn(135, 3, |j, k| grid.interpolate(&basis[k], coords[j].0, coords[j].1));
        let cov = (x.transpose() * x).try_inverse().unwrap() * 1e-4;
        for l in 0..3 {
            assert!((scores[l] - z[l]).abs() < 3.0 * cov[(l, l)].sqrt());
        }
    }

    #[test]
    fn degenerate_day_uses_ridge() {
        let grid = Grid2D::new(5, 5).unwrap();
        let (m0, basis) = surfaces(&grid);
        let pts = vec![SurfacePoint { kappa: 0.3, tau: 0.6, value: 0.5 }; 10];
        let DayScores::Fitted { scores, ridge } = day_scores(&pts, &grid, &m0, &basis).unwrap() else { panic!() };
        assert!(ridge);
        assert!(scores.iter().all(|s| s.is_finite()));
    }

    #[test]
    fn short_days_carry_forward() {
        let grid = Grid2D::new(5, 5).unwrap();
        let (m0, basis) = surfaces(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let full: Vec<SurfacePoint> = (0..20)
            .map(|_| SurfacePoint { kappa: rng.gen(), tau: rng.gen(), value: rng.gen() })
            .collect();
        let panel = SurfacePanel {
            days: vec![day(full[..2].to_vec()), day(full.clone()), day(full[..3].to_vec())],
        };
        let out = factor_scores(&panel, &grid, &m0, &basis).unwrap();
        assert_eq!(out.carried_forward, vec![0, 2]);
        assert_eq!(out.scores[0], vec![0.0; 3]);
        assert_eq!(out.scores[2], out.scores[1]);
    }
}
