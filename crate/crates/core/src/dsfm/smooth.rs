//! Local-linear smoothers with a product quartic kernel.
//!
//! The pair smoother evaluates sums over distinct same-day pairs exactly:
//! for a separable summand, `sum_{j != k} a_j b_k = (sum_j a_j)(sum_k b_k) -
//! sum_j a_j b_j`, so every normal-equation entry is a day-aggregated matrix
//! product minus a sparse diagonal correction.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::Grid2D;
use super::Bandwidth;
use crate::error::{Error, Result};
use crate::marketdata::SurfacePanel;

/// Relative pivot below which a local design is treated as singular.
const PIVOT_TOLERANCE: f64 = 1e-10;

pub fn quartic(q: f64) -> f64 {
    if q.abs() < 1.0 {
        let s = 1.0 - q * q;
        15.0 / 16.0 * s * s
    } else {
        0.0
    }
}

/// `k_h(x) = k(x / h) / h`.
pub fn scaled_kernel(x: f64, h: f64) -> f64 {
    quartic(x / h) / h
}

/// Product kernel `K_h(x) = k_{h1}(x1) k_{h2}(x2)`.
pub fn product_kernel(dx: f64, dy: f64, h: Bandwidth) -> f64 {
    scaled_kernel(dx, h.h1) * scaled_kernel(dy, h.h2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothResult {
    /// Row-major values: one per node for the mean, one per node pair
    /// (`n * nodes + m`) for the pair smoother.
    pub values: Vec<f64>,
    /// Indices whose local fit was infeasible and were filled from the
    /// nearest feasible index.
    pub flagged: Vec<usize>,
}

/// Kernel weights of one observation on the grid axes.
struct Support {
    day: usize,
    /// `(node index, k_h, x - node)` on the u axis.
    u: Vec<(usize, f64, f64)>,
    v: Vec<(usize, f64, f64)>,
}

fn axis_support(nodes: &[f64], x: f64, h: f64) -> Vec<(usize, f64, f64)> {
    let lo = nodes.partition_point(|n| *n <= x - h);
    nodes[lo..]
        .iter()
        .enumerate()
        .take_while(|(_, n)| **n < x + h)
        .filter_map(|(k, n)| {
            let w = scaled_kernel(x - n, h);
            (w > 0.0).then_some((lo + k, w, x - n))
        })
        .collect()
}

fn supports(panel: &SurfacePanel, grid: &Grid2D, h: Bandwidth) -> Vec<Support> {
    panel
        .days
        .iter()
        .enumerate()
        .flat_map(|(day, d)| {
            d.points.iter().map(move |p| Support {
                day,
                u: axis_support(&grid.u_nodes, p.kappa, h.h1),
                v: axis_support(&grid.v_nodes, p.tau, h.h2),
            })
        })
        .collect()
}

fn check_inputs(panel: &SurfacePanel, grid: &Grid2D, h: Bandwidth) -> Result<()> {
    h.validate()?;
    grid.validate()?;
    if panel.n_obs() == 0 {
        return Err(Error::InsufficientData("empty panel".into()));
    }
    Ok(())
}

/// Solve a symmetric positive definite system after unit-diagonal scaling;
/// `None` when a scaled pivot falls below tolerance.
fn solve_scaled<const N: usize>(a: &SMatrix<f64, N, N>, b: &SVector<f64, N>) -> Option<SVector<f64, N>> {
    let mut d = SVector::<f64, N>::zeros();
    for i in 0..N {
        if !(a[(i, i)] > 0.0) {
            return None;
        }
        d[i] = 1.0 / a[(i, i)].sqrt();
    }
    let scaled = SMatrix::<f64, N, N>::from_fn(|i, j| a[(i, j)] * d[i] * d[j]);
    let chol = scaled.cholesky()?;
    let l = chol.l_dirty();
    if (0..N).any(|i| l[(i, i)] * l[(i, i)] < PIVOT_TOLERANCE) {
        return None;
    }
    let rhs = b.component_mul(&d);
    Some(chol.solve(&rhs).component_mul(&d))
}

/// Local-linear estimate of the regression surface at every grid node,
/// pooling all days.
pub fn smooth_mean(panel: &SurfacePanel, grid: &Grid2D, h: Bandwidth) -> Result<SmoothResult> {
    check_inputs(panel, grid, h)?;
    let g2 = grid.v_nodes.len();
    let mut sums = vec![[0.0f64; 9]; grid.len()];
    let mut counts = vec![0usize; grid.len()];
    let ys = panel.days.iter().flat_map(|d| d.points.iter().map(|p| p.value));
    for (s, y) in supports(panel, grid, h).iter().zip(ys) {
        for &(i, wu, d1) in &s.u {
            for &(j, wv, d2) in &s.v {
                let w = wu * wv;
                let n = i * g2 + j;
                let acc = &mut sums[n];
                acc[0] += w;
                acc[1] += w * d1;
                acc[2] += w * d2;
                acc[3] += w * d1 * d1;
                acc[4] += w * d1 * d2;
                acc[5] += w * d2 * d2;
                acc[6] += w * y;
                acc[7] += w * y * d1;
                acc[8] += w * y * d2;
                counts[n] += 1;
            }
        }
    }
    let fits: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| {
            if c < 3 {
                return None;
            }
            let a = SMatrix::<f64, 3, 3>::new(s[0], s[1], s[2], s[1], s[3], s[4], s[2], s[4], s[5]);
            let b = SVector::<f64, 3>::new(s[6], s[7], s[8]);
            solve_scaled(&a, &b).map(|beta| beta[0])
        })
        .collect();
    let dims = [grid.u_nodes.len(), grid.v_nodes.len()];
    let coords = |k: usize, axis: usize| -> f64 {
        let (u, v) = grid.node(k);
        if axis == 0 { u } else { v }
    };
    fill_nearest(fits, &dims, |idx| idx[0] * dims[1] + idx[1], |k, axis| coords(k, axis))
}

/// A separable pair response `left_j * right_k`, one entry per observation in
/// panel order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTerm {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Local-linear estimate of the second moment `E[Y_j Y_k]` over distinct
/// same-day pairs at every pair of grid nodes, symmetrized.
pub fn smooth_second_moment(panel: &SurfacePanel, grid: &Grid2D, h: Bandwidth) -> Result<SmoothResult> {
    let y: Vec<f64> = panel.days.iter().flat_map(|d| d.points.iter().map(|p| p.value)).collect();
    let mut out = smooth_pair_surface(
        panel,
        grid,
        h,
        &[PairTerm {
            left: y.clone(),
            right: y,
        }],
    )?;
    symmetrize(&mut out.values, grid.len());
    Ok(out)
}

pub fn symmetrize(values: &mut [f64], n: usize) {
    for a in 0..n {
        for b in 0..a {
            let m = 0.5 * (values[a * n + b] + values[b * n + a]);
            values[a * n + b] = m;
            values[b * n + a] = m;
        }
    }
}

/// Base design moments `[1, d1, d2, d1^2, d1 d2, d2^2]` take ids 0..6; term
/// `r` owns ids `6 + 6r ..`: left response times `[1, d1, d2]`, then right.
fn moment_value(id: usize, w: f64, d1: f64, d2: f64, terms: &[PairTerm], obs: usize) -> f64 {
    match id {
        0 => w,
        1 => w * d1,
        2 => w * d2,
        3 => w * d1 * d1,
        4 => w * d1 * d2,
        5 => w * d2 * d2,
        _ => {
            let r = (id - 6) / 6;
            let k = (id - 6) % 6;
            let f = if k < 3 { terms[r].left[obs] } else { terms[r].right[obs] };
            w * f * [1.0, d1, d2][k % 3]
        }
    }
}

/// Moment id of the product of two regressor factors, each 0 (one), 1 or 2.
fn combine(a: usize, b: usize) -> usize {
    match (a.min(b), a.max(b)) {
        (0, x) => x,
        (1, 1) => 3,
        (1, 2) => 4,
        _ => 5,
    }
}

/// `(x-side factor, y-side factor)` of each of the five pair regressors.
const REGRESSORS: [(usize, usize); 5] = [(0, 0), (1, 0), (2, 0), (0, 1), (0, 2)];

/// Local-linear fit of an arbitrary separable pair response over distinct
/// same-day pairs. Output is not symmetrized.
pub fn smooth_pair_surface(
    panel: &SurfacePanel,
    grid: &Grid2D,
    h: Bandwidth,
    terms: &[PairTerm],
) -> Result<SmoothResult> {
    check_inputs(panel, grid, h)?;
    let n_obs = panel.n_obs();
    if terms.is_empty() || terms.iter().any(|t| t.left.len() != n_obs || t.right.len() != n_obs) {
        return Err(crate::error::invalid("pair terms must cover every observation"));
    }
    let g = grid.len();
    let g2 = grid.v_nodes.len();
    let t_days = panel.days.len();
    let n_ids = 6 + 6 * terms.len();
    let sup = supports(panel, grid, h);

    // Per observation: nodes in support with their kernel weight and offsets.
    let local: Vec<Vec<(usize, f64, f64, f64)>> = sup
        .iter()
        .map(|s| {
            s.u.iter()
                .flat_map(|&(i, wu, d1)| s.v.iter().map(move |&(j, wv, d2)| (i * g2 + j, wu * wv, d1, d2)))
                .collect()
        })
        .collect();

    let moments: Vec<DMatrix<f64>> = (0..n_ids)
        .into_par_iter()
        .map(|id| {
            let mut m = DMatrix::zeros(t_days, g);
            for (o, (s, nodes)) in sup.iter().zip(&local).enumerate() {
                for &(n, w, d1, d2) in nodes {
                    m[(s.day, n)] += moment_value(id, w, d1, d2, terms, o);
                }
            }
            m
        })
        .collect();

    let mut keys: Vec<(usize, usize)> = Vec::new();
    let mut need = |a: usize, b: usize| {
        let k = (a.max(b), a.min(b));
        if !keys.contains(&k) {
            keys.push(k);
        }
    };
    for &(xp, yp) in &REGRESSORS {
        for &(xq, yq) in &REGRESSORS {
            need(combine(xp, xq), combine(yp, yq));
        }
        for r in 0..terms.len() {
            need(6 + 6 * r + xp, 6 + 6 * r + 3 + yp);
        }
    }

    let products: BTreeMap<(usize, usize), DMatrix<f64>> = keys
        .par_iter()
        .map(|&(a, b)| {
            let mut p = moments[a].transpose() * &moments[b];
            for (o, nodes) in local.iter().enumerate() {
                for &(m, wm, d1m, d2m) in nodes {
                    let vb = moment_value(b, wm, d1m, d2m, terms, o);
                    if vb == 0.0 {
                        continue;
                    }
                    for &(n, wn, d1n, d2n) in nodes {
                        p[(n, m)] -= moment_value(a, wn, d1n, d2n, terms, o) * vb;
                    }
                }
            }
            ((a, b), p)
        })
        .collect();

    let get = |a: usize, b: usize, n: usize, m: usize| -> f64 {
        match products.get(&(a, b)) {
            Some(p) => p[(n, m)],
            None => products[&(b, a)][(m, n)],
        }
    };

    let fits: Vec<Option<f64>> = (0..g * g)
        .into_par_iter()
        .map(|idx| {
            let (n, m) = (idx / g, idx % g);
            let a = SMatrix::<f64, 5, 5>::from_fn(|p, q| {
                let (xp, yp) = REGRESSORS[p];
                let (xq, yq) = REGRESSORS[q];
                get(combine(xp, xq), combine(yp, yq), n, m)
            });
            let b = SVector::<f64, 5>::from_fn(|p, _| {
                let (xp, yp) = REGRESSORS[p];
                (0..terms.len()).map(|r| get(6 + 6 * r + xp, 6 + 6 * r + 3 + yp, n, m)).sum()
            });
            solve_scaled(&a, &b).map(|beta| beta[0])
        })
        .collect();

    let dims = [grid.u_nodes.len(), g2, grid.u_nodes.len(), g2];
    fill_nearest(
        fits,
        &dims,
        |idx| (idx[0] * g2 + idx[1]) * g + idx[2] * g2 + idx[3],
        |k, axis| {
            let (u1, v1) = grid.node(k / g);
            let (u2, v2) = grid.node(k % g);
            [u1, v1, u2, v2][axis]
        },
    )
}

/// Replace infeasible entries by the nearest feasible entry, searching
/// Chebyshev rings of growing radius in index space and breaking ties by
/// Euclidean distance in coordinates, then by index.
fn fill_nearest(
    fits: Vec<Option<f64>>,
    dims: &[usize],
    flat: impl Fn(&[usize]) -> usize,
    coord: impl Fn(usize, usize) -> f64,
) -> Result<SmoothResult> {
    let flagged: Vec<usize> = fits.iter().enumerate().filter(|(_, f)| f.is_none()).map(|(k, _)| k).collect();
    if flagged.len() == fits.len() {
        return Err(Error::InsufficientData("no grid node has enough local data".into()));
    }
    let unflat = |mut k: usize| -> Vec<usize> {
        let mut idx = vec![0; dims.len()];
        for a in (0..dims.len()).rev() {
            idx[a] = k % dims[a];
            k /= dims[a];
        }
        idx
    };
    let max_r = dims.iter().copied().max().unwrap_or(1);
    let mut values: Vec<f64> = fits.iter().map(|f| f.unwrap_or(f64::NAN)).collect();
    for &k in &flagged {
        let centre = unflat(k);
        let mut best: Option<(f64, usize)> = None;
        for r in 1..=max_r {
            let lo: Vec<usize> = centre.iter().map(|c| c.saturating_sub(r)).collect();
            let hi: Vec<usize> = centre.iter().zip(dims).map(|(c, d)| (c + r).min(d - 1)).collect();
            let mut idx = lo.clone();
            loop {
                let cheb = idx.iter().zip(&centre).map(|(a, b)| a.abs_diff(*b)).max().unwrap_or(0);
                if cheb == r {
                    let cand = flat(&idx);
                    if fits[cand].is_some() {
                        let dist: f64 = (0..dims.len()).map(|a| (coord(cand, a) - coord(k, a)).powi(2)).sum();
                        if best.map_or(true, |(bd, bk)| dist < bd || (dist == bd && cand < bk)) {
                            best = Some((dist, cand));
                        }
                    }
                }
                let mut a = dims.len();
                loop {
                    if a == 0 {
                        break;
                    }
                    a -= 1;
                    if idx[a] < hi[a] {
                        idx[a] += 1;
                        break;
                    }
                    idx[a] = lo[a];
                }
                if idx == lo {
                    break;
                }
            }
            if best.is_some() {
                break;
            }
        }
        if let Some((_, src)) = best {
            values[k] = fits[src].unwrap();
        }
    }
    Ok(SmoothResult { values, flagged })
}
