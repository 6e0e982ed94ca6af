use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::grid::Grid2D;
use crate::error::{invalid, Result};

const SYMMETRY_TOLERANCE: f64 = 1e-9;

fn square(values: &[f64]) -> Result<(usize, DMatrix<f64>)> {
    let n = (values.len() as f64).sqrt().round() as usize;
    if n * n != values.len() || n == 0 {
        return Err(invalid("surface on node pairs must be square"));
    }
    Ok((n, DMatrix::from_row_slice(n, n, values)))
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                return Err(invalid("covariance surface is not symmetric"));
            }
        }
    }
    Ok(())
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// `psi(u, v) = phi(u, v) - mu(u) mu(v)`, projected onto the positive
/// semidefinite cone by clipping negative eigenvalues.
pub fn covariance_surface(phi: &[f64], mu: &[f64]) -> Result<Vec<f64>> {
    let (n, phi) = square(phi)?;
    if mu.len() != n {
        return Err(invalid("mean surface and second moment differ in size"));
    }
    let mut psi = DMatrix::from_fn(n, n, |i, j| phi[(i, j)] - mu[i] * mu[j]);
    psi = (&psi + psi.transpose()) * 0.5;
    let eig = psi.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|l| *l >= 0.0) {
        return Ok(row_major(&psi));
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let m = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok(row_major(&((&m + m.transpose()) * 0.5)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fpca {
    /// Retained eigenfunctions on the grid, orthonormal under quadrature.
    pub basis: Vec<Vec<f64>>,
    /// Retained eigenvalues, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Every eigenvalue of the operator, nonincreasing, floored at zero.
    pub spectrum: Vec<f64>,
    pub explained_variance: f64,
}

impl Fpca {
    pub fn l(&self) -> usize {
        self.basis.len()
    }
}

/// Number of components: the first `L` whose cumulative share reaches the
/// threshold, capped at `l_max`.
pub fn choose_l(spectrum: &[f64], l_max: usize, threshold: f64) -> usize {
    let total: f64 = spectrum.iter().sum();
    if !(total > 0.0) {
        return 0;
    }
    let mut cum = 0.0;
    let mut l = spectrum.len();
    for (k, lam) in spectrum.iter().enumerate() {
        cum += lam;
        if cum >= threshold * total * (1.0 - 1e-12) {
            l = k + 1;
            break;
        }
    }
    l.min(l_max)
}

/// Eigen-decomposition of the covariance operator under grid quadrature.
pub fn fpca(psi: &[f64], grid: &Grid2D, l_max: usize, variance_threshold: f64) -> Result<Fpca> {
    let (n, psi) = square(psi)?;
    if n != grid.len() {
        return Err(invalid("covariance surface does not match grid"));
    }
    if !(0.0..=1.0).contains(&variance_threshold) {
        return Err(invalid("variance threshold must lie in [0, 1]"));
    }
    check_symmetric(&psi)?;
    let sw: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let mut a = DMatrix::from_fn(n, n, |i, j| sw[i] * psi[(i, j)] * sw[j]);
    a = (&a + a.transpose()) * 0.5;
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let spectrum: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let l = choose_l(&spectrum, l_max, variance_threshold);
    let basis: Vec<Vec<f64>> = order[..l]
        .iter()
        .map(|&k| {
            let mut f: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, k)] / sw[i]).collect();
            let peak = f
                .iter()
                .copied()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map(|(_, v)| v)
                .unwrap_or(0.0);
            if peak < 0.0 {
                f.iter_mut().for_each(|x| *x = -*x);
            }
            f
        })
        .collect();
    let total: f64 = spectrum.iter().sum();
    let kept: f64 = spectrum[..l].iter().sum();
    Ok(Fpca {
        basis,
        eigenvalues: spectrum[..l].to_vec(),
        explained_variance: if total > 0.0 { kept / total } else { 1.0 },
        spectrum,
    })
}

/// `sum_l lambda_l gamma_l(u) gamma_l(v)` on node pairs, row-major.
pub fn reconstruct(basis: &[Vec<f64>], eigenvalues: &[f64]) -> Vec<f64> {
    let n = basis.first().map_or(0, |b| b.len());
    let mut out = vec![0.0; n * n];
    for (f, lam) in basis.iter().zip(eigenvalues) {
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] += lam * f[i] * f[j];
            }
        }
    }
    out
}

/// Gram matrix of grid surfaces under quadrature.
pub fn gram(basis: &[Vec<f64>], grid: &Grid2D) -> DMatrix<f64> {
    let l = basis.len();
    DMatrix::from_fn(l, l, |a, b| grid.inner(&basis[a], &basis[b]))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Orthonormal shifted Legendre products on the unit square.
    fn legendre(grid: &Grid2D) -> Vec<Vec<f64>> {
        let fs: [fn(f64, f64) -> f64; 3] = [
            |_, _| 1.0,
            |u, _| 3f64.sqrt() * (2.0 * u - 1.0),
            |_, v| 3f64.sqrt() * (2.0 * v - 1.0),
        ];
        fs.iter()
            .map(|f| (0..grid.len()).map(|k| {
                let (u, v) = grid.node(k);
                f(u, v)
            }).collect())
            .collect()
    }

    /// Gram-Schmidt under the grid inner product, so the forward construction
    /// is exactly orthonormal in the discrete sense.
    fn orthonormalize(grid: &Grid2D, mut fs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        for a in 0..fs.len() {
            for b in 0..a {
                let c = grid.inner(&fs[a], &fs[b]);
                let prev = fs[b].clone();
                fs[a].iter_mut().zip(&prev).for_each(|(x, y)| *x -= c * y);
            }
            let norm = grid.inner(&fs[a], &fs[a]).sqrt();
            fs[a].iter_mut().for_each(|x| *x /= norm);
        }
        fs
    }

    #[test]
    fn recovers_forward_constructed_operator() {
        let grid = Grid2D::new(9, 9).unwrap();
        let gammas = orthonormalize(&grid, legendre(&grid));
        let lams = [4.0, 2.0, 1.0];
        let psi = reconstruct(&gammas, &lams);
        let out = fpca(&psi, &grid, 10, 0.95).unwrap();
        assert_eq!(out.l(), 3);
        for (l, lam) in lams.iter().enumerate() {
            assert!((out.eigenvalues[l] - lam).abs() < 1e-8);
            let sign = if grid.inner(&out.basis[l], &gammas[l]) < 0.0 { -1.0 } else { 1.0 };
            let sup = out.basis[l].iter().zip(&gammas[l]).map(|(a, b)| (a - sign * b).abs()).fold(0.0, f64::max);
            assert!(sup < 1e-6);
        }
        let g = gram(&out.basis, &grid);
        assert!((g - DMatrix::identity(3, 3)).amax() < 1e-8);
        assert!((out.explained_variance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn component_count_rule() {
        assert_eq!(choose_l(&[4.0, 2.0, 1.0], 10, 0.95), 3);
        assert_eq!(choose_l(&[4.0, 2.0, 1.0], 10, 0.8), 2);
        assert_eq!(choose_l(&[4.0, 2.0, 1.0], 1, 0.95), 1);
        assert_eq!(choose_l(&[0.0, 0.0], 3, 0.95), 0);
    }

    #[test]
    fn zero_operator() {
        let grid = Grid2D::new(5, 5).unwrap();
        let out = fpca(&vec![0.0; grid.len() * grid.len()], &grid, 3, 0.95).unwrap();
        assert_eq!(out.l(), 0);
        assert!(out.spectrum.iter().all(|l| *l == 0.0));
    }

    #[test]
    fn sign_convention() {
        let grid = Grid2D::new(5, 5).unwrap();
        let gammas = orthonormalize(&grid, legendre(&grid));
        let out = fpca(&reconstruct(&gammas, &[3.0, 2.0, 1.0]), &grid, 3, 1.0).unwrap();
        for b in &out.basis {
            let peak = b.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(peak > 0.0);
        }
    }

    #[test]
    fn rejects_asymmetric_input() {
        let grid = Grid2D::new(3, 3).unwrap();
        let mut psi = vec![0.0; 81];
        psi[1] = 1.0;
        assert!(fpca(&psi, &grid, 3, 0.9).is_err());
    }

    #[test]
    fn covariance_removes_mean_and_projects() {
        let mu = [0.3, -0.2, 0.5];
        let outer: Vec<f64> = (0..9).map(|k| mu[k / 3] * mu[k % 3]).collect();
        let psi = covariance_surface(&outer, &mu).unwrap();
        assert!(psi.iter().all(|v| v.abs() < 1e-15));

        let gamma = [0.6, 0.0, 0.8];
        let rank1: Vec<f64> = (0..9).map(|k| 2.5 * gamma[k / 3] * gamma[k % 3]).collect();
        let phi: Vec<f64> = rank1.iter().zip(&outer).map(|(a, b)| a + b).collect();
        let psi = covariance_surface(&phi, &mu).unwrap();
        assert!(psi.iter().zip(&rank1).all(|(a, b)| (a - b).abs() < 1e-10));

        let indefinite = [1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, -1.0];
        let psi = covariance_surface(&indefinite, &[0.0; 3]).unwrap();
        let m = DMatrix::from_row_slice(3, 3, &psi);
        assert!(m.clone().symmetric_eigen().eigenvalues.iter().all(|l| *l >= -1e-10));
        assert!((m.clone() - m.transpose()).amax() == 0.0);
    }
}
