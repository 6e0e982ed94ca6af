use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Tensor grid on the unit square with trapezoid quadrature.
///
/// Surfaces on the grid are flat row-major arrays: node `(i, j)` sits at
/// `i * v_nodes.len() + j`, `i` indexing the moneyness axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub u_nodes: Vec<f64>,
    pub v_nodes: Vec<f64>,
    pub u_weights: Vec<f64>,
    pub v_weights: Vec<f64>,
}

fn axis(n: usize) -> (Vec<f64>, Vec<f64>) {
    let step = 1.0 / (n - 1) as f64;
    let nodes = (0..n).map(|i| i as f64 * step).collect();
    let weights = (0..n)
        .map(|i| if i == 0 || i == n - 1 { 0.5 * step } else { step })
        .collect();
    (nodes, weights)
}

impl Grid2D {
    pub fn new(g1: usize, g2: usize) -> Result<Self> {
        if g1 < 2 || g2 < 2 {
            return Err(invalid("grid needs at least two nodes per axis"));
        }
        let (u_nodes, u_weights) = axis(g1);
        let (v_nodes, v_weights) = axis(g2);
        Ok(Self {
            u_nodes,
            v_nodes,
            u_weights,
            v_weights,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (nodes, weights) in [(&self.u_nodes, &self.u_weights), (&self.v_nodes, &self.v_weights)] {
            if nodes.len() < 2 || nodes.len() != weights.len() {
                return Err(invalid("grid axis malformed"));
            }
            if nodes.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(invalid("grid nodes must increase strictly"));
            }
            if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(invalid("grid weights must be non-negative and sum to one"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.u_nodes.len() * self.v_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u_nodes.len(), self.v_nodes.len())
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.v_nodes.len() + j
    }

    pub fn node(&self, k: usize) -> (f64, f64) {
        let g2 = self.v_nodes.len();
        (self.u_nodes[k / g2], self.v_nodes[k % g2])
    }

    /// Quadrature weight of each node, row-major.
    pub fn weights(&self) -> Vec<f64> {
        self.u_weights
            .iter()
            .flat_map(|wu| self.v_weights.iter().map(move |wv| wu * wv))
            .collect()
    }

    /// Bilinear interpolation of a grid surface; coordinates are clamped to
    /// the grid and nodes are reproduced exactly.
    pub fn interpolate(&self, values: &[f64], u: f64, v: f64) -> f64 {
        let (i, s) = locate(&self.u_nodes, u);
        let (j, t) = locate(&self.v_nodes, v);
        let g2 = self.v_nodes.len();
        let f = |a: usize, b: usize| values[a * g2 + b];
        let lo = if s == 0.0 { f(i, j) } else { f(i, j) * (1.0 - s) + f(i + 1, j) * s };
        if t == 0.0 {
            return lo;
        }
        let hi = if s == 0.0 {
            f(i, j + 1)
        } else {
            f(i, j + 1) * (1.0 - s) + f(i + 1, j + 1) * s
        };
        lo * (1.0 - t) + hi * t
    }

    /// Integral of the product of two grid surfaces.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights().iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
    }
}

/// Cell index and fractional offset; offset is exactly zero at a node.
fn locate(nodes: &[f64], x: f64) -> (usize, f64) {
    let n = nodes.len();
    if x <= nodes[0] {
        return (0, 0.0);
    }
    if x >= nodes[n - 1] {
        return (n - 1, 0.0);
    }
    let i = nodes.partition_point(|v| *v <= x) - 1;
    let s = (x - nodes[i]) / (nodes[i + 1] - nodes[i]);
    (i, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_and_nodes() {
        let g = Grid2D::new(25, 11).unwrap();
        g.validate().unwrap();
        assert_eq!(g.len(), 275);
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert_eq!(g.node(g.index(3, 4)), (g.u_nodes[3], g.v_nodes[4]));
        assert!(Grid2D::new(1, 5).is_err());
    }

    #[test]
    fn interpolation_reproduces_nodes_and_planes() {
        let g = Grid2D::new(7, 5).unwrap();
        let plane: Vec<f64> = (0..g.len()).map(|k| {
            let (u, v) = g.node(k);
            1.0 + 2.0 * u - 3.0 * v + 0.5 * u * v
        }).collect();
        for k in 0..g.len() {
            let (u, v) = g.node(k);
            assert_eq!(g.interpolate(&plane, u, v), plane[k]);
        }
        for (u, v) in [(0.13, 0.77), (0.5, 0.5), (0.99, 0.01)] {
            let exact = 1.0 + 2.0 * u - 3.0 * v + 0.5 * u * v;
            assert!((g.interpolate(&plane, u, v) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn trapezoid_integrates_bilinear_exactly() {
        let g = Grid2D::new(9, 9).unwrap();
        let one = vec![1.0; g.len()];
        let u: Vec<f64> = (0..g.len()).map(|k| g.node(k).0).collect();
        assert!((g.inner(&one, &u) - 0.5).abs() < 1e-14);
    }
}
