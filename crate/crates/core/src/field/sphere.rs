use nalgebra::Vector3;

use super::quad::gauss_legendre;
use crate::error::{invalid, Result};

/// Product quadrature on the unit sphere: Gauss–Legendre in cos θ times a
/// uniform azimuth. The polar axis may be split into several Gauss blocks.
#[derive(Clone, Debug)]
pub struct SphereGrid {
    /// cos θ nodes, descending (θ ascending).
    pub mu: Vec<f64>,
    /// Gauss weights in cos θ.
    pub mu_weights: Vec<f64>,
    pub n_azimuth: usize,
    nodes: Vec<Vector3<f64>>,
    weights: Vec<f64>,
}

impl SphereGrid {
    pub fn new(n_polar: usize, n_azimuth: usize) -> Result<Self> {
        Self::composite(&[(-1.0, 1.0, n_polar)], n_azimuth)
    }

    /// Gauss blocks `(mu_lo, mu_hi, count)` tiling [-1, 1].
    pub fn composite(blocks: &[(f64, f64, usize)], n_azimuth: usize) -> Result<Self> {
        if n_azimuth == 0 || blocks.is_empty() {
            return Err(invalid("sphere grid needs at least one node per axis"));
        }
        let mut mu = Vec::new();
        let mut mw = Vec::new();
        let mut covered = 0.0;
        for &(lo, hi, n) in blocks {
            if n == 0 || !(hi > lo) || lo < -1.0 || hi > 1.0 {
                return Err(invalid(format!("bad polar block ({lo}, {hi}, {n})")));
            }
            covered += hi - lo;
            let (x, w) = gauss_legendre(n);
            for (xi, wi) in x.iter().zip(&w) {
                mu.push(lo + 0.5 * (hi - lo) * (xi + 1.0));
                mw.push(0.5 * (hi - lo) * wi);
            }
        }
        if (covered - 2.0).abs() > 1e-12 {
            return Err(invalid("polar blocks must tile [-1, 1]"));
        }
        let mut idx: Vec<usize> = (0..mu.len()).collect();
        idx.sort_by(|&a, &b| mu[b].total_cmp(&mu[a]));
        let mu: Vec<f64> = idx.iter().map(|&i| mu[i]).collect();
        let mu_weights: Vec<f64> = idx.iter().map(|&i| mw[i]).collect();
        if mu.windows(2).any(|p| p[0] <= p[1]) {
            return Err(invalid("polar blocks overlap"));
        }

        let dphi = 2.0 * std::f64::consts::PI / n_azimuth as f64;
        let mut nodes = Vec::with_capacity(mu.len() * n_azimuth);
        let mut weights = Vec::with_capacity(mu.len() * n_azimuth);
        for (m, w) in mu.iter().zip(&mu_weights) {
            let s = (1.0 - m * m).max(0.0).sqrt();
            for k in 0..n_azimuth {
                let phi = dphi * k as f64;
                nodes.push(Vector3::new(s * phi.cos(), s * phi.sin(), *m));
                weights.push(w * dphi);
            }
        }
        Ok(SphereGrid { mu, mu_weights, n_azimuth, nodes, weights })
    }

    pub fn n_polar(&self) -> usize {
        self.mu.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Vector3<f64>] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn theta(&self, j: usize) -> f64 {
        self.mu[j].clamp(-1.0, 1.0).acos()
    }

    pub fn phi(&self, k: usize) -> f64 {
        2.0 * std::f64::consts::PI * k as f64 / self.n_azimuth as f64
    }

    /// Node index of polar `j`, azimuth `k`.
    pub fn index(&self, j: usize, k: usize) -> usize {
        j * self.n_azimuth + k
    }
}

/// Integral of `f` over the sphere of given center and radius.
pub fn sphere_integral<F>(f: F, center: &Vector3<f64>, radius: f64, grid: &SphereGrid) -> f64
where
    F: Fn(&Vector3<f64>) -> f64,
{
    let mut s = 0.0;
    for (n, w) in grid.nodes().iter().zip(grid.weights()) {
        s += w * f(&(center + radius * n));
    }
    s * radius * radius
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn weights_sum_to_area_and_nodes_are_unit() {
        let g = SphereGrid::new(12, 24).unwrap();
        let s: f64 = g.weights().iter().sum();
        assert!((s - 4.0 * PI).abs() < 1e-12 * 4.0 * PI);
        assert!(g.nodes().iter().all(|n| (n.norm() - 1.0).abs() < 1e-14));
        assert!(g.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn composite_blocks_tile_the_polar_axis() {
        let g = SphereGrid::composite(&[(0.5, 1.0, 6), (-1.0, 0.5, 4)], 1).unwrap();
        let s: f64 = g.weights().iter().sum();
        assert!((s - 4.0 * PI).abs() < 1e-12);
        assert!(SphereGrid::composite(&[(0.0, 1.0, 3)], 4).is_err());
    }

    #[test]
    fn area_and_odd_moments() {
        let g = SphereGrid::new(8, 16).unwrap();
        let c = Vector3::new(0.3, -0.2, 0.1);
        let area = sphere_integral(|_| 1.0, &c, 0.7, &g);
        assert!((area - 4.0 * PI * 0.49).abs() < 1e-10);
        let odd = sphere_integral(|x| x[0] - c[0], &c, 0.7, &g);
        assert!(odd.abs() < 1e-10);
    }
}
