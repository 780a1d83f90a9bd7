//! Real spherical harmonics and discrete angular Laplacians.

use std::f64::consts::PI;

use super::quad::fornberg;
use super::sphere::SphereGrid;

/// Orthonormal associated Legendre values P̄_l^m(x), indexed `[l][m]`, m ≤ l ≤ l_max.
pub fn assoc_legendre(l_max: usize, x: f64) -> Vec<Vec<f64>> {
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut p = vec![vec![0.0; l_max + 1]; l_max + 1];
    p[0][0] = (1.0 / (4.0 * PI)).sqrt();
    for m in 1..=l_max {
        let mf = m as f64;
        p[m][m] = ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s * p[m - 1][m - 1];
    }
    for m in 0..l_max {
        p[m + 1][m] = (2.0 * m as f64 + 3.0).sqrt() * x * p[m][m];
    }
    for m in 0..=l_max {
        for l in (m + 2)..=l_max {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            p[l][m] = a * (x * p[l - 1][m] - b * p[l - 2][m]);
        }
    }
    p
}

/// (l, m) pairs of the real harmonics used on a grid, m in -l..=l.
pub fn harmonic_modes(l_max: usize, m_max: usize) -> Vec<(usize, i64)> {
    let mut out = Vec::new();
    for l in 0..=l_max {
        let mm = l.min(m_max) as i64;
        for m in -mm..=mm {
            out.push((l, m));
        }
    }
    out
}

/// Real orthonormal spherical harmonics at (θ, φ) for the given modes.
pub fn real_harmonics(modes: &[(usize, i64)], l_max: usize, theta: f64, phi: f64) -> Vec<f64> {
    let p = assoc_legendre(l_max, theta.cos());
    modes
        .iter()
        .map(|&(l, m)| {
            let ma = m.unsigned_abs() as usize;
            match m.cmp(&0) {
                std::cmp::Ordering::Equal => p[l][0],
                std::cmp::Ordering::Greater => 2f64.sqrt() * p[l][ma] * (ma as f64 * phi).cos(),
                std::cmp::Ordering::Less => 2f64.sqrt() * p[l][ma] * (ma as f64 * phi).sin(),
            }
        })
        .collect()
}

/// Dense angular Laplace–Beltrami operator on a full sphere grid by
/// harmonic projection (band limit set by the grid).
pub fn spectral_laplacian(grid: &SphereGrid) -> Vec<f64> {
    let n = grid.len();
    let l_max = grid.n_polar().saturating_sub(1);
    let m_max = (grid.n_azimuth.saturating_sub(1)) / 2;
    let modes = harmonic_modes(l_max, m_max);
    let mut y = Vec::with_capacity(n);
    for j in 0..grid.n_polar() {
        for k in 0..grid.n_azimuth {
            y.push(real_harmonics(&modes, l_max, grid.theta(j), grid.phi(k)));
        }
    }
    let w = grid.weights();
    let mut op = vec![0.0; n * n];
    for (mi, &(l, _)) in modes.iter().enumerate() {
        let ev = -((l * (l + 1)) as f64);
        if ev == 0.0 {
            continue;
        }
        for a in 0..n {
            let ya = ev * y[a][mi];
            let row = &mut op[a * n..(a + 1) * n];
            for b in 0..n {
                row[b] += ya * y[b][mi] * w[b];
            }
        }
    }
    op
}

/// Axisymmetric Laplace–Beltrami operator (1-μ²)f'' - 2μ f' on arbitrary μ nodes
/// by five-point finite differences. Rows are stored densely.
pub fn axial_laplacian(mu: &[f64]) -> Vec<f64> {
    let n = mu.len();
    let mut op = vec![0.0; n * n];
    if n < 3 {
        return op;
    }
    let width = 5.min(n);
    for j in 0..n {
        let start = j.saturating_sub(width / 2).min(n - width);
        let nodes = &mu[start..start + width];
        let c = fornberg(mu[j], nodes, 2);
        for k in 0..width {
            op[j * n + start + k] = (1.0 - mu[j] * mu[j]) * c[2][k] - 2.0 * mu[j] * c[1][k];
        }
    }
    op
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonics_are_orthonormal_on_the_grid() {
        let g = SphereGrid::new(6, 12).unwrap();
        let modes = harmonic_modes(4, 4);
        let ys: Vec<Vec<f64>> = (0..g.n_polar())
            .flat_map(|j| (0..g.n_azimuth).map(move |k| (j, k)))
            .map(|(j, k)| real_harmonics(&modes, 4, g.theta(j), g.phi(k)))
            .collect();
        for a in 0..modes.len() {
            for b in 0..modes.len() {
                let s: f64 = ys.iter().zip(g.weights()).map(|(y, w)| y[a] * y[b] * w).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-12, "{:?} {:?} {s}", modes[a], modes[b]);
            }
        }
    }

    #[test]
    fn spectral_laplacian_eigenvalues() {
        let g = SphereGrid::new(8, 16).unwrap();
        let op = spectral_laplacian(&g);
        let n = g.len();
        // x1 x2 is an l = 2 harmonic
        let f: Vec<f64> = g.nodes().iter().map(|p| p[0] * p[1]).collect();
        for a in 0..n {
            let lf: f64 = (0..n).map(|b| op[a * n + b] * f[b]).sum();
            assert!((lf + 6.0 * f[a]).abs() < 1e-11);
        }
    }

    #[test]
    fn axial_laplacian_on_p2() {
        let g = SphereGrid::new(16, 1).unwrap();
        let op = axial_laplacian(&g.mu);
        let n = g.mu.len();
        let f: Vec<f64> = g.mu.iter().map(|m| 1.5 * m * m - 0.5).collect();
        for a in 0..n {
            let lf: f64 = (0..n).map(|b| op[a * n + b] * f[b]).sum();
            assert!((lf + 6.0 * f[a]).abs() < 1e-9);
        }
    }
}
