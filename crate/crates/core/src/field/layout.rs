use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::quad::{cubic_weights, lagrange4};
use super::sphere::SphereGrid;
use super::Point;
use crate::error::{invalid, Result};

/// Which angular dependence a field keeps around its apex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    /// depends on distance from the apex only
    Spherical,
    /// invariant under rotation about the frame's third axis
    Axial,
    General,
}

/// Orthonormal frame centred at the apex; the third axis is the polar axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ApexFrame {
    pub apex: Point,
    pub axes: Matrix3<f64>,
}

impl ApexFrame {
    pub fn new(apex: Point, axis: Point) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(invalid("frame axis must be a nonzero vector"));
        }
        let e3 = axis / n;
        let helper = if e3[0].abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = (helper - e3 * helper.dot(&e3)).normalize();
        let e2 = e3.cross(&e1);
        Ok(ApexFrame { apex, axes: Matrix3::from_columns(&[e1, e2, e3]) })
    }

    pub fn from_axes(apex: Point, axes: Matrix3<f64>) -> Result<Self> {
        let err = (axes.transpose() * axes - Matrix3::identity()).norm();
        if err > 1e-10 || axes.determinant() < 0.0 {
            return Err(invalid("frame axes must be a rotation"));
        }
        Ok(ApexFrame { apex, axes })
    }

    /// Polar axis pointing from the apex toward the origin (z if the apex is the origin).
    pub fn toward_origin(apex: Point) -> Self {
        let axis = if apex.norm() > 0.0 { -apex } else { Vector3::z() };
        Self::new(apex, axis).expect("nonzero axis")
    }

    #[inline]
    pub fn to_local(&self, x: &Point) -> Point {
        self.axes.tr_mul(&(x - self.apex))
    }

    #[inline]
    pub fn to_global(&self, y: &Point) -> Point {
        self.apex + self.axes * y
    }
}

/// Interpolation stencil over spatial nodes, at most 4 radial × 16 angular entries.
#[derive(Clone, Copy)]
pub struct Stencil {
    pub len: usize,
    pub idx: [usize; 64],
    pub w: [f64; 64],
}

impl Stencil {
    fn new() -> Self {
        Stencil { len: 0, idx: [0; 64], w: [0.0; 64] }
    }

    #[inline]
    fn push(&mut self, i: usize, w: f64) {
        self.idx[self.len] = i;
        self.w[self.len] = w;
        self.len += 1;
    }
}

/// Radial shells around the apex times a set of directions.
#[derive(Clone, Debug)]
pub struct SpatialLayout {
    pub frame: ApexFrame,
    pub symmetry: Symmetry,
    pub radius: f64,
    pub shells: usize,
    pub sphere: SphereGrid,
    dirs: Vec<Point>,
    dir_weights: Vec<f64>,
    mu_asc: Vec<f64>,
    theta_ext: Vec<f64>,
    theta_map: Vec<(usize, bool)>,
}

impl SpatialLayout {
    /// `shells` intervals on [0, radius]; node i sits at ρ = i·radius/shells.
    pub fn new(frame: ApexFrame, symmetry: Symmetry, radius: f64, shells: usize, sphere: SphereGrid) -> Result<Self> {
        if shells < 3 || !(radius > 0.0) {
            return Err(invalid("spatial layout needs at least 3 shells and a positive radius"));
        }
        let (dirs, dir_weights) = match symmetry {
            Symmetry::Spherical => (vec![Vector3::z()], vec![4.0 * PI]),
            Symmetry::Axial => {
                if sphere.n_polar() < 4 {
                    return Err(invalid("axial layout needs at least 4 polar nodes"));
                }
                let d = sphere.mu.iter().map(|m| Vector3::new((1.0 - m * m).max(0.0).sqrt(), 0.0, *m)).collect();
                let w = sphere.mu_weights.iter().map(|w| 2.0 * PI * w).collect();
                (d, w)
            }
            Symmetry::General => {
                if sphere.n_polar() < 4 || sphere.n_azimuth < 4 || sphere.n_azimuth % 2 == 1 {
                    return Err(invalid("general layout needs ≥ 4 polar nodes and an even azimuth count ≥ 4"));
                }
                (sphere.nodes().to_vec(), sphere.weights().to_vec())
            }
        };
        let n = sphere.n_polar();
        let mu_asc: Vec<f64> = sphere.mu.iter().rev().copied().collect();
        let mut theta_ext = Vec::new();
        let mut theta_map = Vec::new();
        if symmetry == Symmetry::General {
            let th: Vec<f64> = (0..n).map(|j| sphere.theta(j)).collect();
            theta_ext.extend([-th[1], -th[0]]);
            theta_map.extend([(1, true), (0, true)]);
            for (j, t) in th.iter().enumerate() {
                theta_ext.push(*t);
                theta_map.push((j, false));
            }
            theta_ext.extend([2.0 * PI - th[n - 1], 2.0 * PI - th[n - 2]]);
            theta_map.extend([(n - 1, true), (n - 2, true)]);
        }
        Ok(SpatialLayout { frame, symmetry, radius, shells, sphere, dirs, dir_weights, mu_asc, theta_ext, theta_map })
    }

    pub fn n_dirs(&self) -> usize {
        self.dirs.len()
    }

    pub fn n_nodes(&self) -> usize {
        (self.shells + 1) * self.dirs.len()
    }

    pub fn dr(&self) -> f64 {
        self.radius / self.shells as f64
    }

    pub fn rho(&self, i: usize) -> f64 {
        self.radius * i as f64 / self.shells as f64
    }

    /// Local unit vector of direction j.
    pub fn dir(&self, j: usize) -> &Point {
        &self.dirs[j]
    }

    /// Solid-angle weight of direction j (sums to 4π).
    pub fn dir_weight(&self, j: usize) -> f64 {
        self.dir_weights[j]
    }

    pub fn node_local(&self, i: usize, j: usize) -> Point {
        self.dirs[j] * self.rho(i)
    }

    pub fn node_global(&self, i: usize, j: usize) -> Point {
        self.frame.to_global(&self.node_local(i, j))
    }

    /// Angular interpolation weights for a local unit direction.
    pub fn angular_stencil(&self, d: &Point, out: &mut [(usize, f64); 16]) -> usize {
        match self.symmetry {
            Symmetry::Spherical => {
                out[0] = (0, 1.0);
                1
            }
            Symmetry::Axial => {
                let mu = d[2].clamp(-1.0, 1.0);
                let n = self.mu_asc.len();
                let k = self.mu_asc.partition_point(|&m| m <= mu);
                let base = k.saturating_sub(2).min(n - 4);
                let nodes = [self.mu_asc[base], self.mu_asc[base + 1], self.mu_asc[base + 2], self.mu_asc[base + 3]];
                let w = lagrange4(mu, nodes);
                for (s, wk) in w.iter().enumerate() {
                    out[s] = (n - 1 - (base + s), *wk);
                }
                4
            }
            Symmetry::General => {
                let theta = d[2].clamp(-1.0, 1.0).acos();
                let mut phi = d[1].atan2(d[0]);
                if phi < 0.0 {
                    phi += 2.0 * PI;
                }
                let i = self.theta_ext.partition_point(|&t| t <= theta).clamp(2, self.theta_ext.len() - 2) - 1;
                let tn = [self.theta_ext[i - 1], self.theta_ext[i], self.theta_ext[i + 1], self.theta_ext[i + 2]];
                let wt = lagrange4(theta, tn);
                let nphi = self.sphere.n_azimuth;
                let dphi = 2.0 * PI / nphi as f64;
                let x = phi / dphi;
                let k = (x.floor() as usize).min(nphi - 1);
                let wp = cubic_weights(x - k as f64);
                let mut len = 0;
                for a in 0..4 {
                    let (j, flip) = self.theta_map[i - 1 + a];
                    let shift = if flip { nphi / 2 } else { 0 };
                    for (b, wb) in wp.iter().enumerate() {
                        let kk = (k + nphi + b + shift - 1) % nphi;
                        out[len] = (j * nphi + kk, wt[a] * wb);
                        len += 1;
                    }
                }
                len
            }
        }
    }

    /// Interpolation stencil at a local point (cubic in ρ and angle).
    pub fn stencil(&self, y: &Point) -> Stencil {
        let mut st = Stencil::new();
        let rho = y.norm().min(self.radius);
        let x = rho / self.dr();
        let i0 = (x.floor() as i64).min(self.shells as i64 - 1);
        let base = (i0 - 1).min(self.shells as i64 - 3);
        let wr = cubic_weights(x - (base + 1) as f64);
        let d = if rho > 0.0 { y / y.norm() } else { Vector3::z() };
        let mut ang = [(0usize, 0.0f64); 16];
        let mut anti = [(0usize, 0.0f64); 16];
        let na = self.angular_stencil(&d, &mut ang);
        let mut nb = 0;
        let nd = self.n_dirs();
        for (k, &w) in wr.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let p = base + k as i64;
            if p == 0 {
                st.push(0, w);
            } else if p > 0 {
                for &(j, wa) in &ang[..na] {
                    st.push(p as usize * nd + j, w * wa);
                }
            } else {
                if nb == 0 {
                    nb = self.angular_stencil(&(-d), &mut anti);
                }
                for &(j, wa) in &anti[..nb] {
                    st.push((-p) as usize * nd + j, w * wa);
                }
            }
        }
        st
    }
}

/// Uniform retarded-time axis σ = t - |x - a| on [0, span].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeAxis {
    pub steps: usize,
    pub span: f64,
}

impl TimeAxis {
    pub fn dt(&self) -> f64 {
        self.span / self.steps as f64
    }

    pub fn sigma(&self, l: usize) -> f64 {
        self.span * l as f64 / self.steps as f64
    }

    /// Cubic stencil (first node, weights) for σ in [0, span].
    #[inline]
    pub fn stencil(&self, sigma: f64) -> (usize, [f64; 4]) {
        let x = (sigma / self.dt()).clamp(0.0, self.steps as f64);
        let l0 = (x.floor() as usize).min(self.steps - 1);
        let base = l0.saturating_sub(1).min(self.steps - 3);
        (base, cubic_weights(x - (base + 1) as f64))
    }
}

/// Space-time grid in retarded coordinates with its determinacy horizon.
///
/// Nodes with σ + 2ρ ≤ horizon depend only on data inside the grid.
#[derive(Clone, Debug)]
pub struct GridLayout {
    pub spatial: SpatialLayout,
    pub time: TimeAxis,
    pub horizon: f64,
}

impl GridLayout {
    pub fn new(spatial: SpatialLayout, time: TimeAxis, horizon: f64) -> Result<Self> {
        if time.steps < 3 || !(time.span > 0.0) {
            return Err(invalid("time axis needs at least 3 steps"));
        }
        if !(horizon > 0.0) || horizon > time.span + 1e-12 || horizon > 2.0 * spatial.radius + 1e-12 {
            return Err(invalid("horizon must be positive and within the grid"));
        }
        Ok(GridLayout { spatial, time, horizon })
    }

    pub fn len(&self) -> usize {
        self.spatial.n_nodes() * (self.time.steps + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, l: usize) -> usize {
        (i * self.spatial.n_dirs() + j) * (self.time.steps + 1) + l
    }

    pub fn determined(&self, rho: f64, sigma: f64) -> bool {
        sigma >= 0.0 && sigma + 2.0 * rho <= self.horizon + 1e-12
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(sym: Symmetry) -> SpatialLayout {
        let frame = ApexFrame::toward_origin(Vector3::new(0.0, 0.6, 0.8));
        SpatialLayout::new(frame, sym, 1.0, 12, SphereGrid::new(10, 12).unwrap()).unwrap()
    }

    fn interp(l: &SpatialLayout, vals: &[f64], y: &Point) -> f64 {
        let st = l.stencil(y);
        (0..st.len).map(|k| st.w[k] * vals[st.idx[k]]).sum()
    }

    #[test]
    fn frame_round_trip() {
        let f = ApexFrame::toward_origin(Vector3::new(0.0, 0.6, 0.8));
        let x = Vector3::new(0.1, -0.2, 0.3);
        assert!((f.to_global(&f.to_local(&x)) - x).norm() < 1e-15);
        assert!((f.to_local(&Vector3::zeros()) - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn interpolation_reproduces_low_degree_polynomials() {
        for sym in [Symmetry::Axial, Symmetry::General] {
            let l = layout(sym);
            let f = |y: &Point| match sym {
                Symmetry::Axial => 0.3 + y[2] - 0.5 * y[2] * y[2] + 0.2 * (y[0] * y[0] + y[1] * y[1]),
                _ => 0.3 + y[0] - 0.4 * y[1] * y[2] + y[2] * y[2],
            };
            let vals: Vec<f64> =
                (0..=l.shells).flat_map(|i| (0..l.n_dirs()).map(move |j| (i, j))).map(|(i, j)| f(&l.node_local(i, j))).collect();
            for k in 0..40 {
                let t = k as f64 * 0.37;
                let mut y = Vector3::new(t.sin(), (1.3 * t).cos(), (0.7 * t).sin()).normalize() * (0.02 + 0.95 * (k as f64 / 40.0));
                if sym == Symmetry::Axial {
                    y[0] = (y[0] * y[0] + y[1] * y[1]).sqrt();
                    y[1] = 0.0;
                }
                let err = (interp(&l, &vals, &y) - f(&y)).abs();
                assert!(err < 2e-3, "{sym:?} {y:?} {err}");
            }
        }
    }

    #[test]
    fn stencil_at_node_is_exact() {
        let l = layout(Symmetry::General);
        let st = l.stencil(&l.node_local(5, 17));
        let hit: f64 = (0..st.len).filter(|&k| st.idx[k] == 5 * l.n_dirs() + 17).map(|k| st.w[k]).sum();
        assert!((hit - 1.0).abs() < 1e-12);
    }
}
