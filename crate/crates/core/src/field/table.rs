use std::sync::Arc;

use super::layout::{GridLayout, SpatialLayout};
use super::Point;

/// Spatial scalar field sampled on a `SpatialLayout`.
#[derive(Clone, Debug)]
pub struct SpatialTable {
    pub layout: Arc<SpatialLayout>,
    pub values: Vec<f64>,
}

impl SpatialTable {
    pub fn zeros(layout: Arc<SpatialLayout>) -> Self {
        let n = layout.n_nodes();
        SpatialTable { layout, values: vec![0.0; n] }
    }

    pub fn from_fn<F: Fn(usize, usize) -> f64>(layout: Arc<SpatialLayout>, f: F) -> Self {
        let nd = layout.n_dirs();
        let values = (0..layout.n_nodes()).map(|k| f(k / nd, k % nd)).collect();
        SpatialTable { layout, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.layout.n_dirs() + j]
    }

    /// Value at a point given in apex-local coordinates.
    #[inline]
    pub fn interp(&self, y: &Point) -> f64 {
        let st = self.layout.stencil(y);
        let mut s = 0.0;
        for k in 0..st.len {
            s += st.w[k] * self.values[st.idx[k]];
        }
        s
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Field on the retarded-coordinate grid. Nodes with σ + 2ρ above `nu_limit`
/// were not computed and hold zero.
#[derive(Clone, Debug)]
pub struct SpaceTimeField {
    pub layout: Arc<GridLayout>,
    pub values: Vec<f64>,
    pub nu_limit: f64,
}

impl SpaceTimeField {
    pub fn zeros(layout: Arc<GridLayout>) -> Self {
        let n = layout.len();
        let nu = layout.time.span + 2.0 * layout.spatial.radius;
        SpaceTimeField { layout, values: vec![0.0; n], nu_limit: nu }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, l: usize) -> f64 {
        self.values[self.layout.index(i, j, l)]
    }

    /// Value at apex-local point y and time t; zero outside the cone.
    #[inline]
    pub fn interp(&self, y: &Point, t: f64) -> f64 {
        let rho = y.norm();
        let sigma = t - rho;
        if sigma <= 0.0 {
            return 0.0;
        }
        let st = self.layout.spatial.stencil(y);
        let (base, wt) = self.layout.time.stencil(sigma);
        let stride = self.layout.time.steps + 1;
        let mut s = 0.0;
        for k in 0..st.len {
            let off = st.idx[k] * stride + base;
            let v = &self.values[off..off + 4];
            s += st.w[k] * (wt[0] * v[0] + wt[1] * v[1] + wt[2] * v[2] + wt[3] * v[3]);
        }
        s
    }

    /// Value at a global point.
    pub fn value_at(&self, x: &Point, t: f64) -> f64 {
        self.interp(&self.layout.spatial.frame.to_local(x), t)
    }

    /// Largest |value| over determined nodes.
    pub fn sup_determined(&self) -> f64 {
        let g = &self.layout;
        let mut m: f64 = 0.0;
        for i in 0..=g.spatial.shells {
            for j in 0..g.spatial.n_dirs() {
                for l in 0..=g.time.steps {
                    if g.determined(g.spatial.rho(i), g.time.sigma(l)) {
                        m = m.max(self.at(i, j, l).abs());
                    }
                }
            }
        }
        m
    }

    pub fn add(&self, other: &SpaceTimeField) -> SpaceTimeField {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        SpaceTimeField { layout: self.layout.clone(), values, nu_limit: self.nu_limit.min(other.nu_limit) }
    }
}
