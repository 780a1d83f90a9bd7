//! Progressive-wave coefficients a_k, the ansatz v = Σ a_k γ^k and the
//! residual source F = (q+Δ)a_m γ^m.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::field::cone::Cone;
use crate::field::harmonics::{axial_laplacian, spectral_laplacian};
use crate::field::quad::{clip_interval, fornberg, GaussRule, Quadric};
use crate::field::{gamma_of, ConeTrace, GridLayout, Point, Potential, SpaceTimeField, SpatialLayout, SpatialTable, Symmetry};

/// Smoothness class of the synthetic potentials used in the budget check.
pub const SMOOTHNESS: usize = 7;

/// Default expansion order ⌊(n+1)/3⌋.
pub const DEFAULT_ORDER: usize = (SMOOTHNESS + 1) / 3;

#[derive(Clone, Debug)]
pub struct CoefficientSequence {
    pub apex: Point,
    pub layout: Arc<SpatialLayout>,
    pub m: usize,
    /// a_0..a_m on the layout nodes
    pub a: Vec<SpatialTable>,
    /// (q+Δ)a_k on the layout nodes
    pub f: Vec<SpatialTable>,
    pub sup_norms: Vec<f64>,
    /// sup|a_k| may not exceed sup|f_{k-1}|/(4(k+1))
    pub growth_bounds: Vec<f64>,
    pub cone: ConeTrace,
    /// cone outside of which every coefficient vanishes
    pub support: Option<Cone>,
}

impl CoefficientSequence {
    /// a_k at an apex-local point.
    pub fn a_local(&self, k: usize, y: &Point) -> f64 {
        self.a[k].interp(y)
    }

    /// v at an apex-local point and time.
    pub fn v_local(&self, y: &Point, t: f64) -> f64 {
        let z = t * t - y.norm_squared();
        let x = self.layout.frame.to_global(y);
        let mut s = self.cone.value(&x);
        for k in 1..=self.m {
            s += self.a[k].interp(y) * gamma_of(k, z);
        }
        s
    }

    pub fn growth_ok(&self) -> bool {
        self.sup_norms.iter().zip(&self.growth_bounds).all(|(s, b)| *s <= b * (1.0 + 1e-3) + 1e-300)
    }
}

/// Highest expansion order the layout can support.
pub fn max_order(layout: &SpatialLayout) -> usize {
    let budget = SMOOTHNESS / 2 + 1;
    let grid_ok = layout.shells >= 8
        && match layout.symmetry {
            Symmetry::Spherical => true,
            _ => layout.sphere.n_polar() >= 5,
        };
    if grid_ok {
        budget
    } else {
        1
    }
}

/// Pointwise level-0 and level-1 quantities along rays from the apex.
struct RayLevels<'a> {
    q: &'a Potential,
    g: &'a ConeTrace,
    rule: GaussRule,
}

impl RayLevels<'_> {
    /// Pieces of [0,1] split where the segment a + s(x-a) crosses the support sphere of q.
    fn pieces(&self, x: &Point) -> Vec<(f64, f64)> {
        let a = &self.g.apex;
        let Some(r) = self.q.support_radius() else {
            return vec![(0.0, 1.0)];
        };
        let d = x - a;
        let quad = Quadric { a: -d.norm_squared(), b: -2.0 * a.dot(&d), c: r * r - a.norm_squared() };
        let chord = clip_interval(1.0, &[quad]);
        let mut cuts = vec![0.0];
        for &(lo, hi) in chord.iter() {
            cuts.push(lo);
            cuts.push(hi);
        }
        cuts.push(1.0);
        cuts.dedup_by(|b, a| (*b - *a).abs() < 1e-14);
        cuts.windows(2).filter(|w| w[1] > w[0]).map(|w| (w[0], w[1])).collect()
    }

    /// (q g + Δg)(y) and its Laplacian.
    fn f0_and_laplacian(&self, y: &Point) -> (f64, f64) {
        let qd = self.q.derivs(y);
        let gd = self.g.data.derivs(y);
        let f0 = qd.value * gd.value + gd.laplacian;
        let lap = qd.laplacian * gd.value + 2.0 * qd.gradient.dot(&gd.gradient) + qd.value * gd.laplacian + gd.bilaplacian;
        (f0, lap)
    }

    /// (a_1, Δa_1, f_0) at x.
    fn level1(&self, x: &Point) -> (f64, f64, f64) {
        let a = &self.g.apex;
        let d = x - a;
        let mut a1 = 0.0;
        let mut lap = 0.0;
        for (lo, hi) in self.pieces(x) {
            let h = hi - lo;
            for (t, w) in self.rule.nodes.iter().zip(&self.rule.weights) {
                let s = lo + h * t;
                let (f0, l0) = self.f0_and_laplacian(&(a + d * s));
                a1 += w * h * s * f0;
                lap += w * h * s * s * s * l0;
            }
        }
        let (f0, _) = self.f0_and_laplacian(x);
        (0.25 * a1, 0.25 * lap, f0)
    }
}

/// (a_1, Δa_1, (q+Δ)a_0) at a global point, by quadrature along the ray from the apex.
pub fn level1_pointwise(q: &Potential, g: &ConeTrace, x: &Point, ray_nodes: usize) -> (f64, f64, f64) {
    RayLevels { q, g, rule: GaussRule::new((ray_nodes / 2).max(4)) }.level1(x)
}

/// Angular Laplace–Beltrami operator for a layout, applied shell by shell.
pub(crate) struct AngularOperator {
    n: usize,
    op: Vec<f64>,
}

impl AngularOperator {
    pub(crate) fn new(layout: &SpatialLayout) -> Self {
        match layout.symmetry {
            Symmetry::Spherical => AngularOperator { n: 1, op: vec![0.0] },
            Symmetry::Axial => AngularOperator { n: layout.n_dirs(), op: axial_laplacian(&layout.sphere.mu) },
            Symmetry::General => AngularOperator { n: layout.n_dirs(), op: spectral_laplacian(&layout.sphere) },
        }
    }

    pub(crate) fn apply(&self, shell: &[f64], j: usize) -> f64 {
        let row = &self.op[j * self.n..(j + 1) * self.n];
        row.iter().zip(shell).map(|(a, b)| a * b).sum()
    }
}

/// Laplacian of a tabulated field: fourth-order radial differences, the
/// layout's angular operator, and a spherical-mean formula at the apex.
pub fn grid_laplacian(t: &SpatialTable) -> SpatialTable {
    let l = &t.layout;
    let nd = l.n_dirs();
    let h = l.dr();
    let ang = AngularOperator::new(l);
    let mean = |i: usize| -> f64 { (0..nd).map(|j| l.dir_weight(j) * t.at(i, j)).sum::<f64>() / (4.0 * std::f64::consts::PI) };
    let antipodal = |i: usize, j: usize| -> f64 { t.interp(&(-l.node_local(i, j))) };
    let f00 = t.at(0, 0);
    let apex = (16.0 * (mean(1) - f00) - (mean(2) - f00)) / (2.0 * h * h);
    let n = l.shells as i64;
    let nodes: Vec<(usize, usize)> = (0..=l.shells).flat_map(|i| (0..nd).map(move |j| (i, j))).collect();
    let values = nodes
        .par_iter()
        .map(|&(i, j)| {
            if i == 0 {
                return apex;
            }
            let rho = l.rho(i);
            let start = (i as i64 - 2).min(n - 4);
            let pts: Vec<f64> = (start..start + 5).map(|p| p as f64 * h).collect();
            let vals: Vec<f64> = (start..start + 5)
                .map(|p| if p >= 0 { t.at(p as usize, j) } else { antipodal((-p) as usize, j) })
                .collect();
            let c = fornberg(rho, &pts, 2);
            let d1: f64 = c[1].iter().zip(&vals).map(|(a, b)| a * b).sum();
            let d2: f64 = c[2].iter().zip(&vals).map(|(a, b)| a * b).sum();
            let shell = &t.values[i * nd..(i + 1) * nd];
            d2 + 2.0 * d1 / rho + ang.apply(shell, j) / (rho * rho)
        })
        .collect();
    SpatialTable { layout: l.clone(), values }
}

/// Coefficients a_0..a_m on the nodes of `layout` (apex-centred frame).
pub fn compute_coefficients(q: &Potential, g: &ConeTrace, m: usize, layout: Arc<SpatialLayout>) -> Result<CoefficientSequence> {
    compute_coefficients_with(q, g, m, layout, 32)
}

pub fn compute_coefficients_with(
    q: &Potential,
    g: &ConeTrace,
    m: usize,
    layout: Arc<SpatialLayout>,
    ray_nodes: usize,
) -> Result<CoefficientSequence> {
    if m == 0 {
        return Err(invalid("expansion order m must be at least 1"));
    }
    let max = max_order(&layout);
    if m > max {
        return Err(Error::SmoothnessBudget { m, max });
    }
    if (layout.frame.apex - g.apex).norm() > 1e-12 {
        return Err(invalid("layout frame and cone data have different apexes"));
    }
    let nd = layout.n_dirs();
    let nodes: Vec<(usize, usize)> = (0..=layout.shells).flat_map(|i| (0..nd).map(move |j| (i, j))).collect();
    let levels = RayLevels { q, g, rule: GaussRule::new((ray_nodes / 2).max(4)) };

    // level 0 and level 1 pointwise
    let pointwise: Vec<(f64, f64, f64, f64, f64)> = nodes
        .par_iter()
        .map(|&(i, j)| {
            let x = layout.node_global(i, j);
            let g0 = g.value(&x);
            let (a1, lap1, f0) = levels.level1(&x);
            let qx = q.value(&x);
            (g0, f0, a1, qx * a1 + lap1, qx)
        })
        .collect();
    let table = |k: usize| SpatialTable {
        layout: layout.clone(),
        values: pointwise
            .iter()
            .map(|p| match k {
                0 => p.0,
                1 => p.1,
                2 => p.2,
                _ => p.3,
            })
            .collect(),
    };
    let mut a = vec![table(0), table(2)];
    let mut f = vec![table(1), table(3)];
    let qvals: Vec<f64> = pointwise.iter().map(|p| p.4).collect();

    let rule = GaussRule::new(ray_nodes);
    for k in 1..m {
        let fk = &f[k];
        let vals: Vec<f64> = nodes
            .par_iter()
            .map(|&(i, j)| {
                let y = layout.node_local(i, j);
                let mut s = 0.0;
                for (t, w) in rule.nodes.iter().zip(&rule.weights) {
                    s += w * t.powi(k as i32 + 1) * fk.interp(&(y * *t));
                }
                0.25 * s
            })
            .collect();
        let next = SpatialTable { layout: layout.clone(), values: vals };
        let lap = grid_laplacian(&next);
        let fv = next.values.iter().zip(&lap.values).zip(&qvals).map(|((a, l), q)| q * a + l).collect();
        a.push(next);
        f.push(SpatialTable { layout: layout.clone(), values: fv });
    }
    a.truncate(m + 1);
    f.truncate(m + 1);

    let sup_norms: Vec<f64> = a.iter().map(|t| t.sup()).collect();
    let growth_bounds = (0..=m).map(|k| if k == 0 { sup_norms[0] } else { f[k - 1].sup() / (4.0 * (k + 1) as f64) }).collect();
    let support = g.data.support();
    Ok(CoefficientSequence { apex: g.apex, layout, m, a, f, sup_norms, growth_bounds, cone: g.clone(), support })
}

/// v = Σ a_k γ^k on the grid nodes; the cone values are g itself.
pub fn assemble_v(coeffs: &CoefficientSequence, grid: Arc<GridLayout>) -> Result<SpaceTimeField> {
    let sl = &grid.spatial;
    if (sl.frame.apex - coeffs.apex).norm() > 1e-12 {
        return Err(invalid("grid and coefficients have different apexes"));
    }
    let nd = sl.n_dirs();
    let steps = grid.time.steps;
    let nodes: Vec<(usize, usize)> = (0..=sl.shells).flat_map(|i| (0..nd).map(move |j| (i, j))).collect();
    let chunks: Vec<Vec<f64>> = nodes
        .par_iter()
        .map(|&(i, j)| {
            let y = sl.node_local(i, j);
            let g0 = coeffs.cone.value(&sl.frame.to_global(&y));
            let ak: Vec<f64> = (1..=coeffs.m).map(|k| coeffs.a[k].interp(&y)).collect();
            let rho = sl.rho(i);
            (0..=steps)
                .map(|l| {
                    let s = grid.time.sigma(l);
                    let z = s * (s + 2.0 * rho);
                    let mut v = g0;
                    for (k, a) in ak.iter().enumerate() {
                        v += a * gamma_of(k + 1, z);
                    }
                    v
                })
                .collect()
        })
        .collect();
    let mut field = SpaceTimeField::zeros(grid.clone());
    field.values = chunks.concat();
    Ok(field)
}

/// F = (q+Δ)a_m γ^m inside the cone, zero outside.
#[derive(Clone, Debug)]
pub struct ResidualSource {
    pub m: usize,
    pub fm: SpatialTable,
    pub support: Option<Cone>,
    /// (q+Δ)a_0
    pub f0: SpatialTable,
    /// a_1..a_m
    pub a: Vec<SpatialTable>,
}

impl ResidualSource {
    /// F at an apex-local point y and time t.
    #[inline]
    pub fn eval_local(&self, y: &Point, t: f64) -> f64 {
        let z = t * t - y.norm_squared();
        if t <= 0.0 || z <= 0.0 {
            return 0.0;
        }
        self.fm.interp(y) * gamma_of(self.m, z)
    }

    /// v - g = Σ_{k≥1} a_k γ^k at an apex-local point.
    pub fn correction_local(&self, y: &Point, t: f64) -> f64 {
        let z = t * t - y.norm_squared();
        if t <= 0.0 || z <= 0.0 {
            return 0.0;
        }
        self.a.iter().enumerate().map(|(k, a)| a.interp(y) * gamma_of(k + 1, z)).sum()
    }

    /// (q+Δ)a_0 + q(v - g): a source whose retarded potential differs from KF by v - g.
    #[inline]
    pub fn kernel_form_local(&self, y: &Point, t: f64, qy: f64) -> f64 {
        if t <= y.norm() {
            return 0.0;
        }
        let base = self.f0.interp(y);
        if qy == 0.0 {
            base
        } else {
            base + qy * self.correction_local(y, t)
        }
    }

    pub fn eval(&self, x: &Point, t: f64) -> f64 {
        self.eval_local(&self.fm.layout.frame.to_local(x), t)
    }

    /// sup|F| over the determined region of a grid with the given horizon.
    pub fn sup(&self, horizon: f64) -> f64 {
        let l = &self.fm.layout;
        let mut s: f64 = 0.0;
        for i in 0..=l.shells {
            let rho = l.rho(i);
            if 2.0 * rho > horizon {
                continue;
            }
            let zmax = horizon * (horizon - 2.0 * rho) + 0.0;
            let zmax = zmax.max(0.0).min(horizon * horizon);
            let gm = gamma_of(self.m, zmax);
            for j in 0..l.n_dirs() {
                s = s.max(self.fm.at(i, j).abs() * gm);
            }
        }
        s
    }
}

pub fn residual_source(_q: &Potential, coeffs: &CoefficientSequence) -> ResidualSource {
    ResidualSource {
        m: coeffs.m,
        fm: coeffs.f[coeffs.m].clone(),
        support: coeffs.support,
        f0: coeffs.f[0].clone(),
        a: coeffs.a[1..].to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ApexFrame;
    use crate::goursat::GridSpec;

    fn coarse_layout() -> Arc<SpatialLayout> {
        let spec = GridSpec { shells: 12, n_polar: 4, n_azimuth: 8, steps: 24, ..Default::default() };
        Arc::new(spec.spatial(ApexFrame::toward_origin(Point::zeros()), Symmetry::Spherical, None).unwrap())
    }

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn constant_potential_coefficients() {
        let q0 = 2.0;
        let g = ConeTrace::constant(Point::zeros(), 1.0);
        let layout = coarse_layout();
        let m = max_order(&layout);
        let c = compute_coefficients(&Potential::constant(q0), &g, m, layout.clone()).unwrap();
        assert!(c.growth_ok());
        for k in 0..=m {
            let exact = (q0 / 4.0).powi(k as i32) / factorial(k + 1);
            for i in 0..=layout.shells {
                let y = *layout.dir(0) * layout.rho(i);
                assert!((c.a_local(k, &y) - exact).abs() < 1e-10 * exact, "k={k} i={i}");
            }
        }
        let y = Point::new(0.0, 0.0, 0.3);
        let t = 0.8;
        let z = t * t - 0.09;
        let partial: f64 = (0..=m).map(|k| (q0 / 4.0).powi(k as i32) / factorial(k + 1) * gamma_of(k, z)).sum();
        assert!((c.v_local(&y, t) - partial).abs() < 1e-10);
    }

    #[test]
    fn level_one_on_constant_data() {
        let g = ConeTrace::constant(Point::z(), 1.0);
        let (a1, lap, f0) = level1_pointwise(&Potential::constant(-0.5), &g, &Point::new(0.1, 0.2, 0.3), 16);
        assert!((a1 + 0.5 / 8.0).abs() < 1e-14);
        assert!(lap.abs() < 1e-14);
        assert!((f0 + 0.5).abs() < 1e-14);
    }

    #[test]
    fn residual_source_vanishes_outside_cone() {
        let g = ConeTrace::constant(Point::zeros(), 1.0);
        let c = compute_coefficients(&Potential::constant(1.0), &g, 2, coarse_layout()).unwrap();
        let f = residual_source(&Potential::constant(1.0), &c);
        assert_eq!(f.eval(&Point::new(0.5, 0.0, 0.0), 0.4), 0.0);
        let (x, t) = (Point::new(0.1, 0.0, 0.0), 0.6);
        let expect = c.f[2].interp(&x) * gamma_of(2, t * t - 0.01);
        assert!((f.eval(&x, t) - expect).abs() < 1e-14);
        assert!(f.sup(1.0) >= f.eval(&x, t).abs());
    }
}
