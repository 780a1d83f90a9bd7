//! Characteristic initial value problem: u = v + w inside the forward cone of
//! an apex with u = g on the cone.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::quad::{fornberg, GaussRule};
use crate::field::{
    radial_derivative, ApexFrame, ConeTrace, GridLayout, Point, Potential, SpaceTimeField, SpatialLayout, SphereGrid,
    Symmetry, TimeAxis,
};
use crate::progressive::{assemble_v, compute_coefficients_with, residual_source, CoefficientSequence};
use crate::retarded::{neumann_solve, NeumannOptions, NeumannSolution};

/// Resolution of the retarded-coordinate grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub shells: usize,
    pub n_polar: usize,
    pub n_azimuth: usize,
    pub steps: usize,
    pub span: f64,
    pub horizon: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { shells: 48, n_polar: 16, n_azimuth: 32, steps: 96, span: 2.0, horizon: 2.0 }
    }
}

impl GridSpec {
    /// Same domain with every node count multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        GridSpec {
            shells: self.shells * factor,
            n_polar: self.n_polar * factor,
            n_azimuth: self.n_azimuth * factor,
            steps: self.steps * factor,
            ..self.clone()
        }
    }

    fn radius(&self) -> f64 {
        0.5 * self.horizon
    }

    /// Spatial layout; `cap` concentrates half of the polar nodes on cos θ ≥ cap.
    pub fn spatial(&self, frame: ApexFrame, symmetry: Symmetry, cap: Option<f64>) -> Result<SpatialLayout> {
        let n_az = if symmetry == Symmetry::General { self.n_azimuth } else { 1 };
        let sphere = match cap {
            Some(c) if c > -0.9 && c < 0.99 => {
                let hi = self.n_polar / 2 + self.n_polar % 2;
                SphereGrid::composite(&[(c, 1.0, hi.max(4)), (-1.0, c, (self.n_polar - hi).max(4))], n_az)?
            }
            _ => SphereGrid::new(self.n_polar, n_az)?,
        };
        SpatialLayout::new(frame, symmetry, self.radius(), self.shells, sphere)
    }

    pub fn layout(&self, frame: ApexFrame, symmetry: Symmetry, cap: Option<f64>) -> Result<Arc<GridLayout>> {
        let spatial = self.spatial(frame, symmetry, cap)?;
        Ok(Arc::new(GridLayout::new(spatial, TimeAxis { steps: self.steps, span: self.span }, self.horizon)?))
    }
}

#[derive(Clone, Debug)]
pub struct GoursatOptions {
    pub m: usize,
    pub neumann: NeumannOptions,
    /// coefficient tables on this layout instead of the field's spatial layout
    pub coefficient_layout: Option<Arc<SpatialLayout>>,
    pub ray_nodes: usize,
}

impl Default for GoursatOptions {
    fn default() -> Self {
        GoursatOptions { m: 1, neumann: NeumannOptions::default(), coefficient_layout: None, ray_nodes: 32 }
    }
}

#[derive(Clone, Debug)]
pub struct GoursatSolution {
    pub apex: Point,
    pub u: SpaceTimeField,
    pub v: SpaceTimeField,
    pub w: NeumannSolution,
    pub coeffs: CoefficientSequence,
    pub cone: ConeTrace,
    /// max |u - g| over the cone nodes
    pub trace_error: f64,
    /// smoothness class the construction nominally delivers
    pub smoothness: usize,
}

impl GoursatSolution {
    pub fn grid(&self) -> &Arc<GridLayout> {
        &self.u.layout
    }

    /// u at a global point and time, zero before the cone.
    pub fn value(&self, x: &Point, t: f64) -> f64 {
        self.u.value_at(x, t)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let g = self.grid();
        let sl = &g.spatial;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "theta", "phi", "tau_retarded", "u"])?;
        for i in 0..=sl.shells {
            for j in 0..sl.n_dirs() {
                let d = sl.dir(j);
                let theta = d[2].clamp(-1.0, 1.0).acos();
                let phi = d[1].atan2(d[0]).rem_euclid(2.0 * PI);
                for l in 0..=g.time.steps {
                    w.write_record(&[
                        format!("{}", sl.rho(i)),
                        format!("{theta}"),
                        format!("{phi}"),
                        format!("{}", g.time.sigma(l)),
                        format!("{:e}", self.u.at(i, j, l)),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// u = v + w on `grid`, whose frame must sit at the apex of `g`.
pub fn goursat_solve(q: &Potential, g: &ConeTrace, grid: Arc<GridLayout>, opts: &GoursatOptions) -> Result<GoursatSolution> {
    if (grid.spatial.frame.apex - g.apex).norm() > 1e-12 {
        return Err(invalid("grid frame is not centred at the cone apex"));
    }
    let coeff_layout = opts.coefficient_layout.clone().unwrap_or_else(|| Arc::new(grid.spatial.clone()));
    let coeffs = compute_coefficients_with(q, g, opts.m, coeff_layout, opts.ray_nodes)?;
    let v = assemble_v(&coeffs, grid.clone())?;
    let f = residual_source(q, &coeffs);
    let f = if Arc::ptr_eq(&f.fm.layout, &coeffs.layout) && f.fm.layout.frame == grid.spatial.frame {
        f
    } else {
        return Err(invalid("coefficient layout frame differs from the grid frame"));
    };
    let w = neumann_solve(q, &f, grid.clone(), &opts.neumann)?;
    let u = v.add(&w.sum);
    let sl = &grid.spatial;
    let mut trace_error: f64 = 0.0;
    for i in 0..=sl.shells {
        for j in 0..sl.n_dirs() {
            trace_error = trace_error.max((u.at(i, j, 0) - g.value(&sl.node_global(i, j))).abs());
        }
    }
    Ok(GoursatSolution { apex: g.apex, u, v, w, coeffs, cone: g.clone(), trace_error, smoothness: 1 })
}

/// c Σ_k z^k/(k!(k+1)!) with z = q₀(t² - |x|²)/4: the solution for constant q and g ≡ c.
pub fn constant_potential_series(q0: f64, c: f64, x: &Point, t: f64) -> f64 {
    let z = q0 * (t * t - x.norm_squared()) / 4.0;
    let mut term = 1.0;
    let mut s = 1.0;
    for k in 1..200 {
        term *= z / (k as f64 * (k + 1) as f64);
        s += term;
        if term.abs() < 1e-18 * s.abs() {
            break;
        }
    }
    c * s
}

/// d/dz of Σ z^k/(k!(k+1)!).
pub fn constant_potential_series_dz(z: f64) -> f64 {
    let mut term = 0.5;
    let mut s = 0.5;
    for k in 1..200 {
        term *= z / ((k + 1) as f64 * (k + 2) as f64) * (k + 1) as f64 / k as f64;
        s += term;
        if term.abs() < 1e-18 * s.abs() {
            break;
        }
    }
    s
}

/// max |(∂_t + ∂_r)u - ∂_r g| on the cone, both derivatives one-sided from inside.
pub fn cone_identity_residual(sol: &GoursatSolution) -> f64 {
    let g = sol.grid();
    let sl = &g.spatial;
    let h = sl.dr().min(g.time.dt());
    let fwd = fornberg(0.0, &[0.0, 1.0, 2.0, 3.0, 4.0], 1);
    let back = fornberg(0.0, &[0.0, -1.0, -2.0, -3.0, -4.0], 1);
    let mut worst: f64 = 0.0;
    for i in 0..=sl.shells {
        let rho = sl.rho(i);
        if rho < 4.0 * h || 2.0 * rho + 4.0 * h > g.horizon {
            continue;
        }
        for j in 0..sl.n_dirs() {
            let w = *sl.dir(j);
            let y = w * rho;
            let dt: f64 = (0..5).map(|k| fwd[1][k] * sol.u.interp(&y, rho + k as f64 * h)).sum::<f64>() / h;
            let dr: f64 = (0..5).map(|k| back[1][k] * sol.u.interp(&(w * (rho - k as f64 * h)), rho)).sum::<f64>() / h;
            let x = sl.frame.to_global(&y);
            let dg = radial_derivative(|p: &Point| sol.cone.value(p), &x, &sol.apex, 1e-3).unwrap_or(0.0);
            worst = worst.max((dt + dr - dg).abs());
        }
    }
    worst
}

/// Retarded-coordinate derivatives of a field: ∂_σ, ∂_ρ and |angular gradient|².
fn derivative_fields(f: &SpaceTimeField) -> (SpaceTimeField, SpaceTimeField, SpaceTimeField) {
    let g = &f.layout;
    let sl = &g.spatial;
    let steps = g.time.steps;
    let nd = sl.n_dirs();
    let five = |n: usize, k: usize| -> usize { k.saturating_sub(2).min(n.saturating_sub(4)) };
    let mut ds = SpaceTimeField::zeros(g.clone());
    let mut dr = SpaceTimeField::zeros(g.clone());
    let mut da = SpaceTimeField::zeros(g.clone());
    let dt = g.time.dt();
    let hr = sl.dr();
    for i in 0..=sl.shells {
        let bi = five(sl.shells, i);
        let cr = fornberg(i as f64, &(bi..bi + 5).map(|p| p as f64).collect::<Vec<_>>(), 1);
        for j in 0..nd {
            for l in 0..=steps {
                let bl = five(steps, l);
                let ct = fornberg(l as f64, &(bl..bl + 5).map(|p| p as f64).collect::<Vec<_>>(), 1);
                let idx = g.index(i, j, l);
                ds.values[idx] = (0..5).map(|k| ct[1][k] * f.at(i, j, bl + k)).sum::<f64>() / dt;
                dr.values[idx] = (0..5).map(|k| cr[1][k] * f.at(bi + k, j, l)).sum::<f64>() / hr;
            }
        }
    }
    match sl.symmetry {
        Symmetry::Spherical => {}
        Symmetry::Axial => {
            let mu = &sl.sphere.mu;
            for j in 0..nd {
                let bj = five(nd, j);
                let c = fornberg(mu[j], &mu[bj..bj + 5], 1);
                let s2 = 1.0 - mu[j] * mu[j];
                for i in 1..=sl.shells {
                    let rho = sl.rho(i);
                    for l in 0..=steps {
                        let d: f64 = (0..5).map(|k| c[1][k] * f.at(i, bj + k, l)).sum();
                        da.values[g.index(i, j, l)] = s2 * d * d / (rho * rho);
                    }
                }
            }
        }
        Symmetry::General => {
            let np = sl.sphere.n_polar();
            let na = sl.sphere.n_azimuth;
            let th: Vec<f64> = (0..np).map(|j| sl.sphere.theta(j)).collect();
            let dphi = 2.0 * PI / na as f64;
            for jp in 0..np {
                let bj = five(np, jp);
                let c = fornberg(th[jp], &th[bj..bj + 5], 1);
                let st = th[jp].sin();
                for k in 0..na {
                    let j = jp * na + k;
                    for i in 1..=sl.shells {
                        let rho = sl.rho(i);
                        for l in 0..=steps {
                            let dth: f64 = (0..5).map(|a| c[1][a] * f.at(i, (bj + a) * na + k, l)).sum();
                            let at = |kk: i64| f.at(i, jp * na + kk.rem_euclid(na as i64) as usize, l);
                            let kk = k as i64;
                            let dph = (8.0 * (at(kk + 1) - at(kk - 1)) - (at(kk + 2) - at(kk - 2))) / (12.0 * dphi);
                            da.values[g.index(i, j, l)] = (dth * dth + dph * dph / (st * st)) / (rho * rho);
                        }
                    }
                }
            }
        }
    }
    (ds, dr, da)
}

/// E(t) = ∫_{|x-a|≤t} |∂_t u|² + |∇u|² + |u|² dx for each t.
pub fn energy_trace(sol: &GoursatSolution, times: &[f64]) -> Vec<f64> {
    let (ds, dr, da) = derivative_fields(&sol.u);
    let g = sol.grid();
    let sl = &g.spatial;
    let rule = GaussRule::new(2 * sl.shells);
    times
        .par_iter()
        .map(|&t| {
            if t <= 0.0 {
                return 0.0;
            }
            let mut e = 0.0;
            for (s0, ws) in rule.nodes.iter().zip(&rule.weights) {
                let rho = t * s0;
                for j in 0..sl.n_dirs() {
                    let y = sl.dir(j) * rho;
                    let us = ds.interp(&y, t);
                    let ur = dr.interp(&y, t);
                    let ang = da.interp(&y, t).max(0.0);
                    let u = sol.u.interp(&y, t);
                    // ∂_t u = U_σ and ∇u = (U_ρ - U_σ) ω + angular part
                    let density = us * us + (ur - us) * (ur - us) + ang + u * u;
                    e += ws * t * sl.dir_weight(j) * rho * rho * density;
                }
            }
            e
        })
        .collect()
}

/// max |(∂_t² - Δ - q)u| over interior sample points at least two steps inside the cone.
pub fn pde_residual(sol: &GoursatSolution, q: &Potential) -> f64 {
    let g = sol.grid();
    let sl = &g.spatial;
    let h = sl.dr();
    let mut worst: f64 = 0.0;
    for i in (1..sl.shells).step_by(3) {
        let rho = sl.rho(i);
        for j in (0..sl.n_dirs()).step_by(sl.n_dirs().div_ceil(6).max(1)) {
            let y = sl.dir(j) * rho;
            let mut l = 4;
            while l < g.time.steps {
                let sigma = g.time.sigma(l);
                let t = rho + sigma;
                if sigma < 2.0 * h + 2.0 * h || t + rho + 4.0 * h > g.horizon {
                    l += 5;
                    continue;
                }
                let u = |p: &Point, s: f64| sol.u.interp(p, s);
                let u0 = u(&y, t);
                let utt = (u(&y, t + h) - 2.0 * u0 + u(&y, t - h)) / (h * h);
                let mut lap = 0.0;
                for a in 0..3 {
                    let mut e = Point::zeros();
                    e[a] = h;
                    lap += (u(&(y + e), t) - 2.0 * u0 + u(&(y - e), t)) / (h * h);
                }
                let qx = q.value(&sl.frame.to_global(&y));
                worst = worst.max((utt - lap - qx * u0).abs());
                l += 5;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coarse() -> GridSpec {
        GridSpec { shells: 16, n_polar: 4, n_azimuth: 8, steps: 32, ..Default::default() }
    }

    fn series_error(q0: f64, spec: &GridSpec) -> (f64, GoursatSolution) {
        let grid = spec.layout(ApexFrame::toward_origin(Point::zeros()), Symmetry::Spherical, None).unwrap();
        let g = ConeTrace::constant(Point::zeros(), 1.0);
        let sol = goursat_solve(&Potential::constant(q0), &g, grid.clone(), &GoursatOptions::default()).unwrap();
        let sl = &grid.spatial;
        let mut worst: f64 = 0.0;
        for i in 0..=sl.shells {
            for l in 0..=grid.time.steps {
                let (rho, sigma) = (sl.rho(i), grid.time.sigma(l));
                if grid.determined(rho, sigma) {
                    let exact = constant_potential_series(q0, 1.0, &Point::new(0.0, 0.0, rho), rho + sigma);
                    worst = worst.max((sol.u.at(i, 0, l) - exact).abs() / exact.abs());
                }
            }
        }
        (worst, sol)
    }

    #[test]
    fn refined_scales_counts_only() {
        let r = coarse().refined(3);
        assert_eq!((r.shells, r.n_polar, r.n_azimuth, r.steps), (48, 12, 24, 96));
        assert_eq!((r.span, r.horizon), (2.0, 2.0));
    }

    #[test]
    fn series_and_its_derivative() {
        assert_eq!(constant_potential_series(0.0, 3.0, &Point::new(0.2, 0.0, 0.0), 1.0), 3.0);
        // q0(t² - |x|²)/4 = 1 gives Σ 1/(k!(k+1)!) = I₁(2)
        let v = constant_potential_series(4.0, 1.0, &Point::zeros(), 1.0);
        assert!((v - 1.590_636_854_637_329).abs() < 1e-12);
        for z in [-3.0, -0.2, 0.0, 0.7, 2.5] {
            let h = 1e-5;
            // t = 1, x = 0, q0 = 4z puts the series argument at z
            let s = |z: f64| constant_potential_series(4.0 * z, 1.0, &Point::zeros(), 1.0);
            let fd = (s(z + h) - s(z - h)) / (2.0 * h);
            assert!((constant_potential_series_dz(z) - fd).abs() < 1e-8, "z={z}");
        }
    }

    #[test]
    fn constant_potential_on_coarse_grids() {
        for q0 in [-2.0, 0.5] {
            let (e1, sol) = series_error(q0, &coarse());
            let (e2, fine) = series_error(q0, &coarse().refined(2));
            assert!(e1 < 2e-2, "q0={q0} e1={e1}");
            assert!(e2 < e1, "q0={q0} {e2} !< {e1}");
            assert!(sol.trace_error < 1e-12);
            assert!(fine.w.envelope_ok(), "q0={q0} {:?}", fine.w.diagnostics);
            assert!(cone_identity_residual(&sol) < 1e-2);
        }
    }

    #[test]
    fn apex_mismatch_is_rejected() {
        let grid = coarse().layout(ApexFrame::toward_origin(Point::zeros()), Symmetry::Spherical, None).unwrap();
        let g = ConeTrace::constant(Point::new(0.1, 0.0, 0.0), 1.0);
        assert!(goursat_solve(&Potential::constant(1.0), &g, grid, &GoursatOptions::default()).is_err());
    }
}
