//! Point-source solutions U^a = δ(t - |x-a|)/(4π|x-a|) + H(t - |x-a|) r^a and
//! backscattering data (a, τ) ↦ U^a(a, 2τ).

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::cone::Cone;
use crate::field::quad::{clip_interval, fornberg, GaussRule, Quadric};
use crate::field::{
    ApexFrame, ConeData, ConeTrace, Point, Potential, PotentialSymmetry, QDerivs, SphereGrid, Symmetry,
};
use crate::goursat::{goursat_solve, GoursatOptions, GoursatSolution, GridSpec};
use crate::retarded::NeumannOptions;

const AXIAL_COEFFICIENT_REFINEMENT: usize = 4;

/// g(x) = (1/8π)∫₀¹ q(a + s(x-a)) ds and its derivatives, by Gauss quadrature
/// over the part of the segment inside the support of q.
pub struct PotentialCone {
    q: Potential,
    apex: Point,
    rule: GaussRule,
}

impl PotentialCone {
    fn chord(&self, x: &Point) -> Vec<(f64, f64)> {
        let Some(r) = self.q.support_radius() else {
            return vec![(0.0, 1.0)];
        };
        let d = x - self.apex;
        let quad = Quadric { a: -d.norm_squared(), b: -2.0 * self.apex.dot(&d), c: r * r - self.apex.norm_squared() };
        if d.norm_squared() == 0.0 {
            return if quad.c > 0.0 { vec![(0.0, 1.0)] } else { vec![] };
        }
        clip_interval(1.0, &[quad]).iter().copied().collect()
    }
}

impl ConeData for PotentialCone {
    fn value(&self, x: &Point) -> f64 {
        let d = x - self.apex;
        let mut s = 0.0;
        for (lo, hi) in self.chord(x) {
            s += self.rule.integrate(lo, hi, |t| self.q.value(&(self.apex + d * t)));
        }
        s / (8.0 * PI)
    }

    fn derivs(&self, x: &Point) -> QDerivs {
        let d = x - self.apex;
        let mut out = QDerivs::default();
        for (lo, hi) in self.chord(x) {
            let h = hi - lo;
            for (t0, w) in self.rule.nodes.iter().zip(&self.rule.weights) {
                let s = lo + h * t0;
                let qd = self.q.derivs(&(self.apex + d * s));
                let w = w * h;
                out.value += w * qd.value;
                out.gradient += qd.gradient * (w * s);
                out.laplacian += w * s * s * qd.laplacian;
                out.bilaplacian += w * s.powi(4) * qd.bilaplacian;
            }
        }
        let k = 1.0 / (8.0 * PI);
        QDerivs { value: out.value * k, gradient: out.gradient * k, laplacian: out.laplacian * k, bilaplacian: out.bilaplacian * k }
    }

    fn symmetry(&self) -> Symmetry {
        symmetry_for(&self.q, &self.apex)
    }

    fn support(&self) -> Option<Cone> {
        let r = self.q.support_radius()?;
        let d = self.apex.norm();
        if d <= r {
            return None;
        }
        Some(Cone { axis: -self.apex / d, cos_half_angle: (1.0 - (r / d).powi(2)).sqrt() })
    }
}

/// Symmetry of the point-source problem about apex a.
pub fn symmetry_for(q: &Potential, a: &Point) -> Symmetry {
    if q.is_constant() || (q.symmetry() == PotentialSymmetry::Radial && a.norm() == 0.0) {
        Symmetry::Spherical
    } else if q.symmetry() == PotentialSymmetry::Radial {
        Symmetry::Axial
    } else {
        Symmetry::General
    }
}

pub fn cone_data_from_potential(q: &Potential, a: &Point) -> ConeTrace {
    cone_data_with(q, a, 32)
}

pub fn cone_data_with(q: &Potential, a: &Point, nodes: usize) -> ConeTrace {
    ConeTrace::new(*a, Arc::new(PotentialCone { q: q.clone(), apex: *a, rule: GaussRule::new(nodes) }))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SolverConfig {
    pub grid: GridSpec,
    /// expansion order m
    pub m: usize,
    /// Neumann truncation M; chosen from the tail bound when absent
    pub levels: Option<usize>,
    pub neumann_tol: f64,
    pub k_polar: usize,
    pub k_azimuth: usize,
    pub k_radial: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { grid: GridSpec::default(), m: 1, levels: None, neumann_tol: 1e-4, k_polar: 12, k_azimuth: 12, k_radial: 16 }
    }
}

impl SolverConfig {
    pub fn goursat_options(&self) -> GoursatOptions {
        GoursatOptions {
            m: self.m,
            neumann: NeumannOptions {
                levels: self.levels,
                rel_tol: self.neumann_tol,
                rule: crate::retarded::KRule::new(self.k_polar, self.k_azimuth, self.k_radial),
                ..Default::default()
            },
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct PointSourceSolution {
    pub apex: Point,
    /// r^a; the singular free-space part is kept symbolic
    pub regular: GoursatSolution,
    pub cone: ConeTrace,
    /// max |(|x-a|∂_t + 1 + (x-a)·∇)r^a - q/8π| on the cone
    pub transport_residual: f64,
}

impl PointSourceSolution {
    /// r^a(x, t); zero before the cone.
    pub fn regular_at(&self, x: &Point, t: f64) -> f64 {
        self.regular.value(x, t)
    }

    /// U^a(a, 2τ) for τ > 0.
    pub fn backscatter(&self, tau: f64) -> f64 {
        self.regular.u.interp(&Point::zeros(), 2.0 * tau)
    }
}

fn layout_params(q: &Potential, a: &Point) -> (ApexFrame, Symmetry, Option<f64>) {
    let sym = symmetry_for(q, a);
    let cap = match (sym, q.support_radius()) {
        (Symmetry::Axial, Some(r)) if a.norm() > r => Some((1.0 - (r / a.norm()).powi(2)).sqrt() - 0.05),
        _ => None,
    };
    (ApexFrame::toward_origin(*a), sym, cap)
}

/// Layout for the point-source grid around apex a.
pub fn point_source_layout(q: &Potential, a: &Point, spec: &GridSpec) -> Result<Arc<crate::field::GridLayout>> {
    let (frame, sym, cap) = layout_params(q, a);
    spec.layout(frame, sym, cap)
}

pub fn solve_point_source(q: &Potential, a: &Point, cfg: &SolverConfig) -> Result<PointSourceSolution> {
    if ((a.norm() - 1.0).abs()) > 1e-12 {
        return Err(invalid("point sources sit on the unit sphere"));
    }
    let (frame, sym, cap) = layout_params(q, a);
    let grid = cfg.grid.layout(frame.clone(), sym, cap)?;
    let mut opts = cfg.goursat_options();
    if sym == Symmetry::Axial {
        // axial coefficient tables are two-dimensional, so a finer polar grid is cheap
        let fine = GridSpec { n_polar: AXIAL_COEFFICIENT_REFINEMENT * cfg.grid.n_polar, ..cfg.grid.clone() };
        opts.coefficient_layout = Some(Arc::new(fine.spatial(frame, sym, cap)?));
    }
    let g = cone_data_from_potential(q, a);
    let regular = goursat_solve(q, &g, grid, &opts)?;
    let transport_residual = transport_residual(&regular, q);
    Ok(PointSourceSolution { apex: *a, regular, cone: g, transport_residual })
}

/// max over cone nodes of |ρ∂_t u + u + ρ∂_r u - q/8π| with one-sided interior differences.
pub fn transport_residual(sol: &GoursatSolution, q: &Potential) -> f64 {
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
            let u = sol.u.at(i, j, 0);
            let x = sl.frame.to_global(&y);
            worst = worst.max((rho * dt + u + rho * dr - q.value(&x) / (8.0 * PI)).abs());
        }
    }
    worst
}

/// Source nodes on the unit sphere, stored by resolution.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct SourceGrid {
    pub n_polar: usize,
    pub n_azimuth: usize,
}

impl SourceGrid {
    pub fn sphere(&self) -> Result<SphereGrid> {
        SphereGrid::new(self.n_polar, self.n_azimuth)
    }
}

/// Uniform τ samples k/n, k = 1..n-1.
pub fn tau_grid(n: usize) -> Vec<f64> {
    (1..n).map(|k| k as f64 / n as f64).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DataMeta {
    pub sources: SourceGrid,
    pub taus: Vec<f64>,
    pub solver: SolverConfig,
    /// Neumann truncation used per source
    pub levels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackscatterData {
    pub meta: DataMeta,
    /// U^a(a, 2τ), source-major
    pub values: Vec<f64>,
    /// ∂_τ(τ U^a(a, 2τ))
    pub dtau: Vec<f64>,
}

/// ∂_τ(τ f(τ)) on a uniform grid: five-point differences, one-sided at the ends.
pub fn tau_derivative(taus: &[f64], values: &[f64]) -> Vec<f64> {
    let n = taus.len();
    if n < 5 {
        return vec![0.0; n];
    }
    let y: Vec<f64> = taus.iter().zip(values).map(|(t, v)| t * v).collect();
    (0..n)
        .map(|k| {
            let b = k.saturating_sub(2).min(n - 5);
            let c = fornberg(taus[k], &taus[b..b + 5], 1);
            (0..5).map(|i| c[1][i] * y[b + i]).sum()
        })
        .collect()
}

impl BackscatterData {
    pub fn n_sources(&self) -> usize {
        self.meta.sources.n_polar * self.meta.sources.n_azimuth
    }

    pub fn n_taus(&self) -> usize {
        self.meta.taus.len()
    }

    pub fn value(&self, source: usize, k: usize) -> f64 {
        self.values[source * self.n_taus() + k]
    }

    pub fn derivative(&self, source: usize, k: usize) -> f64 {
        self.dtau[source * self.n_taus() + k]
    }

    /// Zero data on the same grids.
    pub fn zeros_like(&self) -> Self {
        BackscatterData { meta: self.meta.clone(), values: vec![0.0; self.values.len()], dtau: vec![0.0; self.dtau.len()] }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let sphere = self.meta.sources.sphere()?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["a_polar", "a_azimuth", "tau", "value", "dtau_tau_value"])?;
        for s in 0..self.n_sources() {
            let (jp, ka) = (s / self.meta.sources.n_azimuth, s % self.meta.sources.n_azimuth);
            for (k, tau) in self.meta.taus.iter().enumerate() {
                w.write_record(&[
                    format!("{}", sphere.theta(jp)),
                    format!("{}", sphere.phi(ka)),
                    format!("{tau}"),
                    format!("{:e}", self.value(s, k)),
                    format!("{:e}", self.derivative(s, k)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.meta)?)
    }

    /// Parse the CSV against the grids of its JSON sidecar.
    pub fn read<R: Read>(csv_in: R, sidecar: &str) -> Result<Self> {
        let meta: DataMeta = serde_json::from_str(sidecar).map_err(|e| Error::Parse(format!("sidecar: {e}")))?;
        let n = meta.sources.n_polar * meta.sources.n_azimuth * meta.taus.len();
        let mut rdr = csv::Reader::from_reader(csv_in);
        let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let expected = ["a_polar", "a_azimuth", "tau", "value", "dtau_tau_value"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse(format!("unexpected columns {headers:?}")));
        }
        let mut values = Vec::with_capacity(n);
        let mut dtau = Vec::with_capacity(n);
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let field = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Parse(format!("row {row}: missing column {i}")))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {row}: {e}")))
            };
            let tau = field(2)?;
            let k = row % meta.taus.len().max(1);
            if meta.taus.get(k).is_none_or(|t| (t - tau).abs() > 1e-9) {
                return Err(Error::Parse(format!("row {row}: τ = {tau} does not match the sidecar grid")));
            }
            values.push(field(3)?);
            dtau.push(field(4)?);
        }
        if values.len() != n {
            return Err(Error::Parse(format!("expected {n} rows, found {}", values.len())));
        }
        Ok(BackscatterData { meta, values, dtau })
    }
}

/// Solve for every source node (once for radial q) and sample U^a(a, 2τ).
pub fn sample_backscatter(q: &Potential, sources: SourceGrid, taus: &[f64], cfg: &SolverConfig) -> Result<BackscatterData> {
    if taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(invalid("τ samples must lie in (0, 1)"));
    }
    if 2.0 * taus.iter().copied().fold(0.0, f64::max) > cfg.grid.horizon + 1e-12 {
        return Err(invalid("τ samples exceed the grid horizon"));
    }
    let sphere = sources.sphere()?;
    let radial = q.symmetry() == PotentialSymmetry::Radial;
    let points: Vec<Point> = if radial { vec![Point::z()] } else { sphere.nodes().to_vec() };
    let solved: Vec<(Vec<f64>, usize)> = points
        .par_iter()
        .map(|a| {
            let sol = solve_point_source(q, a, cfg)?;
            Ok((taus.iter().map(|&t| sol.backscatter(t)).collect(), sol.regular.w.levels))
        })
        .collect::<Result<_>>()?;
    let n = sphere.len();
    let mut values = Vec::with_capacity(n * taus.len());
    let mut dtau = Vec::with_capacity(n * taus.len());
    let mut levels = Vec::new();
    for s in 0..n {
        let (v, lv) = &solved[if radial { 0 } else { s }];
        values.extend_from_slice(v);
        dtau.extend(tau_derivative(taus, v));
        levels.push(*lv);
    }
    Ok(BackscatterData { meta: DataMeta { sources, taus: taus.to_vec(), solver: cfg.clone(), levels }, values, dtau })
}

/// sup over τ nodes of (∫_{|a|=1} |∂_τ(τ(U₁ - U₂))|² dσ)^{1/2}.
pub fn measurement_norm(d1: &BackscatterData, d2: &BackscatterData) -> Result<f64> {
    if d1.meta.sources != d2.meta.sources || d1.meta.taus != d2.meta.taus {
        return Err(Error::GridMismatch("backscatter data on different grids".into()));
    }
    let sphere = d1.meta.sources.sphere()?;
    let mut worst: f64 = 0.0;
    for k in 0..d1.n_taus() {
        let s: f64 = (0..d1.n_sources())
            .map(|a| {
                let d = d1.derivative(a, k) - d2.derivative(a, k);
                sphere.weights()[a] * d * d
            })
            .sum();
        worst = worst.max(s.sqrt());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{PotentialKind, PotentialSpec};

    fn bump() -> Potential {
        Potential::from_spec(&PotentialSpec { kind: PotentialKind::RadialBump, amplitude: 1.0, center_radius: 0.55, width: 0.3, margin_h: 0.15 })
            .unwrap()
    }

    fn coarse() -> SolverConfig {
        SolverConfig { grid: GridSpec { shells: 24, n_polar: 6, n_azimuth: 12, steps: 48, ..Default::default() }, ..Default::default() }
    }

    fn synthetic(sources: SourceGrid, taus: &[f64]) -> BackscatterData {
        let n = sources.n_polar * sources.n_azimuth;
        let values: Vec<f64> = (0..n).flat_map(|s| taus.iter().map(move |t| (s as f64 + 1.0) * t * t)).collect();
        let dtau = (0..n).flat_map(|s| tau_derivative(taus, &values[s * taus.len()..(s + 1) * taus.len()])).collect();
        let meta = DataMeta { sources, taus: taus.to_vec(), solver: coarse(), levels: vec![1; n] };
        BackscatterData { meta, values, dtau }
    }

    #[test]
    fn tau_grid_excludes_endpoints() {
        assert_eq!(tau_grid(4), vec![0.25, 0.5, 0.75]);
        assert!(tau_grid(1).is_empty());
    }

    #[test]
    fn tau_derivative_is_exact_on_low_degree() {
        let taus = tau_grid(16);
        // τ·(2 - τ + τ³) has degree four
        let values: Vec<f64> = taus.iter().map(|t| 2.0 - t + t * t * t).collect();
        for (t, d) in taus.iter().zip(tau_derivative(&taus, &values)) {
            assert!((d - (2.0 - 2.0 * t + 4.0 * t * t * t)).abs() < 1e-10);
        }
        assert_eq!(tau_derivative(&taus[..3], &values[..3]), vec![0.0; 3]);
    }

    #[test]
    fn csv_round_trip_and_rejections() {
        let d = synthetic(SourceGrid { n_polar: 2, n_azimuth: 3 }, &tau_grid(8));
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let side = d.sidecar_json().unwrap();
        assert_eq!(BackscatterData::read(buf.as_slice(), &side).unwrap(), d);
        let truncated = &buf[..buf.len() / 2];
        let cut = &truncated[..truncated.iter().rposition(|&b| b == b'\n').unwrap() + 1];
        assert!(matches!(BackscatterData::read(cut, &side), Err(Error::Parse(_))));
        let renamed = String::from_utf8(buf.clone()).unwrap().replacen("tau", "time", 1);
        assert!(matches!(BackscatterData::read(renamed.as_bytes(), &side), Err(Error::Parse(_))));
        assert!(matches!(BackscatterData::read(buf.as_slice(), "{"), Err(Error::Parse(_))));
    }

    #[test]
    fn measurement_norm_of_constant_offset() {
        let sources = SourceGrid { n_polar: 3, n_azimuth: 6 };
        let d = synthetic(sources, &tau_grid(8));
        assert_eq!(measurement_norm(&d, &d).unwrap(), 0.0);
        let mut e = d.clone();
        e.dtau.iter_mut().for_each(|v| *v += 0.5);
        let norm = measurement_norm(&d, &e).unwrap();
        assert!((norm - 0.5 * (4.0 * PI).sqrt()).abs() < 1e-12);
        let other = synthetic(sources, &tau_grid(9));
        assert!(matches!(measurement_norm(&d, &other), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn sources_must_lie_on_the_sphere() {
        assert!(solve_point_source(&bump(), &Point::new(0.0, 0.0, 0.9), &coarse()).is_err());
        assert!(sample_backscatter(&bump(), SourceGrid { n_polar: 2, n_azimuth: 2 }, &[0.5, 1.0], &coarse()).is_err());
    }

    #[test]
    fn radial_solve_on_coarse_grid() {
        let q = bump();
        let sol = solve_point_source(&q, &Point::z(), &coarse()).unwrap();
        assert!(sol.regular.trace_error < 1e-10);
        assert!(sol.transport_residual < 1e-2, "{}", sol.transport_residual);
        assert!(sol.regular.w.envelope_ok());
        // the wave reaches the support only after τ = 1 - (0.55 + 0.3)
        assert!(sol.backscatter(0.1).abs() < 1e-12);
        let data = sample_backscatter(&q, SourceGrid { n_polar: 2, n_azimuth: 4 }, &tau_grid(8), &coarse()).unwrap();
        assert!((0..data.n_sources()).all(|s| data.value(s, 5) == data.value(0, 5)));
        assert!(data.value(0, 5).abs() > 0.0);
    }
}
