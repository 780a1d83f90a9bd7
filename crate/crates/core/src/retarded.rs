//! The retarded potential K, its one-dimensional Lorentz form and the
//! Neumann series w = Σ w_m with w_0 = KF, w_{m+1} = K(q w_m).

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::field::cone::Cone;
use crate::field::quad::{clip_interval, GaussRule, Quadric};
use crate::field::{perpendicular_basis, ApexFrame, GridLayout, Point, Potential, SpaceTimeField, SpatialTable};
use crate::progressive::ResidualSource;

/// Where a source may be nonzero, in apex-local coordinates.
#[derive(Clone, Copy, Debug, Default)]
pub struct SupportHint {
    pub ball: Option<(Point, f64)>,
    pub cone: Option<Cone>,
}

/// A space-time function f(z, s) in apex-local coordinates, zero for s ≤ |z|.
pub trait Source: Sync {
    fn eval(&self, z: &Point, s: f64) -> f64;

    fn support(&self) -> SupportHint {
        SupportHint::default()
    }
}

/// Closure sources; the closure is only called inside the forward cone.
pub struct FnSource<F>(pub F);

impl<F: Fn(&Point, f64) -> f64 + Sync> Source for FnSource<F> {
    fn eval(&self, z: &Point, s: f64) -> f64 {
        if s <= z.norm() {
            return 0.0;
        }
        (self.0)(z, s)
    }
}

/// Node counts of the K quadrature: polar (in the reciprocal variable),
/// azimuthal and radial along each ray.
#[derive(Clone, Debug)]
pub struct KRule {
    pub n_polar: usize,
    pub n_azimuth: usize,
    pub n_radial: usize,
    polar: GaussRule,
    radial: GaussRule,
}

impl KRule {
    pub fn new(n_polar: usize, n_azimuth: usize, n_radial: usize) -> Self {
        KRule { n_polar, n_azimuth, n_radial, polar: GaussRule::new(n_polar), radial: GaussRule::new(n_radial) }
    }

    /// Rule with `resolution` nodes per axis.
    pub fn uniform(resolution: usize) -> Self {
        Self::new(resolution, resolution, resolution)
    }
}

impl Default for KRule {
    fn default() -> Self {
        Self::new(12, 12, 8)
    }
}


fn ray_constraints(hint: &SupportHint, x: &Point, w: &Point, scale: f64, out: &mut [Quadric; 3]) -> usize {
    let mut n = 0;
    if let Some((c, r)) = hint.ball {
        let d = x - c;
        out[n] = Quadric { a: -scale * scale, b: 2.0 * scale * w.dot(&d), c: r * r - d.norm_squared() };
        n += 1;
    }
    if let Some(cone) = hint.cone {
        if cone.cos_half_angle >= 0.0 {
            let k2 = cone.cos_half_angle * cone.cos_half_angle;
            let xn = x.dot(&cone.axis);
            let wn = w.dot(&cone.axis);
            out[n] = Quadric { a: 0.0, b: -scale * wn, c: xn };
            out[n + 1] = Quadric {
                a: scale * scale * (wn * wn - k2),
                b: scale * (-2.0 * xn * wn + 2.0 * k2 * x.dot(w)),
                c: xn * xn - k2 * x.norm_squared(),
            };
            n += 2;
        }
    }
    n
}

/// ∫₀¹ u f(x - R u ω, t - R u) du split on the support of the source.
#[inline]
fn ray_integral<S: Source + ?Sized>(src: &S, hint: &SupportHint, rule: &KRule, x: &Point, t: f64, w: &Point, r: f64) -> f64 {
    let mut cons = [Quadric { a: 0.0, b: 0.0, c: 0.0 }; 3];
    let nc = ray_constraints(hint, x, w, r, &mut cons);
    let segs = clip_interval(1.0, &cons[..nc]);
    let mut s = 0.0;
    for &(lo, hi) in segs.iter() {
        let h = hi - lo;
        for (u0, wu) in rule.radial.nodes.iter().zip(&rule.radial.weights) {
            let u = lo + h * u0;
            let rho = r * u;
            s += wu * h * u * src.eval(&(x - w * rho), t - rho);
        }
    }
    s
}

/// Kf(x,t) = ∫ f(x-y, t-|y|)/(4π|y|) dy, in spherical coordinates about the
/// singular point; the ellipsoid |y| + |x-y| ≤ t is mapped to the unit ball.
pub fn k_apply<S: Source + ?Sized>(src: &S, x: &Point, t: f64, rule: &KRule) -> f64 {
    let r = x.norm();
    if t <= r {
        return 0.0;
    }
    let hint = src.support();
    let t2 = t * t - r * r;
    let dphi = 2.0 * PI / rule.n_azimuth as f64;
    let mut total = 0.0;
    if r <= 1e-8 * t {
        // rays from the apex reach the source only inside its support cone
        let (axis, mu_lo) = match hint.cone {
            Some(c) if c.cos_half_angle >= 0.0 && r == 0.0 => (-c.axis, c.cos_half_angle),
            _ => (Vector3::z(), -1.0),
        };
        let (e1, e2) = perpendicular_basis(&axis);
        let span = 1.0 - mu_lo;
        for (m0, wm) in rule.polar.nodes.iter().zip(&rule.polar.weights) {
            let mu = mu_lo + span * m0;
            let sn = (1.0 - mu * mu).max(0.0).sqrt();
            for k in 0..rule.n_azimuth {
                let phi = (k as f64 + 0.5) * dphi;
                let w = e1 * (sn * phi.cos()) + e2 * (sn * phi.sin()) + axis * mu;
                let big_r = t2 / (2.0 * (t - x.dot(&w)));
                total += span * wm * dphi * big_r * big_r * ray_integral(src, &hint, rule, x, t, &w, big_r);
            }
        }
        return total / (4.0 * PI);
    }
    let ex = x / r;
    let (e1, e2) = perpendicular_basis(&ex);
    let v0 = 1.0 / (t + r);
    let v1 = 1.0 / (t - r);
    for (s0, wv) in rule.polar.nodes.iter().zip(&rule.polar.weights) {
        let v = v0 + (v1 - v0) * s0;
        let mu = ((t - 1.0 / v) / r).clamp(-1.0, 1.0);
        let sn = (1.0 - mu * mu).max(0.0).sqrt();
        let big_r = 0.5 * t2 * v;
        for k in 0..rule.n_azimuth {
            let phi = (k as f64 + 0.5) * dphi;
            let w = e1 * (sn * phi.cos()) + e2 * (sn * phi.sin()) + ex * mu;
            total += wv * (v1 - v0) * dphi * ray_integral(src, &hint, rule, x, t, &w, big_r);
        }
    }
    total * t2 * t2 / (4.0 * r) / (4.0 * PI)
}

/// K applied to a closure source at apex 0.
pub fn k_apply_direct<F: Fn(&Point, f64) -> f64 + Sync>(f: F, x: &Point, t: f64, resolution: usize) -> f64 {
    k_apply(&FnSource(f), x, t, &KRule::uniform(resolution))
}

/// Radial profile used by the Lorentz form: maps (T, r) to the argument of p.
pub type LorentzArg = fn(f64, f64) -> f64;

/// T² - 2Tr, the Lorentz invariant along the collapsed radial variable.
pub fn lorentz_invariant(big_t: f64, r: f64) -> f64 {
    big_t * big_t - 2.0 * big_t * r
}

/// K[p(s² - |y|²)] as ∫₀^{T/2} p(T² - 2Tr) r dr with T = √(t² - |x|²).
pub fn k_apply_lorentz<P: Fn(f64) -> f64>(p: P, x: &Point, t: f64, resolution: usize) -> Result<f64> {
    k_apply_lorentz_with(p, x, t, resolution, lorentz_invariant)
}

pub fn k_apply_lorentz_with<P: Fn(f64) -> f64>(p: P, x: &Point, t: f64, resolution: usize, arg: LorentzArg) -> Result<f64> {
    let r = x.norm();
    if t < r {
        return Err(invalid("Lorentz form needs t ≥ |x|"));
    }
    let big_t = (t * t - r * r).sqrt();
    let rule = GaussRule::new(resolution.max(1));
    Ok(rule.integrate(0.0, 0.5 * big_t, |s| p(arg(big_t, s)) * s))
}

/// C_m = 1/(4^{m+1}(m+1)!(m+2)!), the order-0 specialization of the Neumann envelope.
pub fn c_m(m: usize) -> f64 {
    let mut f = 1.0 / 4f64.powi(m as i32 + 1);
    for k in 1..=m + 1 {
        f /= k as f64;
    }
    for k in 1..=m + 2 {
        f /= k as f64;
    }
    f
}

/// C_m 𝓜^m ‖F‖ z^{m+1}.
pub fn envelope(m: usize, q_bound: f64, f_norm: f64, z: f64) -> f64 {
    c_m(m) * q_bound.powi(m as i32) * f_norm * z.powi(m as i32 + 1)
}

/// Σ_{m>levels} of the envelope at z = horizon².
pub fn tail_bound(levels: usize, q_bound: f64, f_norm: f64, horizon: f64) -> f64 {
    let z = horizon * horizon;
    (levels + 1..levels + 80).map(|m| envelope(m, q_bound, f_norm, z)).sum()
}

#[derive(Clone, Debug)]
pub struct NeumannOptions {
    /// Fixed truncation order; chosen from the tail bound when absent.
    pub levels: Option<usize>,
    /// Tolerance for the tail bound, relative to the level-0 envelope ‖F‖H²/8.
    pub rel_tol: f64,
    pub max_levels: usize,
    pub rule: KRule,
}

impl Default for NeumannOptions {
    fn default() -> Self {
        NeumannOptions { levels: None, rel_tol: 1e-4, max_levels: 16, rule: KRule::default() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelDiagnostics {
    pub level: usize,
    pub sup: f64,
    /// largest |w_m|/(C_m 𝓜^m ‖F‖ z^{m+1}) over determined nodes
    pub envelope_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct NeumannSolution {
    pub terms: Vec<SpaceTimeField>,
    pub sum: SpaceTimeField,
    pub levels: usize,
    pub tail_bound: f64,
    pub tolerance: f64,
    pub f_norm: f64,
    pub q_bound: f64,
    pub diagnostics: Vec<LevelDiagnostics>,
}

impl NeumannSolution {
    pub fn envelope_ok(&self) -> bool {
        self.diagnostics.iter().all(|d| d.envelope_ratio <= 1.0)
    }

    pub fn diagnostics_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.diagnostics)?)
    }
}

/// Tabulated source q·w on the grid, interpolated in retarded coordinates.
struct GridSource<'a> {
    field: &'a SpaceTimeField,
    hint: SupportHint,
}

impl Source for GridSource<'_> {
    #[inline]
    fn eval(&self, z: &Point, s: f64) -> f64 {
        self.field.interp(z, s)
    }

    fn support(&self) -> SupportHint {
        self.hint
    }
}

/// Level-0 source in kernel form: K[F] = K[(q+Δ)a_0 + q(v-g)] - (v-g), which
/// carries two derivatives of the data instead of 2m+2.
struct KernelForm<'a> {
    f: &'a ResidualSource,
    q: &'a Potential,
    frame: &'a ApexFrame,
    hint: SupportHint,
}

impl Source for KernelForm<'_> {
    #[inline]
    fn eval(&self, z: &Point, s: f64) -> f64 {
        let qz = self.q.value(&self.frame.to_global(z));
        self.f.kernel_form_local(z, s, qz)
    }

    fn support(&self) -> SupportHint {
        self.hint
    }
}

fn apply_on_grid<S: Source>(src: &S, grid: &Arc<GridLayout>, limit: f64, rule: &KRule) -> SpaceTimeField {
    let sl = &grid.spatial;
    let nd = sl.n_dirs();
    let steps = grid.time.steps;
    let nodes: Vec<(usize, usize)> = (0..=sl.shells).flat_map(|i| (0..nd).map(move |j| (i, j))).collect();
    let chunks: Vec<Vec<f64>> = nodes
        .par_iter()
        .map(|&(i, j)| {
            let x = sl.node_local(i, j);
            let rho = sl.rho(i);
            (0..=steps)
                .map(|l| {
                    let sigma = grid.time.sigma(l);
                    if l == 0 || sigma + 2.0 * rho > limit + 1e-12 {
                        0.0
                    } else {
                        k_apply(src, &x, rho + sigma, rule)
                    }
                })
                .collect()
        })
        .collect();
    let mut out = SpaceTimeField::zeros(grid.clone());
    out.values = chunks.concat();
    out.nu_limit = limit;
    out
}

/// Stencil reach of one interpolation in σ + 2ρ.
fn level_margin(grid: &GridLayout) -> f64 {
    2.0 * grid.time.dt() + 4.0 * grid.spatial.dr()
}

/// Neumann series for (∂_t² - Δ - q)w = F with zero data before the cone.
pub fn neumann_solve(q: &Potential, f: &ResidualSource, grid: Arc<GridLayout>, opts: &NeumannOptions) -> Result<NeumannSolution> {
    let sl = &grid.spatial;
    if f.fm.layout.frame != sl.frame {
        return Err(Error::GridMismatch("source and grid use different apex frames".into()));
    }
    let horizon = grid.horizon;
    let f_norm = f.sup(horizon);
    let q_bound = if q.is_zero() { 0.0 } else { q.bound() };
    let tolerance = opts.rel_tol * f_norm * horizon * horizon / 8.0;
    let levels = match opts.levels {
        Some(m) => {
            let b = tail_bound(m, q_bound, f_norm, horizon);
            if b > tolerance {
                return Err(Error::TruncationInsufficient { bound: b, tol: tolerance, levels: m });
            }
            m
        }
        None => {
            let m = (0..=opts.max_levels).find(|&m| tail_bound(m, q_bound, f_norm, horizon) <= tolerance);
            match m {
                Some(m) => m,
                None => {
                    return Err(Error::TruncationInsufficient {
                        bound: tail_bound(opts.max_levels, q_bound, f_norm, horizon),
                        tol: tolerance,
                        levels: opts.max_levels,
                    })
                }
            }
        }
    };
    let levels = if q_bound == 0.0 || f_norm == 0.0 { 0 } else { levels };
    let margin = level_margin(&grid);
    let limit = |m: usize| horizon + margin * (levels - m) as f64;

    let local_axis = |c: Cone| Cone { axis: sl.frame.axes.tr_mul(&c.axis), cos_half_angle: c.cos_half_angle };
    let f_hint = SupportHint { ball: None, cone: f.support.map(local_axis) };
    let q_hint = SupportHint { ball: q.support_radius().map(|r| (sl.frame.to_local(&Point::zeros()), r)), cone: None };

    let mut w0 = if f_norm == 0.0 {
        let mut z = SpaceTimeField::zeros(grid.clone());
        z.nu_limit = limit(0);
        z
    } else {
        apply_on_grid(&KernelForm { f, q, frame: &sl.frame, hint: f_hint }, &grid, limit(0), &opts.rule)
    };
    let stride = grid.time.steps + 1;
    for (k, v) in w0.values.iter_mut().enumerate() {
        let (node, l) = (k / stride, k % stride);
        let (i, j) = (node / sl.n_dirs(), node % sl.n_dirs());
        let sigma = grid.time.sigma(l);
        if l > 0 && sigma + 2.0 * sl.rho(i) <= limit(0) + 1e-12 {
            *v -= f.correction_local(&sl.node_local(i, j), sl.rho(i) + sigma);
        }
    }
    let mut terms = vec![w0];
    if levels > 0 {
        let qt = SpatialTable::from_fn(Arc::new(sl.clone()), |i, j| q.value(&sl.node_global(i, j)));
        for m in 1..=levels {
            let prev = &terms[m - 1];
            let mut prod = prev.clone();
            for (k, v) in prod.values.iter_mut().enumerate() {
                *v *= qt.values[k / stride];
            }
            let next = apply_on_grid(&GridSource { field: &prod, hint: q_hint }, &grid, limit(m), &opts.rule);
            terms.push(next);
        }
    }

    let mut sum = SpaceTimeField::zeros(grid.clone());
    for t in &terms {
        for (s, v) in sum.values.iter_mut().zip(&t.values) {
            *s += v;
        }
    }
    sum.nu_limit = limit(levels);

    let diagnostics = terms
        .iter()
        .enumerate()
        .map(|(m, t)| {
            let mut ratio: f64 = 0.0;
            for i in 0..=sl.shells {
                let rho = sl.rho(i);
                for j in 0..sl.n_dirs() {
                    for l in 1..=grid.time.steps {
                        let sigma = grid.time.sigma(l);
                        if !grid.determined(rho, sigma) {
                            continue;
                        }
                        let v = t.at(i, j, l).abs();
                        if v == 0.0 {
                            continue;
                        }
                        let b = envelope(m, q_bound, f_norm, sigma * (sigma + 2.0 * rho));
                        ratio = ratio.max(if b > 0.0 { v / b } else { f64::INFINITY });
                    }
                }
            }
            LevelDiagnostics { level: m, sup: t.sup_determined(), envelope_ratio: ratio }
        })
        .collect();

    Ok(NeumannSolution {
        tail_bound: tail_bound(levels, q_bound, f_norm, horizon),
        terms,
        sum,
        levels,
        tolerance,
        f_norm,
        q_bound,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn targets() -> Vec<(Point, f64)> {
        vec![
            (Point::new(0.1, -0.2, 0.3), 0.9),
            (Point::zeros(), 1.3),
            (Point::new(0.5, 0.0, 0.0), 0.5000001),
            (Point::new(-0.3, 0.4, 0.0), 1.7),
        ]
    }

    #[test]
    fn closed_form_values() {
        for (x, t) in targets() {
            let z = t * t - x.norm_squared();
            let a = k_apply_direct(|_, _| 1.0, &x, t, 16);
            assert!((a - z / 8.0).abs() < 1e-12, "{a} {}", z / 8.0);
            let b = k_apply_direct(|y: &Point, s| s * s - y.norm_squared(), &x, t, 16);
            assert!((b - z * z / 24.0).abs() < 1e-12);
            assert!((k_apply_lorentz(|z| z, &x, t, 8).unwrap() - z * z / 24.0).abs() < 1e-13);
        }
        assert_eq!(k_apply_direct(|_, _| 1.0, &Point::new(1.0, 0.0, 0.0), 0.5, 8), 0.0);
        assert!(k_apply_lorentz(|_| 1.0, &Point::new(1.0, 0.0, 0.0), 0.5, 8).is_err());
    }

    #[test]
    fn cm_values() {
        assert!((c_m(0) - 1.0 / 8.0).abs() < 1e-16);
        assert!((c_m(1) - 1.0 / 192.0).abs() < 1e-16);
        let tail: f64 = (3..40).map(c_m).sum();
        assert!(tail < 1e-5);
    }

    #[test]
    fn ball_clipping_matches_unclipped() {
        let c = Point::new(0.1, 0.2, -0.1);
        let bump = move |y: &Point, s: f64| {
            let d = (y - c).norm_squared();
            if d < 0.09 {
                (1.0 - d / 0.09).powi(4) * (s * s - y.norm_squared())
            } else {
                0.0
            }
        };
        struct Clipped<F>(F, Point);
        impl<F: Fn(&Point, f64) -> f64 + Sync> Source for Clipped<F> {
            fn eval(&self, z: &Point, s: f64) -> f64 {
                if s <= z.norm() {
                    0.0
                } else {
                    (self.0)(z, s)
                }
            }
            fn support(&self) -> SupportHint {
                SupportHint { ball: Some((self.1, 0.3)), cone: None }
            }
        }
        let x = Point::new(0.2, 0.1, 0.0);
        let fine = k_apply(&FnSource(bump), &x, 1.2, &KRule::new(96, 96, 96));
        let clipped = k_apply(&Clipped(bump, c), &x, 1.2, &KRule::new(48, 48, 8));
        assert!((fine - clipped).abs() < 1e-4 * fine.abs(), "{fine} {clipped}");
    }
}
