use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::harmonics::{harmonic_modes, real_harmonics};
use super::jet::{radial_operators, Jet};
use crate::error::{invalid, Result};

/// JSON form of the synthetic potential families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub amplitude: f64,
    pub center_radius: f64,
    pub width: f64,
    pub margin_h: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    RadialBump,
    AngularBump,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialSymmetry {
    Radial,
    General,
}

/// Value and derivatives of a potential at a point.
#[derive(Clone, Copy, Debug, Default)]
pub struct QDerivs {
    pub value: f64,
    pub gradient: Vector3<f64>,
    pub laplacian: f64,
    pub bilaplacian: f64,
}

#[derive(Clone, Debug)]
enum Shape {
    Constant(f64),
    RadialBump { amp: f64, c: f64, w: f64 },
    AngularBump { amp: f64, c: f64, w: f64 },
    RadialSamples { centers: Vec<f64>, coeffs: Vec<f64>, ell: f64 },
    ShellHarmonics(Box<ShellHarmonics>),
    Sum(Vec<Potential>),
}

#[derive(Clone, Debug)]
struct ShellHarmonics {
    centers: Vec<f64>,
    ell: f64,
    l_max: usize,
    modes: Vec<(usize, i64)>,
    coeffs: Vec<Vec<f64>>,
}

/// Smooth potential q with compact support inside the unit ball.
#[derive(Clone, Debug)]
pub struct Potential {
    shape: Shape,
    rotation: Option<Matrix3<f64>>,
    support_radius: Option<f64>,
    margin_h: f64,
    bound: f64,
    symmetry: PotentialSymmetry,
}

/// (1 - s²)^8 on |s| < 1, zero elsewhere: a C^7 profile with moderate derivatives.
#[inline]
pub fn bump(s: f64) -> f64 {
    let u = 1.0 - s * s;
    if u <= 0.0 {
        return 0.0;
    }
    let u2 = u * u;
    let u4 = u2 * u2;
    u4 * u4
}

/// Jet in r of bump((r - c)/w).
pub fn bump_jet(r: f64, c: f64, w: f64) -> Jet {
    let s = (Jet::variable(r) - Jet::constant(c)).scale(1.0 / w);
    let u = Jet::constant(1.0) - s * s;
    if u.value() <= 0.0 {
        return Jet::zero();
    }
    let u2 = u * u;
    let u4 = u2 * u2;
    u4 * u4
}

impl Potential {
    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// Constant potential (not compactly supported; used for oracle tests).
    pub fn constant(q0: f64) -> Self {
        Potential {
            shape: Shape::Constant(q0),
            rotation: None,
            support_radius: None,
            margin_h: 0.0,
            bound: q0.abs(),
            symmetry: PotentialSymmetry::Radial,
        }
    }

    pub fn from_spec(spec: &PotentialSpec) -> Result<Self> {
        let PotentialSpec { kind, amplitude, center_radius: c, width: w, margin_h: h } = *spec;
        if !amplitude.is_finite() {
            return Err(invalid("amplitude must be finite"));
        }
        if !(w > 0.0) || !(c >= 0.0) {
            return Err(invalid("bump needs width > 0 and center_radius ≥ 0"));
        }
        if !(h > 0.0 && h < 1.0) {
            return Err(invalid("margin_h must lie in (0, 1)"));
        }
        if c + w > 1.0 - h + 1e-12 {
            return Err(invalid(format!("support radius {} exceeds 1 - h = {}", c + w, 1.0 - h)));
        }
        let (shape, symmetry) = match kind {
            PotentialKind::RadialBump => {
                if c > 0.0 && c < w {
                    return Err(invalid("radial bump needs center_radius = 0 or center_radius ≥ width"));
                }
                (Shape::RadialBump { amp: amplitude, c, w }, PotentialSymmetry::Radial)
            }
            PotentialKind::AngularBump => {
                if c < w {
                    return Err(invalid("angular bump needs center_radius ≥ width"));
                }
                (Shape::AngularBump { amp: amplitude, c, w }, PotentialSymmetry::General)
            }
        };
        Ok(Potential {
            shape,
            rotation: None,
            support_radius: Some(c + w),
            margin_h: h,
            bound: amplitude.abs(),
            symmetry,
        })
    }

    /// Radial profile Σ c_j bump((r - r_j)/ℓ), mirrored through the origin so it is even.
    pub fn radial_samples(centers: Vec<f64>, coeffs: Vec<f64>, ell: f64) -> Result<Self> {
        if centers.len() != coeffs.len() || !(ell > 0.0) {
            return Err(invalid("radial samples need matching lengths and ℓ > 0"));
        }
        if centers.windows(2).any(|p| p[1] <= p[0]) || centers.iter().any(|&r| r < 0.0) {
            return Err(invalid("radial sample centers must be ascending and nonnegative"));
        }
        let support = centers
            .iter()
            .zip(&coeffs)
            .filter(|(_, &c)| c != 0.0)
            .map(|(r, _)| r + ell)
            .fold(0.0, f64::max);
        if support >= 1.0 {
            return Err(invalid("radial samples reach the unit sphere"));
        }
        let mut p = Potential {
            shape: Shape::RadialSamples { centers, coeffs, ell },
            rotation: None,
            support_radius: Some(support.max(ell)),
            margin_h: 1.0 - support.max(ell),
            bound: 0.0,
            symmetry: PotentialSymmetry::Radial,
        };
        p.bound = p.sampled_sup(400);
        Ok(p)
    }

    /// Σ_j Σ_lm c_jlm bump((r - r_j)/ℓ) Y_lm(ω). Shells closer than ℓ to the
    /// origin keep only their l = 0 part.
    pub fn shell_harmonics(
        centers: Vec<f64>,
        ell: f64,
        l_max: usize,
        coeffs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let modes = harmonic_modes(l_max, l_max);
        if centers.len() != coeffs.len() || coeffs.iter().any(|c| c.len() != modes.len()) {
            return Err(invalid("shell harmonics: coefficient shape mismatch"));
        }
        let mut coeffs = coeffs;
        for (r, c) in centers.iter().zip(coeffs.iter_mut()) {
            if *r < ell {
                for v in c.iter_mut().skip(1) {
                    *v = 0.0;
                }
            }
        }
        let support = centers
            .iter()
            .zip(&coeffs)
            .filter(|(_, c)| c.iter().any(|&v| v != 0.0))
            .map(|(r, _)| r + ell)
            .fold(0.0, f64::max);
        if support >= 1.0 {
            return Err(invalid("shell harmonics reach the unit sphere"));
        }
        let mut p = Potential {
            shape: Shape::ShellHarmonics(Box::new(ShellHarmonics { centers, ell, l_max, modes, coeffs })),
            rotation: None,
            support_radius: Some(support.max(ell)),
            margin_h: 1.0 - support.max(ell),
            bound: 0.0,
            symmetry: PotentialSymmetry::General,
        };
        p.bound = p.sampled_sup(60);
        Ok(p)
    }

    /// Pointwise sum of potentials.
    pub fn sum(parts: Vec<Potential>) -> Result<Self> {
        if parts.is_empty() {
            return Err(invalid("sum of no potentials"));
        }
        let support_radius = parts.iter().try_fold(0.0f64, |m, p| p.support_radius.map(|r| m.max(r)));
        let symmetry = if parts.iter().all(|p| p.symmetry == PotentialSymmetry::Radial) {
            PotentialSymmetry::Radial
        } else {
            PotentialSymmetry::General
        };
        let margin_h = parts.iter().filter(|p| !p.is_zero()).map(|p| p.margin_h).fold(1.0, f64::min);
        let bound = parts.iter().map(|p| p.bound).sum();
        Ok(Potential { shape: Shape::Sum(parts), rotation: None, support_radius, margin_h, bound, symmetry })
    }

    /// q(Rᵀx): the potential rotated by R.
    pub fn rotated(&self, r: &Matrix3<f64>) -> Self {
        let mut out = self.clone();
        out.rotation = Some(match self.rotation {
            Some(r0) => r * r0,
            None => *r,
        });
        out
    }

    pub fn support_radius(&self) -> Option<f64> {
        self.support_radius
    }

    pub fn margin_h(&self) -> f64 {
        self.margin_h
    }

    /// A-priori sup bound 𝓜 (value level).
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn symmetry(&self) -> PotentialSymmetry {
        self.symmetry
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.shape, Shape::Constant(_))
    }

    pub fn is_zero(&self) -> bool {
        match &self.shape {
            Shape::Constant(q) => *q == 0.0,
            Shape::RadialBump { amp, .. } | Shape::AngularBump { amp, .. } => *amp == 0.0,
            Shape::RadialSamples { coeffs, .. } => coeffs.iter().all(|&c| c == 0.0),
            Shape::ShellHarmonics(s) => s.coeffs.iter().flatten().all(|&c| c == 0.0),
            Shape::Sum(parts) => parts.iter().all(Potential::is_zero),
        }
    }

    #[inline]
    fn local(&self, x: &Vector3<f64>) -> Vector3<f64> {
        match &self.rotation {
            Some(r) => r.transpose() * x,
            None => *x,
        }
    }

    pub fn value(&self, x: &Vector3<f64>) -> f64 {
        if let Some(s) = self.support_radius {
            if x.norm_squared() >= s * s {
                return 0.0;
            }
        }
        let y = self.local(x);
        match &self.shape {
            Shape::Constant(q) => *q,
            Shape::RadialBump { amp, c, w } => amp * bump((y.norm() - c) / w),
            Shape::AngularBump { amp, c, w } => {
                let r = y.norm();
                if r == 0.0 {
                    0.0
                } else {
                    amp * y[0] / r * bump((r - c) / w)
                }
            }
            Shape::RadialSamples { centers, coeffs, ell } => {
                let r = y.norm();
                let mut s = 0.0;
                for (rj, cj) in centers.iter().zip(coeffs) {
                    if (r - rj).abs() < *ell {
                        s += cj * bump((r - rj) / ell);
                    }
                    if r + rj < *ell {
                        s += cj * bump((r + rj) / ell);
                    }
                }
                s
            }
            Shape::ShellHarmonics(sh) => sh.value(&y),
            Shape::Sum(parts) => parts.iter().map(|p| p.value(&y)).sum(),
        }
    }

    /// Value, gradient, Laplacian and bi-Laplacian.
    pub fn derivs(&self, x: &Vector3<f64>) -> QDerivs {
        if let Some(s) = self.support_radius {
            if x.norm_squared() >= s * s {
                return QDerivs::default();
            }
        }
        let y = self.local(x);
        let mut d = match &self.shape {
            Shape::Constant(q) => QDerivs { value: *q, ..Default::default() },
            Shape::RadialBump { amp, c, w } => {
                let r = y.norm();
                radial_derivs(&bump_jet(r, *c, *w).scale(*amp), &y, r)
            }
            Shape::RadialSamples { centers, coeffs, ell } => {
                let r = y.norm();
                let mut f = Jet::zero();
                for (rj, cj) in centers.iter().zip(coeffs) {
                    if (r - rj).abs() < *ell {
                        f = f + bump_jet(r, *rj, *ell).scale(*cj);
                    }
                    if r + rj < *ell {
                        f = f + bump_jet(r, -*rj, *ell).scale(*cj);
                    }
                }
                radial_derivs(&f, &y, r)
            }
            Shape::AngularBump { amp, c, w } => {
                let r = y.norm();
                if r <= 0.0 {
                    QDerivs::default()
                } else {
                    let psi = bump_jet(r, *c, *w).scale(*amp) * Jet::variable(r).recip();
                    let (p1, p2, p3, p4) = (psi.d(1), psi.d(2), psi.d(3), psi.d(4));
                    let x1 = y[0];
                    QDerivs {
                        value: x1 * psi.d(0),
                        gradient: Vector3::new(psi.d(0), 0.0, 0.0) + y * (x1 * p1 / r),
                        laplacian: x1 * (p2 + 4.0 * p1 / r),
                        bilaplacian: x1
                            * (p4 + 8.0 * p3 / r + 8.0 * p2 / (r * r) - 8.0 * p1 / (r * r * r)),
                    }
                }
            }
            Shape::ShellHarmonics(sh) => {
                let (lap, bilap) = sh.laplacians(&y);
                QDerivs {
                    value: sh.value(&y),
                    gradient: fd_gradient(|p| sh.value(p), &y, 1e-5),
                    laplacian: lap,
                    bilaplacian: bilap,
                }
            }
            Shape::Sum(parts) => parts.iter().fold(QDerivs::default(), |acc, p| {
                let d = p.derivs(&y);
                QDerivs {
                    value: acc.value + d.value,
                    gradient: acc.gradient + d.gradient,
                    laplacian: acc.laplacian + d.laplacian,
                    bilaplacian: acc.bilaplacian + d.bilaplacian,
                }
            }),
        };
        if let Some(r) = &self.rotation {
            d.gradient = r * d.gradient;
        }
        d
    }

    fn sampled_sup(&self, n: usize) -> f64 {
        let s = self.support_radius.unwrap_or(1.0);
        let dirs = [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::new(1.0, 1.0, 1.0).normalize(),
        ];
        let mut m: f64 = 0.0;
        for i in 0..=n {
            let r = s * i as f64 / n as f64;
            for d in &dirs {
                m = m.max(self.value(&(d * r)).abs());
            }
        }
        m
    }
}

fn radial_derivs(f: &Jet, y: &Vector3<f64>, r: f64) -> QDerivs {
    let ops = radial_operators(f, r);
    let gradient = if r > 0.0 { y * (ops.d1 / r) } else { Vector3::zeros() };
    QDerivs { value: ops.value, gradient, laplacian: ops.laplacian, bilaplacian: ops.bilaplacian }
}

pub(crate) fn fd_gradient<F: Fn(&Vector3<f64>) -> f64>(f: F, x: &Vector3<f64>, h: f64) -> Vector3<f64> {
    let mut g = Vector3::zeros();
    for i in 0..3 {
        let mut e = Vector3::zeros();
        e[i] = h;
        g[i] = (8.0 * (f(&(x + e)) - f(&(x - e))) - (f(&(x + 2.0 * e)) - f(&(x - 2.0 * e)))) / (12.0 * h);
    }
    g
}

impl ShellHarmonics {
    fn value(&self, y: &Vector3<f64>) -> f64 {
        let r = y.norm();
        let (theta, phi) = angles(y);
        let ylm = real_harmonics(&self.modes, self.l_max, theta, phi);
        let mut s = 0.0;
        for (rj, cj) in self.centers.iter().zip(&self.coeffs) {
            let near = (r - rj).abs() < self.ell;
            let mirror = r + rj < self.ell;
            if !near && !mirror {
                continue;
            }
            let b = if near { bump((r - rj) / self.ell) } else { 0.0 };
            let bm = if mirror { bump((r + rj) / self.ell) } else { 0.0 };
            s += cj[0] * (b + bm) * ylm[0];
            for (c, yv) in cj.iter().zip(&ylm).skip(1) {
                s += c * b * yv;
            }
        }
        s
    }

    fn laplacians(&self, y: &Vector3<f64>) -> (f64, f64) {
        let r = y.norm();
        let (theta, phi) = angles(y);
        let ylm = real_harmonics(&self.modes, self.l_max, theta, phi);
        let mut lap = 0.0;
        let mut bilap = 0.0;
        for (rj, cj) in self.centers.iter().zip(&self.coeffs) {
            let near = (r - rj).abs() < self.ell;
            let mirror = r + rj < self.ell;
            if !near && !mirror {
                continue;
            }
            let f = if near { bump_jet(r, *rj, self.ell) } else { Jet::zero() };
            let fm = if mirror { bump_jet(r, -*rj, self.ell) } else { Jet::zero() };
            let even = radial_operators(&(f + fm), r);
            lap += cj[0] * even.laplacian * ylm[0];
            bilap += cj[0] * even.bilaplacian * ylm[0];
            if r < 1e-9 {
                continue;
            }
            for ((l, _), (c, yv)) in self.modes.iter().zip(cj.iter().zip(&ylm)).skip(1) {
                if *c == 0.0 {
                    continue;
                }
                let ll = (l * (l + 1)) as f64;
                let inv = Jet::variable(r).recip();
                let op = |g: Jet| g.derivative().derivative() + (g.derivative() * inv).scale(2.0) - (g * inv * inv).scale(ll);
                let once = op(f);
                let twice = op(once);
                lap += c * once.value() * yv;
                bilap += c * twice.value() * yv;
            }
        }
        (lap, bilap)
    }
}

pub(crate) fn angles(y: &Vector3<f64>) -> (f64, f64) {
    let r = y.norm();
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let theta = (y[2] / r).clamp(-1.0, 1.0).acos();
    let phi = y[1].atan2(y[0]);
    (theta, if phi < 0.0 { phi + 2.0 * std::f64::consts::PI } else { phi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::laplacian;

    fn spec(kind: PotentialKind) -> PotentialSpec {
        PotentialSpec { kind, amplitude: 1.5, center_radius: 0.45, width: 0.3, margin_h: 0.2 }
    }

    #[test]
    fn support_is_exact_zero_outside() {
        for kind in [PotentialKind::RadialBump, PotentialKind::AngularBump] {
            let q = Potential::from_spec(&spec(kind)).unwrap();
            for i in 0..50 {
                let d = Vector3::new((i as f64).sin(), (i as f64 * 1.3).cos(), 0.3).normalize();
                assert_eq!(q.value(&(d * 0.9)), 0.0);
                assert_eq!(q.value(&(d * 1.4)), 0.0);
            }
        }
    }

    #[test]
    fn rejects_support_past_margin() {
        let mut s = spec(PotentialKind::RadialBump);
        s.margin_h = 0.3;
        assert!(Potential::from_spec(&s).is_err());
        s.margin_h = 0.2;
        s.center_radius = 0.1;
        assert!(Potential::from_spec(&s).is_err());
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        for kind in [PotentialKind::RadialBump, PotentialKind::AngularBump] {
            let q = Potential::from_spec(&spec(kind)).unwrap();
            let x = Vector3::new(0.21, -0.33, 0.18);
            let d = q.derivs(&x);
            let lap = laplacian(|p: &Vector3<f64>| q.value(p), &x, 2e-3);
            assert!((d.laplacian - lap).abs() < 1e-5 * (1.0 + lap.abs()), "{kind:?} {} {lap}", d.laplacian);
            let bilap = laplacian(|p: &Vector3<f64>| q.derivs(p).laplacian, &x, 2e-3);
            assert!((d.bilaplacian - bilap).abs() < 1e-4 * (1.0 + bilap.abs()), "{kind:?} {} {bilap}", d.bilaplacian);
            let g = fd_gradient(|p| q.value(p), &x, 1e-4);
            assert!((d.gradient - g).norm() < 1e-7);
        }
    }

    #[test]
    fn radial_samples_are_smooth_at_origin() {
        let q = Potential::radial_samples(vec![0.0, 0.05, 0.1], vec![1.0, 0.5, 0.2], 0.1).unwrap();
        let x = Vector3::new(1e-3, 0.0, 0.0);
        let lap = laplacian(|p: &Vector3<f64>| q.value(p), &x, 1e-3);
        assert!((q.derivs(&x).laplacian - lap).abs() < 1e-3 * lap.abs().max(1.0));
    }

    #[test]
    fn shell_harmonics_laplacian() {
        let modes = harmonic_modes(2, 2).len();
        let mut c = vec![0.0; modes];
        c[0] = 1.0;
        c[3] = 0.7;
        c[6] = -0.4;
        let q = Potential::shell_harmonics(vec![0.5], 0.2, 2, vec![c]).unwrap();
        let x = Vector3::new(0.3, 0.25, -0.2);
        let d = q.derivs(&x);
        let lap = laplacian(|p: &Vector3<f64>| q.value(p), &x, 1e-3);
        assert!((d.laplacian - lap).abs() < 1e-5 * lap.abs().max(1.0), "{} {lap}", d.laplacian);
        let bilap = laplacian(|p: &Vector3<f64>| q.derivs(p).laplacian, &x, 2e-3);
        assert!((d.bilaplacian - bilap).abs() < 1e-3 * bilap.abs().max(1.0), "{} {bilap}", d.bilaplacian);
    }

    #[test]
    fn sums_add_values_and_derivatives() {
        let a = Potential::from_spec(&spec(PotentialKind::RadialBump)).unwrap();
        let b = Potential::from_spec(&spec(PotentialKind::AngularBump)).unwrap();
        let s = Potential::sum(vec![a.clone(), b.clone()]).unwrap();
        let x = Vector3::new(0.3, -0.2, 0.25);
        assert!((s.value(&x) - a.value(&x) - b.value(&x)).abs() < 1e-15);
        let (ds, da, db) = (s.derivs(&x), a.derivs(&x), b.derivs(&x));
        assert!((ds.laplacian - da.laplacian - db.laplacian).abs() < 1e-12);
        assert_eq!(s.symmetry(), PotentialSymmetry::General);
        assert_eq!(s.support_radius(), Some(0.75));
        assert!(Potential::sum(vec![]).is_err());
    }

    #[test]
    fn rotation_moves_the_angular_factor() {
        let q = Potential::from_spec(&spec(PotentialKind::AngularBump)).unwrap();
        let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), 0.5 * std::f64::consts::PI);
        let qr = q.rotated(rot.matrix());
        let x = Vector3::new(0.4, 0.1, 0.05);
        assert!((qr.value(&(rot * x)) - q.value(&x)).abs() < 1e-14);
        let g = qr.derivs(&(rot * x)).gradient;
        assert!((g - rot * q.derivs(&x).gradient).norm() < 1e-12);
    }
}
