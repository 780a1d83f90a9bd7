//! Boundary identity for two potentials, the spherical-mean differentiation
//! formula, angular control and layer-stripping reconstruction.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::harmonics::{harmonic_modes, real_harmonics};
use crate::field::potential::bump;
use crate::field::quad::GaussRule;
use crate::field::{perpendicular_basis, Point, Potential, PotentialSymmetry, SphereGrid};
use crate::point_source::{sample_backscatter, solve_point_source, BackscatterData, PointSourceSolution, SolverConfig};

/// k(x, τ, a) assembled from the regular parts of two point-source solutions
/// with the same apex; a missing second solution stands for q₂ = 0.
pub struct BoundaryKernel<'a> {
    sol1: &'a PointSourceSolution,
    sol2: Option<&'a PointSourceSolution>,
    rule: GaussRule,
}

impl<'a> BoundaryKernel<'a> {
    pub fn new(sol1: &'a PointSourceSolution, sol2: Option<&'a PointSourceSolution>, t_nodes: usize) -> Result<Self> {
        if let Some(s2) = sol2 {
            if (s2.apex - sol1.apex).norm() > 1e-12 {
                return Err(Error::GridMismatch("kernel solutions have different apices".into()));
            }
        }
        Ok(BoundaryKernel { sol1, sol2, rule: GaussRule::new(t_nodes) })
    }

    pub fn apex(&self) -> Point {
        self.sol1.apex
    }

    fn r2(&self, x: &Point, t: f64) -> f64 {
        self.sol2.map_or(0.0, |s| s.regular_at(x, t))
    }

    pub fn eval(&self, x: &Point, tau: f64) -> Result<f64> {
        let rho = (x - self.sol1.apex).norm();
        if rho == 0.0 {
            return Err(Error::ApexPoint);
        }
        if rho > tau * (1.0 + 1e-12) {
            return Err(invalid(format!("|x - a| = {rho} exceeds τ = {tau}")));
        }
        Ok(self.value(x, rho.min(tau), tau))
    }

    fn value(&self, x: &Point, rho: f64, tau: f64) -> f64 {
        let t0 = 2.0 * tau - rho;
        let first = (self.sol1.regular_at(x, t0) + self.r2(x, t0)) / (4.0 * PI * rho);
        let second = match self.sol2 {
            Some(_) if t0 > rho => self.rule.integrate(rho, t0, |t| self.sol1.regular_at(x, 2.0 * tau - t) * self.r2(x, t)),
            _ => 0.0,
        };
        first + second
    }
}

pub fn boundary_kernel(sol1: &PointSourceSolution, sol2: Option<&PointSourceSolution>, x: &Point, tau: f64) -> Result<f64> {
    BoundaryKernel::new(sol1, sol2, 16)?.eval(x, tau)
}

/// Node counts for the volume and sphere integrals of the boundary identity.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct IdentityQuadrature {
    pub n_rho: usize,
    pub n_polar: usize,
    pub n_azimuth: usize,
    pub n_time: usize,
}

impl Default for IdentityQuadrature {
    fn default() -> Self {
        IdentityQuadrature { n_rho: 24, n_polar: 24, n_azimuth: 16, n_time: 16 }
    }
}

/// Both sides of the boundary identity at one (a, τ).
#[derive(Clone, Debug, Serialize)]
pub struct IdentityCheck {
    pub tau: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub linear: f64,
    pub kernel_term: f64,
}

impl IdentityCheck {
    /// |lhs - rhs| / max(|lhs|, scale).
    pub fn defect(&self, scale: f64) -> f64 {
        (self.lhs - self.rhs).abs() / self.lhs.abs().max(scale)
    }
}

/// Integral of f over {ω : ω·e ≥ μ_lo} on the sphere |x - a| = ρ, Gauss in ω·e
/// and uniform in azimuth.
pub(crate) fn cap_integral<F: Fn(&Point) -> f64>(a: &Point, e: &Point, rho: f64, mu_lo: f64, n_polar: usize, n_azimuth: usize, f: F) -> f64 {
    let (e1, e2) = perpendicular_basis(e);
    let mr = GaussRule::new(n_polar);
    let dphi = 2.0 * PI / n_azimuth as f64;
    let m0 = mu_lo.clamp(-1.0, 1.0);
    let span = 1.0 - m0;
    let mut s = 0.0;
    for (mt, mw) in mr.nodes.iter().zip(&mr.weights) {
        let mu = m0 + span * mt;
        let sn = (1.0 - mu * mu).max(0.0).sqrt();
        for k in 0..n_azimuth {
            let phi = (k as f64 + 0.5) * dphi;
            let w = e1 * (sn * phi.cos()) + e2 * (sn * phi.sin()) + e * mu;
            s += mw * span * dphi * f(&(a + w * rho));
        }
    }
    s * rho * rho
}

/// Integral over {x = a + ρω : lo ≤ ρ ≤ hi, ω·e ≥ μ_lo(ρ)}.
pub(crate) fn shell_cap_integral<M, F>(a: &Point, e: &Point, lo: f64, hi: f64, mu_lo: M, quad: &IdentityQuadrature, azimuthal: bool, f: F) -> f64
where
    M: Fn(f64) -> f64 + Sync,
    F: Fn(&Point, f64) -> f64 + Sync,
{
    if hi <= lo {
        return 0.0;
    }
    let rr = GaussRule::new(quad.n_rho);
    let n_az = if azimuthal { quad.n_azimuth } else { 1 };
    let h = hi - lo;
    (0..rr.len())
        .into_par_iter()
        .map(|i| {
            let rho = lo + h * rr.nodes[i];
            rr.weights[i] * h * cap_integral(a, e, rho, mu_lo(rho), quad.n_polar, n_az, |x| f(x, rho))
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Lower bound of ω·(-a) for which a + ρω lies inside the ball of radius R (|a| = 1).
pub(crate) fn ball_mu(rho: f64, radius: f64) -> f64 {
    (1.0 + rho * rho - radius * radius) / (2.0 * rho)
}

/// Both sides of the boundary identity from existing solutions (q₂ = 0 when `sol2` is absent).
pub fn boundary_identity_from(
    q1: &Potential,
    q2: &Potential,
    sol1: &PointSourceSolution,
    sol2: Option<&PointSourceSolution>,
    tau: f64,
    quad: &IdentityQuadrature,
) -> Result<IdentityCheck> {
    let a = sol1.apex;
    if ((a.norm() - 1.0).abs()) > 1e-12 {
        return Err(invalid("apex must lie on the unit sphere"));
    }
    let kernel = BoundaryKernel::new(sol1, sol2, quad.n_time)?;
    let lhs = sol1.backscatter(tau) - sol2.map_or(0.0, |s| s.backscatter(tau));
    let diff = |x: &Point| q1.value(x) - q2.value(x);
    let radius = match (q1.support_radius(), q2.support_radius()) {
        (Some(r1), Some(r2)) => r1.max(r2),
        _ => 1.0,
    };
    let e = -a;
    let azimuthal = q1.symmetry() == PotentialSymmetry::General || q2.symmetry() == PotentialSymmetry::General;
    let n_az = if azimuthal { quad.n_azimuth } else { 1 };
    let linear = cap_integral(&a, &e, tau, ball_mu(tau, radius), quad.n_polar, n_az, diff) / (32.0 * PI * PI * tau * tau);
    let lo = (1.0 - radius).max(0.0);
    let kernel_term = shell_cap_integral(&a, &e, lo, tau, |rho| ball_mu(rho, radius), quad, azimuthal, |x, rho| {
        let d = diff(x);
        if d == 0.0 {
            0.0
        } else {
            d * kernel.value(x, rho, tau)
        }
    });
    Ok(IdentityCheck { tau, lhs, rhs: linear + kernel_term, linear, kernel_term })
}

/// Solve both point-source problems at `a` and compare the two sides of the
/// boundary identity at every τ.
pub fn boundary_identity_check(
    q1: &Potential,
    q2: &Potential,
    a: &Point,
    taus: &[f64],
    cfg: &SolverConfig,
    quad: &IdentityQuadrature,
) -> Result<Vec<IdentityCheck>> {
    let h = q1.margin_h().min(q2.margin_h());
    if taus.iter().any(|&t| !(t >= h && t <= 1.0)) {
        return Err(invalid(format!("τ must lie in [h, 1] = [{h}, 1]")));
    }
    let sol1 = solve_point_source(q1, a, cfg)?;
    let sol2 = if q2.is_zero() { None } else { Some(solve_point_source(q2, a, cfg)?) };
    taus.iter().map(|&t| boundary_identity_from(q1, q2, &sol1, sol2.as_ref(), t, quad)).collect()
}

/// Sampled ∫_{|x-a|=τ} |k|² dσ and ∫_{h≤|x-a|≤τ} |∂_τ(τ k)|² dx.
pub fn kernel_norms(kernel: &BoundaryKernel, tau: f64, h: f64, quad: &IdentityQuadrature) -> Result<(f64, f64)> {
    let a = kernel.apex();
    let e = -a;
    let sphere = cap_integral(&a, &e, tau, -1.0, quad.n_polar, quad.n_azimuth, |x| kernel.value(x, tau, tau).powi(2));
    let dt = 1e-3 * tau;
    let volume = shell_cap_integral(&a, &e, h, tau - 2.0 * dt, |_| -1.0, quad, true, |x, _| {
        let rho = (x - a).norm();
        let f = |s: f64| s * kernel.value(x, rho, s);
        let d = (8.0 * (f(tau + dt) - f(tau - dt)) - (f(tau + 2.0 * dt) - f(tau - 2.0 * dt))) / (12.0 * dt);
        d * d
    });
    Ok((sphere, volume))
}

/// Node counts for spherical means about a boundary point.
const MEAN_POLAR: usize = 96;
const MEAN_AZIMUTH: usize = 48;

/// ∫ f dσ over the sphere |x - a| = τ; Q vanishes outside the unit ball, so
/// only ω·(-a) ≥ τ/2 contributes. `weight_singular` switches to the variable
/// v with ω·(-a) = 1 - v², which absorbs a (1 - ω·(-a))^{-1/2} factor.
fn boundary_sphere_integral<F: Fn(&Point, f64) -> f64>(f: F, a: &Point, tau: f64, radial: bool) -> f64 {
    let e = -a.normalize();
    let (e1, e2) = perpendicular_basis(&e);
    let vr = GaussRule::new(MEAN_POLAR);
    let n_az = if radial { 1 } else { MEAN_AZIMUTH };
    let dphi = 2.0 * PI / n_az as f64;
    let vmax = (1.0 - 0.5 * tau).max(0.0).sqrt();
    let mut s = 0.0;
    for (vt, vw) in vr.nodes.iter().zip(&vr.weights) {
        let v = vmax * vt;
        let mu = 1.0 - v * v;
        let sn = (1.0 - mu * mu).max(0.0).sqrt();
        for k in 0..n_az {
            let phi = (k as f64 + 0.5) * dphi;
            let w = e1 * (sn * phi.cos()) + e2 * (sn * phi.sin()) + e * mu;
            s += vw * vmax * 2.0 * v * dphi * f(&(a + w * tau), v);
        }
    }
    s * tau * tau
}

/// Outcome of the differentiation formula at one (a, τ).
#[derive(Clone, Debug, Serialize)]
pub struct MeanDerivative {
    /// ∂_τ((1/4πτ)∫_{|x-a|=τ} Q dσ) by finite differences
    pub lhs: f64,
    /// ((1-τ)/2) Q((1-τ)a)
    pub leading: f64,
}

impl MeanDerivative {
    /// E(a, τ).
    pub fn remainder(&self) -> f64 {
        self.lhs - self.leading
    }
}

pub fn spherical_mean_derivative<F: Fn(&Point) -> f64>(q: F, a: &Point, tau: f64, radial: bool) -> Result<MeanDerivative> {
    if !(tau > 0.0 && tau < 1.0) || ((a.norm() - 1.0).abs()) > 1e-12 {
        return Err(invalid("need |a| = 1 and 0 < τ < 1"));
    }
    let mean = |t: f64| boundary_sphere_integral(|x, _| q(x), a, t, radial) / (4.0 * PI * t);
    let h = 1e-3 * tau.min(1.0 - tau);
    let lhs = (8.0 * (mean(tau + h) - mean(tau - h)) - (mean(tau + 2.0 * h) - mean(tau - 2.0 * h))) / (12.0 * h);
    let leading = 0.5 * (1.0 - tau) * q(&(a * (1.0 - tau)));
    Ok(MeanDerivative { lhs, leading })
}

/// Right-hand side of the |E(a, τ)|² bound:
/// (3/(π(1-τ))) Σ_{i<j} ∫_{|x-a|=τ} |Ω_ij Q|² / √(|x| - (1-τ)) dσ.
pub fn remainder_bound<F: Fn(&Point) -> f64>(q: F, a: &Point, tau: f64) -> f64 {
    let inner = boundary_sphere_integral(
        |x, v| {
            let s: f64 = [(0, 1), (0, 2), (1, 2)].iter().map(|&(i, j)| angular_derivative(&q, i, j, x).powi(2)).sum();
            // |x| - (1-τ) = 2τv²/(|x| + 1 - τ); the 1/v is cancelled by the 2v Jacobian
            let gap = 2.0 * tau * v * v / (x.norm() + 1.0 - tau);
            if gap <= 0.0 {
                let scale = (2.0 * tau / (x.norm() + 1.0 - tau)).sqrt();
                return s / scale / v.max(f64::MIN_POSITIVE);
            }
            s / gap.sqrt()
        },
        a,
        tau,
        false,
    );
    3.0 / (PI * (1.0 - tau)) * inner
}

/// Ω_ij Q(x) = x_i ∂_j Q - x_j ∂_i Q by fourth-order central differences.
pub fn angular_derivative<F: Fn(&Point) -> f64>(q: F, i: usize, j: usize, x: &Point) -> f64 {
    let h = 2e-4;
    let d = |k: usize| {
        let mut e = Point::zeros();
        e[k] = h;
        (8.0 * (q(&(x + e)) - q(&(x - e))) - (q(&(x + 2.0 * e)) - q(&(x - 2.0 * e)))) / (12.0 * h)
    };
    x[i] * d(j) - x[j] * d(i)
}

/// Per-radius ratio of the angular-derivative norm to the shell norm.
#[derive(Clone, Debug, Serialize)]
pub struct AngularControlEstimate {
    pub radii: Vec<f64>,
    pub ratios: Vec<f64>,
    /// max ratio over radii with a nonzero shell norm; 0 when there are none
    pub s: f64,
}

pub fn angular_control_estimate<F: Fn(&Point) -> f64 + Sync>(q: F, radii: &[f64], sphere: &SphereGrid) -> AngularControlEstimate {
    let ratios: Vec<f64> = radii
        .par_iter()
        .map(|&r| {
            let mut num = 0.0;
            let mut den = 0.0;
            for (n, w) in sphere.nodes().iter().zip(sphere.weights()) {
                let x = n * r;
                let v = q(&x);
                den += w * v * v;
                num += w * [(0, 1), (0, 2), (1, 2)].iter().map(|&(i, j)| angular_derivative(&q, i, j, &x).powi(2)).sum::<f64>();
            }
            if den > f64::MIN_POSITIVE {
                (num / den).sqrt()
            } else if num > f64::MIN_POSITIVE {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect();
    let s = ratios.iter().filter(|r| r.is_finite()).copied().fold(0.0, f64::max);
    AngularControlEstimate { radii: radii.to_vec(), ratios, s }
}

/// Whether to collapse each shell to one value.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShellMode {
    /// radial when every source sees the same data
    #[default]
    Auto,
    Radial,
    General,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct InverseConfig {
    /// τ grid k/shells, k = 1..shells-1; must match the data
    pub shells: usize,
    pub fixpoint_max: usize,
    /// update factor in (0, 1]
    pub damping: f64,
    /// largest admissible (16π/(1-τ))·noise_floor
    pub amplification_limit: f64,
    pub noise_floor: f64,
    /// stop when every shell update is below tolerance·max|q̂|
    pub tolerance: f64,
    /// shells with τ < margin_h stay zero
    pub margin_h: f64,
    /// Tikhonov weight on second τ-differences of the residual channel; 0 disables
    pub smoothing: f64,
    /// harmonic degree of the shell representation in general mode
    pub l_max: usize,
    /// radial width of the shell basis in units of the shell spacing
    pub width: f64,
    pub mode: ShellMode,
}

impl Default for InverseConfig {
    fn default() -> Self {
        InverseConfig {
            shells: 32,
            fixpoint_max: 8,
            damping: 1.0,
            amplification_limit: 0.05,
            noise_floor: 1e-4,
            tolerance: 1e-3,
            margin_h: 0.1,
            smoothing: 0.0,
            l_max: 2,
            width: 2.0,
            mode: ShellMode::Auto,
        }
    }
}

/// Known reference potential and its data; reconstruction then targets q₁ - q₂.
pub enum Reference<'a> {
    Zero,
    Known { potential: &'a Potential, data: &'a BackscatterData },
}

#[derive(Clone, Debug)]
pub struct ReconstructionState {
    /// τ per shell, ascending, so shells run from r = 1 - τ₁ inward
    pub taus: Vec<f64>,
    pub radial: bool,
    /// q̂((1-τ)a) per shell and source node
    pub values: Vec<Vec<f64>>,
    /// last update size per shell
    pub residuals: Vec<f64>,
    pub flagged: Vec<bool>,
    /// updates applied per shell
    pub iterations: Vec<usize>,
    pub sweeps: usize,
    pub converged: bool,
    sphere: SphereGrid,
    width: f64,
    l_max: usize,
}

impl ReconstructionState {
    pub fn radius(&self, k: usize) -> f64 {
        1.0 - self.taus[k]
    }

    pub fn any_flagged(&self) -> bool {
        self.flagged.iter().any(|&f| f)
    }

    /// Smooth potential through the shell values.
    fn scaled(&self, f: f64) -> ReconstructionState {
        ReconstructionState { values: self.values.iter().map(|v| v.iter().map(|x| x * f).collect()).collect(), ..self.clone() }
    }

    pub fn potential(&self) -> Result<Potential> {
        shell_potential(&self.taus, &self.values, &self.sphere, self.radial, self.width, self.l_max)
    }

    /// ‖q̂ - q‖_{L²(|x| = r)} per shell.
    pub fn shell_errors(&self, q: &Potential) -> Vec<f64> {
        (0..self.taus.len())
            .map(|k| {
                let r = self.radius(k);
                let s: f64 = self
                    .sphere
                    .nodes()
                    .iter()
                    .zip(self.sphere.weights())
                    .zip(&self.values[k])
                    .map(|((n, w), v)| w * (v - q.value(&(n * r))).powi(2))
                    .sum();
                r * s.sqrt()
            })
            .collect()
    }

    /// ‖q‖_{L²(|x| = r)} per shell.
    pub fn shell_norms(&self, q: &Potential) -> Vec<f64> {
        (0..self.taus.len())
            .map(|k| {
                let r = self.radius(k);
                let s: f64 = self.sphere.nodes().iter().zip(self.sphere.weights()).map(|(n, w)| w * q.value(&(n * r)).powi(2)).sum();
                r * s.sqrt()
            })
            .collect()
    }

    /// Relative L² error over the shells with r ≥ r_min.
    pub fn relative_error(&self, q: &Potential, r_min: f64) -> f64 {
        let err = self.shell_errors(q);
        let nrm = self.shell_norms(q);
        let keep = |k: &usize| self.radius(*k) >= r_min - 1e-12;
        let e: f64 = (0..err.len()).filter(keep).map(|k| err[k].powi(2)).sum();
        let n: f64 = (0..err.len()).filter(keep).map(|k| nrm[k].powi(2)).sum();
        if n == 0.0 {
            e.sqrt()
        } else {
            (e / n).sqrt()
        }
    }

    /// Columns r, polar, azimuth, q_hat, residual, flagged.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "polar", "azimuth", "q_hat", "residual", "flagged"])?;
        for k in 0..self.taus.len() {
            for jp in 0..self.sphere.n_polar() {
                for ka in 0..self.sphere.n_azimuth {
                    let s = self.sphere.index(jp, ka);
                    w.write_record(&[
                        format!("{}", self.radius(k)),
                        format!("{}", self.sphere.theta(jp)),
                        format!("{}", self.sphere.phi(ka)),
                        format!("{:e}", self.values[k][s]),
                        format!("{:e}", self.residuals[k]),
                        format!("{}", self.flagged[k]),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Collocation matrix of the radial basis bump((r - r_j)/ℓ), mirrored through the origin.
fn collocation(centers: &[f64], ell: f64) -> DMatrix<f64> {
    let n = centers.len();
    DMatrix::from_fn(n, n, |i, j| {
        let (ri, rj) = (centers[i], centers[j]);
        let mut v = 0.0;
        if (ri - rj).abs() < ell {
            v += bump((ri - rj) / ell);
        }
        if ri + rj < ell {
            v += bump((ri + rj) / ell);
        }
        v
    })
}

fn shell_potential(taus: &[f64], values: &[Vec<f64>], sphere: &SphereGrid, radial: bool, width: f64, l_max: usize) -> Result<Potential> {
    let n = taus.len();
    let dr = if n > 1 { taus[1] - taus[0] } else { 0.5 };
    let ell = width * dr;
    // ascending radii; shells whose basis would reach the unit sphere must be empty
    let keep = taus.iter().filter(|&&t| 1.0 - t + ell < 1.0).count();
    if values[..n - keep].iter().flatten().any(|&v| v != 0.0) {
        return Err(invalid("nonzero shell values within one basis width of the unit sphere"));
    }
    let values = &values[n - keep..];
    let n = keep;
    let centers: Vec<f64> = taus[taus.len() - keep..].iter().rev().map(|t| 1.0 - t).collect();
    let lu = collocation(&centers, ell).lu();
    let solve = |rhs: Vec<f64>| -> Result<Vec<f64>> {
        lu.solve(&DVector::from_vec(rhs)).map(|v| v.as_slice().to_vec()).ok_or_else(|| invalid("singular shell collocation"))
    };
    if radial {
        let rhs: Vec<f64> = values.iter().rev().map(|v| v[0]).collect();
        let coeffs = solve(rhs)?;
        return Potential::radial_samples(centers, coeffs, ell);
    }
    let modes = harmonic_modes(l_max, l_max);
    let basis: Vec<Vec<f64>> = (0..sphere.len())
        .map(|s| {
            let (jp, ka) = (s / sphere.n_azimuth, s % sphere.n_azimuth);
            real_harmonics(&modes, l_max, sphere.theta(jp), sphere.phi(ka))
        })
        .collect();
    // shell values projected onto harmonics, ascending radii
    let proj: Vec<Vec<f64>> = values
        .iter()
        .rev()
        .map(|v| {
            (0..modes.len())
                .map(|m| v.iter().zip(&basis).zip(sphere.weights()).map(|((x, y), w)| w * x * y[m]).sum())
                .collect()
        })
        .collect();
    let mut coeffs = vec![vec![0.0; modes.len()]; n];
    for m in 0..modes.len() {
        let c = solve(proj.iter().map(|p| p[m]).collect())?;
        for (k, v) in c.into_iter().enumerate() {
            coeffs[k][m] = v;
        }
    }
    Potential::shell_harmonics(centers, ell, l_max, coeffs)
}

/// (I + λ D₂ᵀD₂)⁻¹ y along τ.
fn tikhonov(y: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    if lambda <= 0.0 || n < 3 {
        return y.to_vec();
    }
    let mut d2 = DMatrix::zeros(n - 2, n);
    for i in 0..n - 2 {
        d2[(i, i)] = 1.0;
        d2[(i, i + 1)] = -2.0;
        d2[(i, i + 2)] = 1.0;
    }
    let a = DMatrix::identity(n, n) + d2.transpose() * d2 * lambda;
    a.lu().solve(&DVector::from_column_slice(y)).map_or_else(|| y.to_vec(), |v| v.as_slice().to_vec())
}

/// 16π/(1-τ): the factor between the τ-derivative channel and q on the shell r = 1 - τ.
const LINEAR_PROBE: f64 = 1e-6;

pub fn shell_gain(tau: f64) -> f64 {
    16.0 * PI / (1.0 - tau)
}

fn is_radial(data: &BackscatterData) -> bool {
    let nt = data.n_taus();
    let scale = data.dtau.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (1..data.n_sources()).all(|s| (0..nt).all(|k| (data.derivative(s, k) - data.derivative(0, k)).abs() <= 1e-12 * scale))
}

/// Layer stripping: shells r = 1 - τ outside-in, started from the linear term and
/// corrected by fixed-point sweeps against forward re-solves of the current estimate.
pub fn layer_strip_reconstruct(data: &BackscatterData, reference: Reference, cfg: &InverseConfig) -> Result<ReconstructionState> {
    if !(cfg.damping > 0.0 && cfg.damping <= 1.0) {
        return Err(invalid("damping must lie in (0, 1]"));
    }
    let taus = data.meta.taus.clone();
    let expected = crate::point_source::tau_grid(cfg.shells);
    if taus.len() != expected.len() || taus.iter().zip(&expected).any(|(a, b)| (a - b).abs() > 1e-9) {
        return Err(Error::GridMismatch(format!("data τ grid does not match {} shells", cfg.shells)));
    }
    if let Reference::Known { data: d2, .. } = &reference {
        if d2.meta.sources != data.meta.sources || d2.meta.taus != data.meta.taus {
            return Err(Error::GridMismatch("reference data on different grids".into()));
        }
    }
    let sphere = data.meta.sources.sphere()?;
    let ns = data.n_sources();
    let nt = taus.len();
    let radial = match cfg.mode {
        ShellMode::Radial => true,
        ShellMode::General => false,
        ShellMode::Auto => {
            is_radial(data)
                && match &reference {
                    Reference::Zero => true,
                    Reference::Known { potential, .. } => potential.symmetry() == PotentialSymmetry::Radial,
                }
        }
    };
    // derivative channel per source, sphere-averaged in radial mode
    let channel = |d: &BackscatterData| -> Vec<Vec<f64>> {
        if radial {
            let area: f64 = sphere.weights().iter().sum();
            let mean: Vec<f64> = (0..nt).map(|k| (0..ns).map(|s| sphere.weights()[s] * d.derivative(s, k)).sum::<f64>() / area).collect();
            vec![mean; ns]
        } else {
            (0..ns).map(|s| (0..nt).map(|k| d.derivative(s, k)).collect()).collect()
        }
    };
    let target = channel(data);

    let flagged: Vec<bool> = taus.iter().map(|&t| shell_gain(t) * cfg.noise_floor > cfg.amplification_limit).collect();
    // a shell whose basis reaches the unit sphere stays zero as well
    let ell = cfg.width * if nt > 1 { taus[1] - taus[0] } else { 0.5 };
    let active: Vec<bool> = taus.iter().zip(&flagged).map(|(&t, &f)| t >= cfg.margin_h - 1e-12 && 1.0 - t + ell < 1.0 && !f).collect();
    // flagged shells stop the sweep: everything deeper stays unreconstructed
    let first_flag = flagged.iter().position(|&f| f).unwrap_or(nt);
    let active: Vec<bool> = active.iter().enumerate().map(|(k, &a)| a && k < first_flag).collect();
    let flagged: Vec<bool> = (0..nt).map(|k| flagged[k] || k >= first_flag).collect();

    let mut state = ReconstructionState {
        taus: taus.clone(),
        radial,
        values: vec![vec![0.0; ns]; nt],
        residuals: vec![0.0; nt],
        flagged,
        iterations: vec![0; nt],
        sweeps: 0,
        converged: false,
        sphere: sphere.clone(),
        width: cfg.width,
        l_max: cfg.l_max,
    };

    let solve = |q: &Potential| -> Result<Vec<Vec<f64>>> {
        let d = if q.is_zero() { data.zeros_like() } else { sample_backscatter(q, data.meta.sources.clone(), &taus, &data.meta.solver)? };
        Ok(channel(&d))
    };
    let reference_channel: Vec<Vec<f64>> = match &reference {
        Reference::Zero => vec![vec![0.0; nt]; ns],
        Reference::Known { data: d2, .. } => channel(d2),
    };
    let sources: Vec<Point> = sphere.nodes().to_vec();
    // everything in the forward response beyond q̂/gain: the nonlinear part from the
    // solver minus its own linear response, plus the off-leading spherical-mean term
    let beyond_leading = |state: &ReconstructionState| -> Result<Vec<Vec<f64>>> {
        let qhat = state.potential()?;
        if qhat.is_zero() {
            return Ok(vec![vec![0.0; nt]; ns]);
        }
        let total = match &reference {
            Reference::Zero => qhat.clone(),
            Reference::Known { potential, .. } => Potential::sum(vec![(*potential).clone(), qhat.clone()])?,
        };
        let full = solve(&total)?;
        let eps = LINEAR_PROBE / qhat.bound().max(f64::MIN_POSITIVE);
        let small = state.scaled(eps).potential()?;
        let lin = solve(&small)?;
        let mut out: Vec<Vec<f64>> =
            (0..ns).map(|s| (0..nt).map(|k| full[s][k] - reference_channel[s][k] - lin[s][k] / eps).collect()).collect();
        if !radial {
            for (s, a) in sources.iter().enumerate() {
                for k in 0..nt {
                    if active[k] {
                        let m = spherical_mean_derivative(|x: &Point| qhat.value(x), a, taus[k], false)?;
                        out[s][k] += m.remainder() / (8.0 * PI);
                    }
                }
            }
        }
        Ok(out)
    };

    let mut extra = vec![vec![0.0; nt]; ns];
    for sweep in 0..=cfg.fixpoint_max {
        if sweep > 0 {
            extra = beyond_leading(&state)?;
        }
        let residual: Vec<Vec<f64>> = (0..ns)
            .map(|s| {
                tikhonov(&(0..nt).map(|k| target[s][k] - reference_channel[s][k] - extra[s][k]).collect::<Vec<_>>(), cfg.smoothing)
            })
            .collect();
        let mut biggest: f64 = 0.0;
        let mut worst: f64 = 0.0;
        let factor = if sweep == 0 { 1.0 } else { cfg.damping };
        for k in 0..nt {
            if !active[k] {
                continue;
            }
            let gain = shell_gain(taus[k]);
            let mut upd: f64 = 0.0;
            for s in 0..ns {
                let du = gain * residual[s][k] - state.values[k][s];
                upd = upd.max(du.abs());
                state.values[k][s] += factor * du;
                biggest = biggest.max(state.values[k][s].abs());
            }
            state.residuals[k] = upd;
            state.iterations[k] += 1;
            worst = worst.max(upd);
        }
        state.sweeps = sweep;
        if sweep > 0 && worst <= cfg.tolerance * biggest.max(f64::MIN_POSITIVE) {
            state.converged = true;
            break;
        }
        if biggest == 0.0 && worst == 0.0 {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{PotentialKind, PotentialSpec};

    fn radial_bump(amp: f64) -> Potential {
        Potential::from_spec(&PotentialSpec { kind: PotentialKind::RadialBump, amplitude: amp, center_radius: 0.55, width: 0.3, margin_h: 0.15 })
            .unwrap()
    }

    #[test]
    fn angular_derivative_examples() {
        let x = Point::new(0.0, 1.0, 0.0);
        assert!((angular_derivative(|p: &Point| p[0], 0, 1, &x) + 1.0).abs() < 1e-10);
        let y = Point::new(0.3, -0.7, 0.2);
        let v = angular_derivative(|p: &Point| p[0] * p[1], 0, 1, &y);
        assert!((v - (0.09 - 0.49)).abs() < 1e-10);
        let q = radial_bump(1.0);
        assert!(angular_derivative(|p: &Point| q.value(p), 1, 2, &Point::new(0.2, 0.3, 0.4)).abs() < 1e-8);
    }

    #[test]
    fn radial_mean_derivative_has_no_remainder() {
        let q = radial_bump(1.0);
        let a = Point::new(0.6, 0.0, 0.8);
        for tau in [0.2, 0.35, 0.5, 0.7] {
            let m = spherical_mean_derivative(|x: &Point| q.value(x), &a, tau, false).unwrap();
            assert!(m.remainder().abs() < 1e-7, "τ = {tau}: {:?}", m);
        }
        let z = spherical_mean_derivative(|_: &Point| 0.0, &a, 0.4, true).unwrap();
        assert_eq!((z.lhs, z.leading), (0.0, 0.0));
    }

    #[test]
    fn angular_control_of_radial_and_zero_fields() {
        let q = radial_bump(1.0);
        let sphere = SphereGrid::new(8, 16).unwrap();
        let radii = [0.3, 0.5, 0.7];
        let est = angular_control_estimate(|x: &Point| q.value(x), &radii, &sphere);
        assert!(est.s < 1e-6, "{:?}", est.ratios);
        let z = angular_control_estimate(|_: &Point| 0.0, &radii, &sphere);
        assert_eq!(z.s, 0.0);
        assert!(z.ratios.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn collocated_shells_reproduce_values() {
        let taus: Vec<f64> = (1..16).map(|k| k as f64 / 16.0).collect();
        let values: Vec<Vec<f64>> = taus.iter().map(|&t| vec![if t < 0.2 { 0.0 } else { (3.0 * t).sin() }]).collect();
        let sphere = SphereGrid::new(2, 1).unwrap();
        let q = shell_potential(&taus, &values, &sphere, true, 2.0, 0).unwrap();
        for (t, v) in taus.iter().zip(&values).skip(2) {
            assert!((q.value(&Point::new(0.0, 0.0, 1.0 - t)) - v[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn tikhonov_keeps_lines() {
        let y: Vec<f64> = (0..10).map(|i| 0.5 + 0.1 * i as f64).collect();
        let s = tikhonov(&y, 10.0);
        assert!(y.iter().zip(&s).all(|(a, b)| (a - b).abs() < 1e-10));
    }
}
