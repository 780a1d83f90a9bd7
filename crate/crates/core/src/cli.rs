//! Run configuration, the batch commands and the verification suites.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::field::potential::bump;
use crate::field::{gamma_eval, laplacian, ApexFrame, ConeTrace, Point, Potential, PotentialKind, PotentialSpec, Symmetry};
use crate::goursat::{cone_identity_residual, constant_potential_series, goursat_solve, GoursatOptions};
use crate::inverse::{layer_strip_reconstruct, remainder_bound, spherical_mean_derivative, InverseConfig, Reference, ReconstructionState};
use crate::point_source::{sample_backscatter, solve_point_source, tau_grid, BackscatterData, SolverConfig, SourceGrid};
use crate::retarded::{k_apply_direct, k_apply_lorentz_with, lorentz_invariant, LorentzArg};
use crate::stability::{
    abel_volterra_solve, cap_height, coords_identity_check, gronwall_bound, gronwall_verify, inner_kernel_integral,
    optimise_exponential, stability_sweep, write_sweep_csv, StabilityConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Input(Error),
    #[error("solver: {0}")]
    Solver(Error),
    #[error("{0} shell(s) exceed the amplification limit")]
    Amplification(usize),
    #[error("{} verification failure(s)", .0.len())]
    Verification(Vec<Failure>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Solver(_) | CliError::Amplification(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_) | Error::Json(_) | Error::Csv(_) | Error::Io(_) => CliError::Input(e),
            _ => CliError::Solver(e),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub noises: Vec<f64>,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection { noises: vec![0.0, 1e-3, 1e-2] }
    }
}

/// File names inside the output directory.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub data: String,
    pub reconstruction: String,
    pub residuals: String,
    pub report: String,
    pub sweep: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths {
            data: "backscatter.csv".into(),
            reconstruction: "reconstruction.csv".into(),
            residuals: "reconstruction.json".into(),
            report: "stability.json".into(),
            sweep: "stability_sweep.csv".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub potential: Option<PotentialSpec>,
    pub sources: SourceGrid,
    pub solver: SolverConfig,
    pub inverse: InverseConfig,
    pub stability: StabilitySection,
    pub outputs: OutputPaths,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let st = StabilityConfig::default();
        RunConfig {
            potential: None,
            sources: st.sources,
            solver: st.solver,
            inverse: st.inverse,
            stability: StabilitySection::default(),
            outputs: OutputPaths::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        let g = &self.solver.grid;
        let s = &self.solver;
        let orders = [
            ("grid.shells", g.shells),
            ("grid.n_polar", g.n_polar),
            ("grid.n_azimuth", g.n_azimuth),
            ("grid.steps", g.steps),
            ("solver.m", s.m),
            ("solver.k_polar", s.k_polar),
            ("solver.k_azimuth", s.k_azimuth),
            ("solver.k_radial", s.k_radial),
            ("sources.n_polar", self.sources.n_polar),
            ("sources.n_azimuth", self.sources.n_azimuth),
            ("inverse.shells", self.inverse.shells),
        ];
        if let Some((name, _)) = orders.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::Config(format!("{name} must be positive")));
        }
        if s.levels == Some(0) {
            return Err(CliError::Config("solver.levels must be positive when given".into()));
        }
        if self.inverse.shells < 6 {
            return Err(CliError::Config("inverse.shells must be at least 6".into()));
        }
        if !(g.span > 0.0 && g.horizon > 0.0) {
            return Err(CliError::Config("grid span and horizon must be positive".into()));
        }
        if self.stability.noises.iter().any(|n| !(*n >= 0.0)) {
            return Err(CliError::Config("noise levels must be non-negative".into()));
        }
        if let Some(p) = &self.potential {
            Potential::from_spec(p).map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn potential(&self) -> CliResult<Potential> {
        let spec = self.potential.as_ref().ok_or_else(|| CliError::Config("a potential spec is required".into()))?;
        Potential::from_spec(spec).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn stability_config(&self) -> StabilityConfig {
        StabilityConfig { sources: self.sources, solver: self.solver.clone(), inverse: self.inverse.clone(), seed: self.seed }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(e.into()))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Input(e.into()))
}

/// JSON sidecar next to a data CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Backscattering data CSV and its JSON sidecar.
pub fn cmd_forward(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let q = cfg.potential()?;
    let data = sample_backscatter(&q, cfg.sources, &tau_grid(cfg.inverse.shells), &cfg.solver)?;
    let csv_path = out.join(&cfg.outputs.data);
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    write_file(&csv_path, &buf)?;
    let side = sidecar_path(&csv_path);
    write_file(&side, data.sidecar_json()?.as_bytes())?;
    Ok(vec![csv_path, side])
}

pub fn read_data(csv_path: &Path) -> CliResult<BackscatterData> {
    let side = sidecar_path(csv_path);
    let csv_file = fs::File::open(csv_path).map_err(|e| CliError::Input(Error::Parse(format!("{}: {e}", csv_path.display()))))?;
    let sidecar = fs::read_to_string(&side).map_err(|e| CliError::Input(Error::Parse(format!("{}: {e}", side.display()))))?;
    Ok(BackscatterData::read(csv_file, &sidecar)?)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ShellRow {
    pub r: f64,
    pub residual: f64,
    pub flagged: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub err: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InversionReport {
    pub sweeps: usize,
    pub converged: bool,
    pub flagged: usize,
    pub shells: Vec<ShellRow>,
    /// relative L² error over r ≥ 0.5 against the configured potential
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_error_outer: Option<f64>,
}

fn inversion_report(state: &ReconstructionState, truth: Option<&Potential>) -> InversionReport {
    let errs = truth.map(|q| state.shell_errors(q));
    let shells = (0..state.taus.len())
        .map(|k| ShellRow {
            r: state.radius(k),
            residual: state.residuals[k],
            flagged: state.flagged[k],
            iterations: state.iterations[k],
            err: errs.as_ref().map(|e| e[k]),
        })
        .collect();
    InversionReport {
        sweeps: state.sweeps,
        converged: state.converged,
        flagged: state.flagged.iter().filter(|f| **f).count(),
        shells,
        relative_error_outer: truth.map(|q| state.relative_error(q, 0.5)),
    }
}

/// Reconstruction CSV and residual JSON. Both are written before an
/// amplification flag is reported.
pub fn cmd_invert(cfg: &RunConfig, out: &Path, data_path: Option<&Path>) -> CliResult<Vec<PathBuf>> {
    let default_path = out.join(&cfg.outputs.data);
    let data = read_data(data_path.unwrap_or(&default_path))?;
    let truth = match &cfg.potential {
        Some(_) => Some(cfg.potential()?),
        None => None,
    };
    let state = layer_strip_reconstruct(&data, Reference::Zero, &cfg.inverse)?;
    let csv_path = out.join(&cfg.outputs.reconstruction);
    let mut buf = Vec::new();
    state.write_csv(&mut buf)?;
    write_file(&csv_path, &buf)?;
    let report = inversion_report(&state, truth.as_ref());
    let json_path = out.join(&cfg.outputs.residuals);
    write_file(&json_path, serde_json::to_string_pretty(&report).map_err(Error::from)?.as_bytes())?;
    if report.flagged > 0 {
        return Err(CliError::Amplification(report.flagged));
    }
    Ok(vec![csv_path, json_path])
}

/// StabilityReport JSON (one report per noise level) and the per-sweep CSV.
pub fn cmd_stability(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let q = cfg.potential()?;
    let reports = stability_sweep(&q, &cfg.stability.noises, &cfg.stability_config())?;
    let json_path = out.join(&cfg.outputs.report);
    write_file(&json_path, serde_json::to_string_pretty(&reports).map_err(Error::from)?.as_bytes())?;
    let csv_path = out.join(&cfg.outputs.sweep);
    let mut buf = Vec::new();
    write_sweep_csv(&reports, &mut buf)?;
    write_file(&csv_path, &buf)?;
    Ok(vec![json_path, csv_path])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Gamma,
    Kernel,
    Goursat,
    Identities,
    Gronwall,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Failure {
    pub suite: String,
    pub check: String,
    pub value: f64,
    pub limit: f64,
}

struct Checks {
    suite: &'static str,
    failures: Vec<Failure>,
}

impl Checks {
    /// Records a failure unless value ≤ limit.
    fn at_most(&mut self, check: &str, value: f64, limit: f64) {
        if !(value <= limit) {
            self.failures.push(Failure { suite: self.suite.into(), check: check.into(), value, limit });
        }
    }

    fn holds(&mut self, check: &str, ok: bool) {
        self.at_most(check, if ok { 0.0 } else { 1.0 }, 0.0);
    }
}

/// Options for `cmd_verify`; `mis_signed_kernel` swaps the Lorentz form for
/// T² + 2Tr, which the kernel suite must reject.
#[derive(Clone, Copy, Debug, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    pub mis_signed_kernel: bool,
}

pub fn cmd_verify(suite: Suite, opts: VerifyOptions) -> CliResult<()> {
    let failures = run_suite(suite, opts);
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failures))
    }
}

pub fn run_suite(suite: Suite, opts: VerifyOptions) -> Vec<Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut c = Checks { suite: "", failures: Vec::new() };
    match suite {
        Suite::Gamma => {
            c.suite = "gamma";
            gamma_suite(&mut c, &mut rng);
        }
        Suite::Kernel => {
            c.suite = "kernel";
            let arg: LorentzArg = if opts.mis_signed_kernel { |t, r| t * t + 2.0 * t * r } else { lorentz_invariant };
            kernel_suite(&mut c, &mut rng, arg);
        }
        Suite::Goursat => {
            c.suite = "goursat";
            goursat_suite(&mut c);
        }
        Suite::Identities => {
            c.suite = "identities";
            identities_suite(&mut c, &mut rng);
        }
        Suite::Gronwall => {
            c.suite = "gronwall";
            gronwall_suite(&mut c, opts.seed);
        }
    }
    c.failures
}

/// A point strictly inside the forward cone: |x| < 1, t ∈ (|x|, 2).
pub fn random_cone_point(rng: &mut ChaCha8Rng) -> (Point, f64) {
    let x = Point::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6));
    let t = x.norm() + rng.random_range(0.05..1.2);
    (x, t)
}

fn gamma_suite(c: &mut Checks, rng: &mut ChaCha8Rng) {
    let x0 = Point::new(0.3, -0.1, 0.2);
    c.at_most("gamma0_is_one", (gamma_eval(0, &x0, 0.7) - 1.0).abs(), 0.0);
    c.at_most("negative_order_vanishes", gamma_eval(-2, &x0, 0.7).abs(), 0.0);
    c.at_most("gamma3_at_origin", (gamma_eval(3, &Point::zeros(), 2.0) - 64.0 / 6.0).abs(), 1e-12);
    for _ in 0..20 {
        let (x, t) = random_cone_point(rng);
        for k in 1..=4i64 {
            // (∂_t² - Δ)γ^k = 4(k + 1)γ^{k-1}
            let h = 1e-3;
            let dtt = (gamma_eval(k, &x, t + h) - 2.0 * gamma_eval(k, &x, t) + gamma_eval(k, &x, t - h)) / (h * h);
            let lap = laplacian(|y: &Point| gamma_eval(k, y, t), &x, h);
            let expect = 4.0 * (k + 1) as f64 * gamma_eval(k - 1, &x, t);
            c.at_most("wave_operator", (dtt - lap - expect).abs() / expect.abs().max(1.0), 1e-5);
            // x·∇γ^k + t∂_tγ^k = 2kγ^k
            let h1 = 1e-5;
            let dt = (gamma_eval(k, &x, t + h1) - gamma_eval(k, &x, t - h1)) / (2.0 * h1);
            let dr = crate::field::radial_derivative(|y: &Point| gamma_eval(k, y, t), &x, &Point::zeros(), h1).unwrap_or(0.0);
            let euler = x.norm() * dr + t * dt;
            let expect = 2.0 * k as f64 * gamma_eval(k, &x, t);
            c.at_most("homogeneity", (euler - expect).abs() / expect.abs().max(1.0), 1e-6);
        }
    }
}

/// Smooth test profiles p(z) for the Lorentz comparison.
pub fn random_profile(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 + Sync + Copy {
    let (a, b, w, phi): (f64, f64, f64, f64) =
        (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..3.0), rng.random_range(0.0..6.0));
    move |z: f64| a + b * z + (w * z + phi).sin() * (-0.3 * z * z).exp()
}

fn kernel_suite(c: &mut Checks, rng: &mut ChaCha8Rng, arg: LorentzArg) {
    let polys: [fn(f64) -> f64; 3] = [|_| 1.0, |z| z, |z| z * z];
    let mut profiles = Vec::new();
    for _ in 0..20 {
        profiles.push(random_profile(rng));
    }
    for _ in 0..50 {
        let (x, t) = random_cone_point(rng);
        let z = t * t - x.norm_squared();
        let ind = k_apply_direct(|_, _| 1.0, &x, t, 16);
        c.at_most("indicator_closed_form", (ind - z / 8.0).abs(), 1e-8);
        let g1 = k_apply_direct(|y: &Point, s| s * s - y.norm_squared(), &x, t, 16);
        c.at_most("gamma1_closed_form", (g1 - z * z / 24.0).abs(), 1e-8);
        for p in polys {
            let d = k_apply_direct(|y: &Point, s| p(s * s - y.norm_squared()), &x, t, 16);
            let l = k_apply_lorentz_with(p, &x, t, 16, arg).unwrap_or(f64::NAN);
            c.at_most("lorentz_polynomial", (d - l).abs(), 1e-8);
        }
        for p in &profiles {
            let d = k_apply_direct(|y: &Point, s| p(s * s - y.norm_squared()), &x, t, 24);
            let l = k_apply_lorentz_with(p, &x, t, 48, arg).unwrap_or(f64::NAN);
            c.at_most("lorentz_smooth", (d - l).abs(), 1e-6);
        }
    }
}

/// max relative error of the constant-potential solve against its series.
pub fn constant_potential_error(q0: f64, grid: &crate::goursat::GridSpec) -> crate::Result<(f64, f64)> {
    let layout = grid.layout(ApexFrame::toward_origin(Point::zeros()), Symmetry::Spherical, None)?;
    let g = ConeTrace::constant(Point::zeros(), 1.0);
    let sol = goursat_solve(&Potential::constant(q0), &g, layout.clone(), &GoursatOptions::default())?;
    let sl = &layout.spatial;
    let mut worst: f64 = 0.0;
    for i in 0..=sl.shells {
        for l in 0..=layout.time.steps {
            let (rho, sigma) = (sl.rho(i), layout.time.sigma(l));
            if !layout.determined(rho, sigma) {
                continue;
            }
            let exact = constant_potential_series(q0, 1.0, &Point::new(0.0, 0.0, rho), rho + sigma);
            worst = worst.max((sol.u.at(i, 0, l) - exact).abs() / exact.abs());
        }
    }
    Ok((worst, cone_identity_residual(&sol)))
}

pub fn shell_bump_spec(amplitude: f64) -> PotentialSpec {
    PotentialSpec { kind: PotentialKind::RadialBump, amplitude, center_radius: 0.55, width: 0.3, margin_h: 0.15 }
}

pub fn shell_bump(amplitude: f64) -> Potential {
    Potential::from_spec(&shell_bump_spec(amplitude)).expect("valid bump")
}

pub fn angular_bump(amplitude: f64) -> Potential {
    Potential::from_spec(&PotentialSpec { kind: PotentialKind::AngularBump, amplitude, center_radius: 0.55, width: 0.3, margin_h: 0.15 })
        .expect("valid bump")
}

fn goursat_suite(c: &mut Checks) {
    for q0 in [-2.0, 2.0] {
        match constant_potential_error(q0, &crate::goursat::GridSpec::default()) {
            Ok((err, cone)) => {
                c.at_most("constant_potential_series", err, 1e-3);
                c.at_most("cone_identity", cone, 1e-3);
            }
            Err(_) => c.holds("constant_potential_solve", false),
        }
    }
    match solve_point_source(&shell_bump(1.0), &Point::z(), &SolverConfig::default()) {
        Ok(sol) => {
            c.at_most("dirichlet_trace", sol.regular.trace_error, 1e-12);
            c.at_most("cone_identity_point_source", cone_identity_residual(&sol.regular), 1e-3);
            c.at_most("transport_identity", sol.transport_residual, 1e-3);
            c.holds("neumann_envelope", sol.regular.w.envelope_ok());
        }
        Err(_) => c.holds("point_source_solve", false),
    }
}

/// Off-centre bump f(x) = bump(|x - c|/w) with its centre c and radius w.
pub fn random_bump_field(rng: &mut ChaCha8Rng) -> (impl Fn(&Point) -> f64 + Sync + Copy, Point, f64) {
    let w: f64 = rng.random_range(0.2..0.4);
    let dir = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
    let centre = dir * rng.random_range(0.0..(0.95 - w));
    let amp: f64 = rng.random_range(0.5..2.0);
    (move |x: &Point| amp * bump((x - centre).norm() / w), centre, w)
}

fn identities_suite(c: &mut Checks, rng: &mut ChaCha8Rng) {
    for _ in 0..20 {
        let (f, centre, w) = random_bump_field(rng);
        for tau in [0.2, 0.5, 0.8] {
            match coords_identity_check(f, &centre, w, tau, 24) {
                Ok(id) => {
                    let (d1, d2) = id.defects();
                    c.at_most("sphere_identity", d1, 1e-4);
                    c.at_most("ball_identity", d2, 1e-4);
                }
                Err(_) => c.holds("coords_identity", false),
            }
        }
    }
    for _ in 0..20 {
        let (xn, tau): (f64, f64) = (rng.random_range(0.05..0.99), rng.random_range(0.05..0.99));
        // cap area by quadrature in cos θ about x/|x|
        let mu0 = ((1.0 + xn * xn - tau * tau) / (2.0 * xn)).clamp(-1.0, 1.0);
        let rule = crate::field::quad::GaussRule::new(8);
        let area = 2.0 * std::f64::consts::PI * rule.integrate(mu0, 1.0, |_| 1.0);
        c.at_most("cap_height", (area - 2.0 * std::f64::consts::PI * cap_height(xn, tau)).abs(), 1e-12);
    }
    let radial = shell_bump(1.0);
    let angular = angular_bump(1.0);
    for _ in 0..20 {
        let a = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        let tau: f64 = rng.random_range(0.1..0.9);
        match spherical_mean_derivative(|x: &Point| radial.value(x), &a, tau, false) {
            Ok(m) => c.at_most("radial_remainder", m.remainder().abs(), 1e-5),
            Err(_) => c.holds("radial_remainder", false),
        }
        match spherical_mean_derivative(|x: &Point| angular.value(x), &a, tau, false) {
            Ok(m) => {
                let bound = remainder_bound(|x: &Point| angular.value(x), &a, tau);
                c.at_most("angular_remainder_bound", m.remainder().powi(2) - bound, 1e-12);
            }
            Err(_) => c.holds("angular_remainder", false),
        }
    }
}

fn gronwall_suite(c: &mut Checks, seed: u64) {
    let e4 = 3.0 * 4f64.exp();
    c.at_most("bound_example", (gronwall_bound(1.0, 1.0, 0.0, 1.0, 1.0).unwrap_or(f64::NAN) - e4).abs(), 1e-12 * e4);
    c.at_most("bound_without_growth", (gronwall_bound(0.7, 0.0, 0.0, 1.0, 0.4).unwrap_or(f64::NAN) - 0.7).abs(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let s: f64 = rng.random_range(0.0..0.9);
        let t: f64 = rng.random_range(s + 1e-3..1.0);
        let v = inner_kernel_integral(s, t).unwrap_or(f64::NAN);
        c.at_most("inner_integral_is_pi", (v - std::f64::consts::PI).abs(), 1e-6);
        c.at_most("inner_integral_at_most_4", v, 4.0);
    }
    let taus: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
    let d = vec![1.0; taus.len()];
    match abel_volterra_solve(&taus, &d, 1.0).and_then(|phi| gronwall_verify(&taus, &phi, &d, 1.0, seed)) {
        Ok(r) => {
            c.holds("saturating_premise", r.premise);
            c.holds("saturating_bound", r.holds);
            c.at_most("verify_inner", r.inner_error, 1e-6);
        }
        Err(_) => c.holds("gronwall_verify", false),
    }
    let small = optimise_exponential(0.0, 1.0, (-2.0f64).exp()).map(|o| o.bound).unwrap_or(f64::NAN);
    c.at_most("small_lambda_branch", (small - 2.0 / 2f64.powf(0.25)).abs(), 1e-12);
    let big = optimise_exponential(0.0, 1.0, 1.0).map(|o| o.bound).unwrap_or(f64::NAN);
    c.at_most("linear_branch", (big - std::f64::consts::E).abs(), 1e-12);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = RunConfig { potential: Some(shell_bump_spec(0.5)), ..Default::default() };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
        let bad = r#"{"inverse": {"shells": 0}}"#;
        assert_eq!(RunConfig::from_json(bad).unwrap_err().exit_code(), 2);
        assert_eq!(RunConfig::from_json(r#"{"bogus": 1}"#).unwrap_err().exit_code(), 2);
        assert_eq!(RunConfig::from_json("{").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn cheap_suites_pass_and_mutation_is_caught() {
        let g = run_suite(Suite::Gamma, VerifyOptions::default());
        assert!(g.is_empty(), "{g:?}");
        assert!(run_suite(Suite::Gronwall, VerifyOptions::default()).is_empty());
        assert!(run_suite(Suite::Kernel, VerifyOptions::default()).is_empty());
        let mutated = run_suite(Suite::Kernel, VerifyOptions { seed: 0, mis_signed_kernel: true });
        assert!(mutated.iter().any(|f| f.check == "lorentz_polynomial"));
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(CliError::from(Error::Parse("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::TruncationInsufficient { bound: 1.0, tol: 0.1, levels: 3 }).exit_code(), 3);
        assert_eq!(CliError::Amplification(2).exit_code(), 3);
        assert_eq!(CliError::Verification(vec![]).exit_code(), 4);
    }
}
