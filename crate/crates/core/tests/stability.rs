use backscatter::field::{Potential, PotentialKind, PotentialSpec};
use backscatter::goursat::GridSpec;
use backscatter::inverse::InverseConfig;
use backscatter::point_source::{SolverConfig, SourceGrid};
use backscatter::stability::{stability_sweep, StabilityConfig};

#[test]
fn coarse_sweep_error_grows_with_noise() {
    let q = Potential::from_spec(&PotentialSpec { kind: PotentialKind::RadialBump, amplitude: 0.5, center_radius: 0.55, width: 0.3, margin_h: 0.15 }).unwrap();
    let cfg = StabilityConfig {
        sources: SourceGrid { n_polar: 2, n_azimuth: 4 },
        solver: SolverConfig {
            grid: GridSpec { shells: 24, n_polar: 6, n_azimuth: 12, steps: 48, ..Default::default() },
            ..Default::default()
        },
        inverse: InverseConfig { shells: 16, fixpoint_max: 2, ..Default::default() },
        seed: 4,
    };
    let reports = stability_sweep(&q, &[1e-4, 1e-3, 1e-2], &cfg).unwrap();
    let full: Vec<f64> = reports.iter().map(|r| r.full_domain.err).collect();
    assert!(full.iter().all(|&e| e.is_finite() && e > 0.0), "{full:?}");
    assert!(full.windows(2).all(|w| w[0] < w[1]), "{full:?}");
    for r in &reports {
        assert!((r.lambda - r.noise).abs() <= 1e-12 * r.noise.max(1.0));
        assert!(!r.reconstructed().is_empty());
    }
}
