use backscatter::field::{ApexFrame, ConeTrace, Point, Potential, Symmetry};
use backscatter::goursat::{constant_potential_series, goursat_solve, GoursatOptions, GridSpec};

fn oracle_error(q0: f64, spec: &GridSpec) -> f64 {
    let frame = ApexFrame::toward_origin(Point::zeros());
    let grid = spec.layout(frame, Symmetry::Spherical, None).unwrap();
    let g = ConeTrace::constant(Point::zeros(), 1.0);
    let sol = goursat_solve(&Potential::constant(q0), &g, grid.clone(), &GoursatOptions::default()).unwrap();
    let sl = &grid.spatial;
    let mut worst: f64 = 0.0;
    for i in 0..=sl.shells {
        for l in 0..=grid.time.steps {
            let (rho, sigma) = (sl.rho(i), grid.time.sigma(l));
            if !grid.determined(rho, sigma) {
                continue;
            }
            let y = Point::new(0.0, 0.0, rho);
            let exact = constant_potential_series(q0, 1.0, &y, rho + sigma);
            worst = worst.max((sol.u.at(i, 0, l) - exact).abs() / exact.abs().max(1e-12));
        }
    }
    worst
}

#[test]
fn constant_potential_matches_series() {
    for q0 in [-2.0, -0.5, 0.5, 2.0] {
        let e = oracle_error(q0, &GridSpec::default());
        assert!(e < 1e-3, "q0 = {q0}: {e:.3e}");
    }
}
