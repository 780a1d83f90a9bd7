//! Grids, coordinates, potentials and the γ^k basis.

pub mod cone;
pub mod harmonics;
pub mod jet;
pub mod layout;
pub mod potential;
pub mod quad;
pub mod sphere;
pub mod table;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub use cone::{ConeData, ConeTrace};
pub use layout::{ApexFrame, GridLayout, SpatialLayout, Symmetry, TimeAxis};
pub use potential::{Potential, PotentialKind, PotentialSpec, PotentialSymmetry, QDerivs};
pub use sphere::{sphere_integral, SphereGrid};
pub use table::{SpaceTimeField, SpatialTable};

pub type Point = Vector3<f64>;

/// γ^k(x, t) = (t² - |x|²)^k / k! for k ≥ 0 and 0 for k < 0.
pub fn gamma_eval(k: i64, x: &Point, t: f64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    gamma_of(k as usize, t * t - x.norm_squared())
}

/// z^k / k!.
#[inline]
pub fn gamma_of(k: usize, z: f64) -> f64 {
    let mut v = 1.0;
    for j in 1..=k {
        v *= z / j as f64;
    }
    v
}

/// Two unit vectors completing e to a right-handed orthonormal frame.
pub fn perpendicular_basis(e: &Point) -> (Point, Point) {
    let helper = if e[0].abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (helper - e * helper.dot(e)).normalize();
    (e1, e.cross(&e1))
}

/// Fourth-order central finite-difference Laplacian.
pub fn laplacian<F: Fn(&Point) -> f64>(f: F, x: &Point, step: f64) -> f64 {
    let f0 = f(x);
    let mut s = 0.0;
    for i in 0..3 {
        let mut e = Vector3::zeros();
        e[i] = step;
        let p1 = f(&(x + e));
        let m1 = f(&(x - e));
        let p2 = f(&(x + 2.0 * e));
        let m2 = f(&(x - 2.0 * e));
        s += -p2 + 16.0 * p1 - 30.0 * f0 + 16.0 * m1 - m2;
    }
    s / (12.0 * step * step)
}

/// Derivative along (x - center)/|x - center| by fourth-order central differences.
pub fn radial_derivative<F: Fn(&Point) -> f64>(f: F, x: &Point, center: &Point, step: f64) -> Result<f64> {
    let d = x - center;
    let n = d.norm();
    if n == 0.0 {
        return Err(Error::ApexPoint);
    }
    let e = d * (step / n);
    Ok((8.0 * (f(&(x + e)) - f(&(x - e))) - (f(&(x + 2.0 * e)) - f(&(x - 2.0 * e)))) / (12.0 * step))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_examples() {
        let x = Point::new(0.3, -0.1, 0.2);
        assert_eq!(gamma_eval(0, &x, 0.7), 1.0);
        assert_eq!(gamma_eval(1, &Point::zeros(), 2.0), 4.0);
        assert_eq!(gamma_eval(-3, &x, 0.7), 0.0);
        assert!((gamma_eval(3, &Point::zeros(), 2.0) - 64.0 / 6.0).abs() < 1e-13);
    }

    #[test]
    fn laplacian_examples() {
        let x = Point::new(0.4, -1.2, 2.0);
        assert!((laplacian(|p: &Point| p.norm_squared(), &x, 1e-2) - 6.0).abs() < 1e-8);
        assert_eq!(laplacian(|_: &Point| 3.0, &x, 1e-2), 0.0);
        assert!(laplacian(|p: &Point| p[0].sin(), &Point::zeros(), 1e-2).abs() < 1e-10);
    }

    #[test]
    fn radial_derivative_examples() {
        let a = Point::new(0.0, 0.0, 1.0);
        let x = Point::new(0.3, 0.4, 0.2);
        let d = radial_derivative(|p: &Point| (p - a).norm(), &x, &a, 1e-3).unwrap();
        assert!((d - 1.0).abs() < 1e-8);
        let d2 = radial_derivative(|p: &Point| (p - a).norm_squared(), &x, &a, 1e-3).unwrap();
        assert!((d2 - 2.0 * (x - a).norm()).abs() < 1e-8);
        assert!(radial_derivative(|_: &Point| 1.0, &a, &a, 1e-3).is_err());
    }
}
