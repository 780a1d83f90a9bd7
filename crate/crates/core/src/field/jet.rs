//! Truncated Taylor arithmetic in one variable.
//!
//! A `Jet` holds the coefficients of `(x - x0)^k`, `k = 0..ORDER`, so the
//! k-th derivative is `k! * c[k]`. Only what the bump profiles need is here.

use std::ops::{Add, Mul, Neg, Sub};

pub const ORDER: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet(pub [f64; ORDER]);

const FACT: [f64; ORDER] = [1.0, 1.0, 2.0, 6.0, 24.0];

impl Jet {
    pub fn constant(c: f64) -> Self {
        let mut j = [0.0; ORDER];
        j[0] = c;
        Jet(j)
    }

    pub fn variable(x0: f64) -> Self {
        let mut j = [0.0; ORDER];
        j[0] = x0;
        j[1] = 1.0;
        Jet(j)
    }

    pub fn zero() -> Self {
        Jet([0.0; ORDER])
    }

    pub fn value(&self) -> f64 {
        self.0[0]
    }

    /// k-th derivative at the expansion point.
    pub fn d(&self, k: usize) -> f64 {
        self.0[k] * FACT[k]
    }

    pub fn scale(self, s: f64) -> Self {
        let mut out = self.0;
        for c in &mut out {
            *c *= s;
        }
        Jet(out)
    }

    /// Derivative as a jet; the top coefficient is lost and set to zero.
    pub fn derivative(self) -> Self {
        let mut out = [0.0; ORDER];
        for k in 0..ORDER - 1 {
            out[k] = (k + 1) as f64 * self.0[k + 1];
        }
        Jet(out)
    }

    pub fn recip(self) -> Self {
        let f = &self.0;
        let mut r = [0.0; ORDER];
        r[0] = 1.0 / f[0];
        for k in 1..ORDER {
            let mut s = 0.0;
            for j in 1..=k {
                s += f[j] * r[k - j];
            }
            r[k] = -s * r[0];
        }
        Jet(r)
    }

    pub fn exp(self) -> Self {
        let f = &self.0;
        let mut e = [0.0; ORDER];
        e[0] = f[0].exp();
        for k in 1..ORDER {
            let mut s = 0.0;
            for j in 1..=k {
                s += j as f64 * f[j] * e[k - j];
            }
            e[k] = s / k as f64;
        }
        Jet(e)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        let mut out = self.0;
        for (a, b) in out.iter_mut().zip(o.0) {
            *a += b;
        }
        Jet(out)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        let mut out = self.0;
        for (a, b) in out.iter_mut().zip(o.0) {
            *a -= b;
        }
        Jet(out)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut out = [0.0; ORDER];
        for i in 0..ORDER {
            for j in 0..ORDER - i {
                out[i + j] += self.0[i] * o.0[j];
            }
        }
        Jet(out)
    }
}

/// Radial derivatives of a function of `|x|` packed for the Cartesian operators.
#[derive(Clone, Copy, Debug)]
pub struct RadialDerivs {
    pub value: f64,
    pub d1: f64,
    pub laplacian: f64,
    pub bilaplacian: f64,
}

/// Δf and Δ²f of a radial profile given its jet at r.
///
/// Near the origin the profile must be even; the limits Δf = 3f'' and
/// Δ²f = 5f'''' are used below a small radius.
pub fn radial_operators(f: &Jet, r: f64) -> RadialDerivs {
    if r < 1e-7 {
        return RadialDerivs {
            value: f.d(0),
            d1: 0.0,
            laplacian: 3.0 * f.d(2),
            bilaplacian: 5.0 * f.d(4),
        };
    }
    RadialDerivs {
        value: f.d(0),
        d1: f.d(1),
        laplacian: f.d(2) + 2.0 * f.d(1) / r,
        bilaplacian: f.d(4) + 4.0 * f.d(3) / r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_and_recip_match_closed_forms() {
        let x = Jet::variable(0.3);
        let e = (x * x).exp();
        // d/dx exp(x^2) = 2x exp(x^2)
        let v = (0.09f64).exp();
        assert!((e.d(1) - 0.6 * v).abs() < 1e-14);
        assert!((e.d(2) - (2.0 + 4.0 * 0.09) * v).abs() < 1e-13);
        let r = x.recip();
        assert!((r.d(3) + 6.0 / 0.3f64.powi(4)).abs() < 1e-9);
        assert!((r.d(4) - 24.0 / 0.3f64.powi(5)).abs() < 1e-8);
    }

    #[test]
    fn radial_operators_of_r4() {
        let x = Jet::variable(0.7);
        let f = x * x * x * x;
        let ops = radial_operators(&f, 0.7);
        assert!((ops.laplacian - 20.0 * 0.49).abs() < 1e-12);
        assert!((ops.bilaplacian - 120.0).abs() < 1e-10);
    }
}
