use std::fmt;
use std::sync::Arc;

use super::layout::Symmetry;
use super::potential::{fd_gradient, QDerivs};
use super::{laplacian, Point};

/// Circular cone with apex at the trace's apex: {x : (x-a)·axis ≥ cos·|x-a|}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cone {
    pub axis: Point,
    pub cos_half_angle: f64,
}

/// Spatial data prescribed on the forward light cone of an apex.
pub trait ConeData: Send + Sync {
    fn value(&self, x: &Point) -> f64;

    /// Value, gradient, Laplacian and bi-Laplacian; finite differences by default.
    fn derivs(&self, x: &Point) -> QDerivs {
        let f = |p: &Point| self.value(p);
        QDerivs {
            value: self.value(x),
            gradient: fd_gradient(f, x, 1e-4),
            laplacian: laplacian(f, x, 1e-3),
            bilaplacian: laplacian(|p: &Point| laplacian(f, p, 1e-3), x, 2e-2),
        }
    }

    /// Symmetry about the apex in the frame the solver uses.
    fn symmetry(&self) -> Symmetry {
        Symmetry::General
    }

    /// A cone outside of which the data and all ray averages vanish.
    fn support(&self) -> Option<Cone> {
        None
    }
}

/// Cone data g with its apex.
#[derive(Clone)]
pub struct ConeTrace {
    pub apex: Point,
    pub data: Arc<dyn ConeData>,
}

impl fmt::Debug for ConeTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConeTrace").field("apex", &self.apex).finish()
    }
}

impl ConeTrace {
    pub fn new(apex: Point, data: Arc<dyn ConeData>) -> Self {
        ConeTrace { apex, data }
    }

    pub fn constant(apex: Point, c: f64) -> Self {
        ConeTrace { apex, data: Arc::new(ConstantData(c)) }
    }

    /// Cone data from a closure of the spatial point.
    pub fn from_fn<F>(apex: Point, symmetry: Symmetry, f: F) -> Self
    where
        F: Fn(&Point) -> f64 + Send + Sync + 'static,
    {
        ConeTrace { apex, data: Arc::new(FnData { f, symmetry }) }
    }

    pub fn value(&self, x: &Point) -> f64 {
        self.data.value(x)
    }
}

struct ConstantData(f64);

impl ConeData for ConstantData {
    fn value(&self, _: &Point) -> f64 {
        self.0
    }

    fn derivs(&self, _: &Point) -> QDerivs {
        QDerivs { value: self.0, ..Default::default() }
    }

    fn symmetry(&self) -> Symmetry {
        Symmetry::Spherical
    }
}

struct FnData<F> {
    f: F,
    symmetry: Symmetry,
}

impl<F: Fn(&Point) -> f64 + Send + Sync> ConeData for FnData<F> {
    fn value(&self, x: &Point) -> f64 {
        (self.f)(x)
    }

    fn symmetry(&self) -> Symmetry {
        self.symmetry
    }
}
