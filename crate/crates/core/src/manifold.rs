//! The essential manifold as the image of SO(3) x S^2 under
//! `(R, t) -> skew(t) R`.
//!
//! Tangent vectors at `(R, t)` are pairs `(omega, dt)` with `dt . t = 0`;
//! `omega` is a body-frame rotation increment. The metric is the Euclidean
//! one on the stacked 6-vector. Retraction:
//! `R <- R exp([omega]x)`, `t <- (t + dt) / |t + dt|`.
//!
//! Gradient and Hessian below are those of the pullback
//! `xi -> f(retract(p, xi))` at `xi = 0`, so the RTR quadratic model is the
//! exact second-order model of the pulled-back cost.

use std::ops::{Add, Mul, Neg, Sub};

use crate::geometry::{
    essential_from_pose, skew, skew_adjoint, EssentialElement, Mat3, Rotation3, UnitVector3, Vec3,
};
use crate::problem::{ProblemData, Vec9};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TangentVector {
    pub omega: Vec3,
    pub dt: Vec3,
}

impl TangentVector {
    pub const ZERO: TangentVector = TangentVector {
        omega: Vec3::new(0.0, 0.0, 0.0),
        dt: Vec3::new(0.0, 0.0, 0.0),
    };

    pub fn new(omega: Vec3, dt: Vec3) -> Self {
        Self { omega, dt }
    }

    pub fn dot(&self, other: &TangentVector) -> f64 {
        self.omega.dot(&other.omega) + self.dt.dot(&other.dt)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Removes the component of `dt` along `t`.
    pub fn projected(self, t: &Vec3) -> Self {
        Self {
            omega: self.omega,
            dt: self.dt - t * t.dot(&self.dt),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.omega
            .iter()
            .chain(self.dt.iter())
            .all(|v| v.is_finite())
    }
}

impl Add for TangentVector {
    type Output = TangentVector;

    fn add(self, rhs: TangentVector) -> TangentVector {
        TangentVector::new(self.omega + rhs.omega, self.dt + rhs.dt)
    }
}

impl Sub for TangentVector {
    type Output = TangentVector;

    fn sub(self, rhs: TangentVector) -> TangentVector {
        TangentVector::new(self.omega - rhs.omega, self.dt - rhs.dt)
    }
}

impl Neg for TangentVector {
    type Output = TangentVector;

    fn neg(self) -> TangentVector {
        TangentVector::new(-self.omega, -self.dt)
    }
}

impl Mul<f64> for TangentVector {
    type Output = TangentVector;

    fn mul(self, s: f64) -> TangentVector {
        TangentVector::new(self.omega * s, self.dt * s)
    }
}

fn vec9(m: &Mat3) -> Vec9 {
    Vec9::from_column_slice(m.as_slice())
}

fn mat3(v: &Vec9) -> Mat3 {
    Mat3::from_column_slice(v.as_slice())
}

/// Differential of the parameterization:
/// `dE = skew(dt) R + skew(t) R skew(omega)`.
pub fn differential(p: &EssentialElement, xi: &TangentVector) -> Mat3 {
    let r = p.rotation().matrix();
    let t = p.translation().as_vec();
    skew(&xi.dt) * r + skew(t) * r * skew(&xi.omega)
}

/// Adjoint of [`differential`]: the tangent vector `g` with
/// `<g, xi> = <a, dE(xi)>` for every tangent `xi`.
fn differential_adjoint(p: &EssentialElement, a: &Mat3) -> TangentVector {
    let r = p.rotation().matrix();
    let t = p.translation().as_vec();
    let dt = skew_adjoint(&(a * r.transpose()));
    let omega = skew_adjoint(&((skew(t) * r).transpose() * a));
    TangentVector::new(omega, dt).projected(t)
}

/// Euclidean gradient `2 C vec(E)` as a 3x3 matrix.
fn euclidean_gradient(data: &ProblemData, e: &Mat3) -> Mat3 {
    mat3(&(data.c_times(&vec9(e)) * 2.0))
}

pub fn riemannian_gradient(data: &ProblemData, p: &EssentialElement) -> TangentVector {
    differential_adjoint(p, &euclidean_gradient(data, p.matrix()))
}

/// Hessian-vector product of the pulled-back cost.
pub fn riemannian_hessian_vec(
    data: &ProblemData,
    p: &EssentialElement,
    xi: &TangentVector,
) -> TangentVector {
    let r = p.rotation().matrix();
    let t = p.translation().as_vec();
    let g = euclidean_gradient(data, p.matrix());
    let de = differential(p, xi);

    // First-order part: dE^T (2C) dE.
    let gauss_newton = differential_adjoint(p, &mat3(&(data.c_times(&vec9(&de)) * 2.0)));

    // Second derivative of the parameterization contracted with G:
    // D2E[xi, eta] = skew(dt_xi) R skew(w_eta) + skew(dt_eta) R skew(w_xi)
    //              + 1/2 skew(t) R (skew(w_xi) skew(w_eta) + skew(w_eta) skew(w_xi))
    //              - (dt_xi . dt_eta) E
    let w = skew(&xi.omega);
    let p_mat = (skew(t) * r).transpose() * g;
    let omega_part = skew_adjoint(&((skew(&xi.dt) * r).transpose() * g))
        + skew_adjoint(&(w.transpose() * p_mat + p_mat * w.transpose())) * 0.5;
    let dt_part = skew_adjoint(&(g * (r * w).transpose())) - xi.dt * g.dot(p.matrix());
    let curvature = TangentVector::new(omega_part, dt_part).projected(t);

    gauss_newton + curvature
}

pub fn retract(p: &EssentialElement, xi: &TangentVector) -> EssentialElement {
    if xi.omega == Vec3::zeros() && xi.dt == Vec3::zeros() {
        return *p;
    }
    let r = *p.rotation() * Rotation3::exp(&xi.omega);
    let t = UnitVector3::normalize(p.translation().as_vec() + xi.dt)
        .expect("t + dt is nonzero for tangent dt");
    essential_from_pose(r, t)
}
