//! Riemannian trust-region solver with a truncated conjugate-gradient
//! (Steihaug-Toint) inner loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EssentialElement;
use crate::manifold::{retract, riemannian_gradient, riemannian_hessian_vec, TangentVector};
use crate::problem::ProblemData;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RtrConfig {
    pub max_outer_iterations: usize,
    pub gradient_norm_tolerance: f64,
    pub initial_trust_radius: f64,
    pub max_trust_radius: f64,
    /// Minimum ratio of actual to predicted decrease for accepting a step.
    pub acceptance_threshold: f64,
    pub max_inner_iterations: usize,
    /// Inner residual target `|r| <= |r0| min(|r0|^theta, kappa)`.
    pub tcg_theta: f64,
    pub tcg_kappa: f64,
}

impl Default for RtrConfig {
    fn default() -> Self {
        Self {
            max_outer_iterations: 100,
            gradient_norm_tolerance: 1e-10,
            initial_trust_radius: 0.1,
            max_trust_radius: 1.0,
            acceptance_threshold: 0.1,
            max_inner_iterations: 25,
            tcg_theta: 1.0,
            tcg_kappa: 0.1,
        }
    }
}

impl RtrConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.gradient_norm_tolerance,
            self.initial_trust_radius,
            self.max_trust_radius,
            self.acceptance_threshold,
            self.tcg_theta,
            self.tcg_kappa,
        ];
        if positive.iter().any(|v| !(*v > 0.0))
            || self.max_outer_iterations == 0
            || self.max_inner_iterations == 0
        {
            return Err(Error::InvalidConfig(
                "RTR parameters must be positive".into(),
            ));
        }
        if self.acceptance_threshold > 0.25 {
            return Err(Error::InvalidConfig(
                "RTR acceptance threshold must lie in (0, 1/4]".into(),
            ));
        }
        if self.initial_trust_radius > self.max_trust_radius {
            return Err(Error::InvalidConfig(
                "initial trust radius exceeds the maximum".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: EssentialElement,
    pub final_cost: f64,
    pub gradient_norm: f64,
    pub outer_iterations: usize,
    /// Cost at the initial point followed by the cost after every accepted
    /// step.
    pub cost_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InnerStop {
    Converged,
    NegativeCurvature,
    Boundary,
    MaxIterations,
}

struct InnerResult {
    eta: TangentVector,
    h_eta: TangentVector,
    stop: InnerStop,
}

/// Positive root `tau` of `|eta + tau d| = radius`.
fn to_boundary(eta: &TangentVector, d: &TangentVector, radius: f64) -> f64 {
    let dd = d.dot(d);
    let ed = eta.dot(d);
    let ee = eta.dot(eta);
    let disc = (ed * ed + dd * (radius * radius - ee)).max(0.0);
    (-ed + disc.sqrt()) / dd
}

fn truncated_cg(
    data: &ProblemData,
    p: &EssentialElement,
    grad: &TangentVector,
    radius: f64,
    cfg: &RtrConfig,
) -> InnerResult {
    let mut eta = TangentVector::ZERO;
    let mut h_eta = TangentVector::ZERO;
    let mut r = *grad;
    let mut rr = r.dot(&r);
    let r0 = rr.sqrt();
    let target = r0 * r0.powf(cfg.tcg_theta).min(cfg.tcg_kappa);
    let mut d = -r;

    for _ in 0..cfg.max_inner_iterations {
        let hd = riemannian_hessian_vec(data, p, &d);
        let curvature = d.dot(&hd);
        if curvature <= 0.0 {
            let tau = to_boundary(&eta, &d, radius);
            return InnerResult {
                eta: eta + d * tau,
                h_eta: h_eta + hd * tau,
                stop: InnerStop::NegativeCurvature,
            };
        }
        let alpha = rr / curvature;
        let next = eta + d * alpha;
        if next.norm() >= radius {
            let tau = to_boundary(&eta, &d, radius);
            return InnerResult {
                eta: eta + d * tau,
                h_eta: h_eta + hd * tau,
                stop: InnerStop::Boundary,
            };
        }
        eta = next;
        h_eta = h_eta + hd * alpha;
        r = r + hd * alpha;
        let rr_next = r.dot(&r);
        if rr_next.sqrt() <= target {
            return InnerResult {
                eta,
                h_eta,
                stop: InnerStop::Converged,
            };
        }
        d = -r + d * (rr_next / rr);
        rr = rr_next;
    }
    InnerResult {
        eta,
        h_eta,
        stop: InnerStop::MaxIterations,
    }
}

/// Minimizes `vec(E)^T C vec(E)` over the essential manifold from `init`.
pub fn solve_rtr(
    data: &ProblemData,
    init: &EssentialElement,
    cfg: &RtrConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    let mut x = *init;
    let mut fx = data.cost_e(x.matrix());
    let mut grad = riemannian_gradient(data, &x);
    if !fx.is_finite() || !grad.is_finite() {
        return Err(Error::NonFiniteCost);
    }
    let mut radius = cfg.initial_trust_radius;
    let mut cost_trace = vec![fx];
    let mut iterations = 0;

    while iterations < cfg.max_outer_iterations && grad.norm() > cfg.gradient_norm_tolerance {
        iterations += 1;
        let inner = truncated_cg(data, &x, &grad, radius, cfg);
        let candidate = retract(&x, &inner.eta);
        let f_candidate = data.cost_e(candidate.matrix());
        if !f_candidate.is_finite() {
            return Err(Error::NonFiniteCost);
        }

        let predicted = -(grad.dot(&inner.eta) + 0.5 * inner.eta.dot(&inner.h_eta));
        // Regularize the ratio so that decreases at rounding level still
        // count as agreement with the model.
        let reg = fx.abs().max(1.0) * f64::EPSILON * 1e3;
        let rho = (fx - f_candidate + reg) / (predicted + reg);

        let hit_boundary = matches!(
            inner.stop,
            InnerStop::Boundary | InnerStop::NegativeCurvature
        );
        if rho < 0.25 {
            radius *= 0.25;
        } else if rho > 0.75 && hit_boundary {
            radius = (2.0 * radius).min(cfg.max_trust_radius);
        }

        if rho > cfg.acceptance_threshold && f_candidate <= fx {
            x = candidate;
            fx = f_candidate;
            grad = riemannian_gradient(data, &x);
            if !grad.is_finite() {
                return Err(Error::NonFiniteCost);
            }
            cost_trace.push(fx);
        }
        if radius < 1e-15 {
            break;
        }
    }

    Ok(SolveReport {
        solution: x,
        final_cost: fx,
        gradient_norm: grad.norm(),
        outer_iterations: iterations,
        cost_trace,
    })
}
