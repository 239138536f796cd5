//! Closed-form optimality certificate via Lagrangian duality.
//!
//! Given a feasible `x̂`, the multipliers `λ̂` are the least-squares solution
//! of `J(x̂) λ = Q x̂`. The dual value is `λ̂₁`, and `x̂` is certified when the
//! Hessian of the Lagrangian `M(λ̂) = Q − Σ λ̂ᵢ Aᵢ` is (numerically) positive
//! semidefinite and the duality gap vanishes.

use nalgebra::{Rotation3 as NaRotation, SymmetricEigen, Unit};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, PrimalPoint, Vec12, Vec3};
use crate::problem::{constraint_residuals, cost, jacobian6, Mat12, ProblemData, Vec6};

const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GapMode {
    /// `gap <= tau_gap`.
    Absolute,
    /// `gap <= tau_gap * max(f_R, floor)`.
    Relative { floor: f64 },
}

/// Coordinate frame in which the multipliers are computed.
///
/// The relaxation singles out coordinate axes, so the certificate depends on
/// how camera 1 is oriented even though the cost does not. When the
/// translation of `x̂` lies close to an axis, a row of `E` is nearly zero and
/// the multiplier system becomes ill conditioned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificationFrame {
    /// The problem as given.
    #[default]
    Input,
    /// Camera 1 rotated so that the translation of `x̂` becomes
    /// `(1, 1, 1)/√3`. Multipliers and eigenvalues are reported in that frame.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertifierConfig {
    pub tau_mu: f64,
    pub tau_gap: f64,
    pub gap_mode: GapMode,
    pub frame: CertificationFrame,
    /// Largest admissible constraint residual of `x̂`.
    pub feasibility_tolerance: f64,
}

impl Default for CertifierConfig {
    fn default() -> Self {
        Self {
            tau_mu: -0.02,
            tau_gap: 1e-14,
            gap_mode: GapMode::Absolute,
            frame: CertificationFrame::Input,
            feasibility_tolerance: 1e-6,
        }
    }
}

impl CertifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_mu <= 0.0) {
            return Err(Error::InvalidConfig("tau_mu must be <= 0".into()));
        }
        if !(self.tau_gap >= 0.0) {
            return Err(Error::InvalidConfig("tau_gap must be >= 0".into()));
        }
        if let GapMode::Relative { floor } = self.gap_mode {
            if !(floor > 0.0) {
                return Err(Error::InvalidConfig(
                    "relative gap floor must be > 0".into(),
                ));
            }
        }
        if !(self.feasibility_tolerance > 0.0) {
            return Err(Error::InvalidConfig(
                "feasibility tolerance must be > 0".into(),
            ));
        }
        Ok(())
    }

    fn gap_threshold(&self, primal_cost: f64) -> f64 {
        match self.gap_mode {
            GapMode::Absolute => self.tau_gap,
            GapMode::Relative { floor } => self.tau_gap * primal_cost.max(floor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Optimal,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    RankDeficientJacobian { sigma_min: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub lambda_hat: [f64; 6],
    pub primal_cost: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub min_eigenvalue: f64,
    /// `‖J λ̂ − Q x̂‖`.
    pub residual_norm: f64,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<Diagnostic>,
    #[serde(default)]
    pub frame: CertificationFrame,
}

impl CertificateReport {
    pub fn is_optimal(&self) -> bool {
        self.verdict == Verdict::Optimal
    }

    pub fn lambda(&self) -> Vec6 {
        Vec6::from_column_slice(&self.lambda_hat)
    }
}

/// Multipliers `λ̂` and the residual norm `‖J λ̂ − Q x̂‖`.
pub fn dual_candidate(data: &ProblemData, x_hat: &PrimalPoint) -> Result<(Vec6, f64)> {
    let x = x_hat.as_vector();
    let j = jacobian6(x);
    let sigma_min = j.singular_values().min();
    if sigma_min <= RANK_TOLERANCE {
        return Err(Error::RankDeficientJacobian { sigma_min });
    }
    let b = data.q_times(x);
    let qr = j.qr();
    let qtb = qr.q().transpose() * b;
    let lambda = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or(Error::RankDeficientJacobian { sigma_min })?;
    let residual = (j * lambda - b).norm();
    Ok((lambda, residual))
}

/// `M(λ) = Q − Σ λᵢ Aᵢ`.
pub fn hessian_of_lagrangian(data: &ProblemData, lambda: &Vec6) -> Mat12 {
    let mut m = data.q;
    for (a, l) in data.a.iter().zip(lambda.iter()) {
        m -= a * *l;
    }
    m
}

pub fn min_eigenvalue(m: &Mat12) -> f64 {
    SymmetricEigen::new(*m).eigenvalues.min()
}

/// Rotation taking `t` to `(1, 1, 1)/√3`.
pub fn balancing_rotation(t: &Vec3) -> Mat3 {
    let target = Vec3::repeat(1.0).normalize();
    match NaRotation::rotation_between(t, &target) {
        Some(r) => *r.matrix(),
        // `t` is antiparallel to the target: any half-turn about an axis
        // orthogonal to it will do.
        None => *NaRotation::from_axis_angle(
            &Unit::new_normalize(Vec3::new(1.0, -1.0, 0.0)),
            std::f64::consts::PI,
        )
        .matrix(),
    }
}

fn feasibility_residual(x: &Vec12) -> f64 {
    constraint_residuals(x).amax()
}

/// Runs the verification: returns `Optimal` only when both the eigenvalue and
/// gap tests pass. A rank-deficient Jacobian yields `Unknown` with a
/// diagnostic rather than an error.
pub fn certify(
    data: &ProblemData,
    x_hat: &PrimalPoint,
    cfg: &CertifierConfig,
) -> Result<CertificateReport> {
    cfg.validate()?;
    let residual = feasibility_residual(x_hat.as_vector());
    if !(residual <= cfg.feasibility_tolerance) {
        return Err(Error::Infeasible {
            residual,
            tolerance: cfg.feasibility_tolerance,
        });
    }
    if !cost(data, x_hat).is_finite() {
        return Err(Error::NonFiniteCost);
    }
    let rotated;
    let (data, x_hat) = match cfg.frame {
        CertificationFrame::Input => (data, *x_hat),
        CertificationFrame::Balanced => {
            let p = balancing_rotation(&x_hat.translation());
            rotated = data.rotated_first_frame(&p);
            let x = PrimalPoint::from_parts(&(p * x_hat.essential()), &(p * x_hat.translation()));
            (&rotated, x)
        }
    };
    let x_hat = &x_hat;
    let primal_cost = cost(data, x_hat);

    let (lambda, residual_norm, diagnostic) = match dual_candidate(data, x_hat) {
        Ok((l, r)) => (l, r, None),
        Err(Error::RankDeficientJacobian { sigma_min }) => {
            let j = jacobian6(x_hat.as_vector());
            let b = data.q_times(x_hat.as_vector());
            let l = j
                .svd(true, true)
                .solve(&b, RANK_TOLERANCE)
                .unwrap_or_else(|_| Vec6::zeros());
            let r = (j * l - b).norm();
            (l, r, Some(Diagnostic::RankDeficientJacobian { sigma_min }))
        }
        Err(e) => return Err(e),
    };

    let dual_value = lambda[0];
    let gap = (primal_cost - dual_value).abs();
    let min_eig = min_eigenvalue(&hessian_of_lagrangian(data, &lambda));
    let passes = min_eig >= cfg.tau_mu && gap <= cfg.gap_threshold(primal_cost);
    let verdict = if passes && diagnostic.is_none() {
        Verdict::Optimal
    } else {
        Verdict::Unknown
    };

    let mut lambda_hat = [0.0; 6];
    lambda_hat.copy_from_slice(lambda.as_slice());
    Ok(CertificateReport {
        lambda_hat,
        primal_cost,
        dual_value,
        gap,
        min_eigenvalue: min_eig,
        residual_norm,
        verdict,
        diagnostic,
        frame: cfg.frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{essential_from_pose, Mat3, Rotation3, UnitVector3, Vec3};
    use crate::init::{eight_point, random_essential};
    use crate::problem::{build_data_matrix, constraint_matrices, CONSTRAINT_OFFSETS};
    use crate::rtr::{solve_rtr, RtrConfig};
    use crate::synth::{generate, SceneConfig, SyntheticProblem};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(n: usize, noise: f64, seed: u64) -> (SyntheticProblem, ProblemData) {
        let p = generate(&SceneConfig {
            n_points: n,
            noise_px: noise,
            seed,
            ..SceneConfig::default()
        })
        .unwrap();
        let d = build_data_matrix(&p.pairs).unwrap();
        (p, d)
    }

    /// Number of eigenvalues of `m` below `mu`, by Sylvester's law of inertia
    /// on an unpivoted LDLᵀ factorization of `m − μI`.
    fn count_below(m: &Mat12, mu: f64) -> usize {
        let mut a = m - Mat12::identity() * mu;
        let mut negatives = 0;
        for k in 0..12 {
            let mut d = a[(k, k)];
            if d == 0.0 {
                d = -1e-300;
            }
            if d < 0.0 {
                negatives += 1;
            }
            for i in k + 1..12 {
                let l = a[(i, k)] / d;
                for j in k + 1..12 {
                    a[(i, j)] -= l * a[(k, j)];
                }
            }
        }
        negatives
    }

    fn bisection_min_eigenvalue(m: &Mat12) -> f64 {
        let bound = m.abs().row_sum().max() + 1.0;
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count_below(m, mid) >= 1 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn min_eigenvalue_examples() {
        let d = Mat12::from_diagonal(&Vec12::from_fn(|i, _| (i + 1) as f64));
        assert!((min_eigenvalue(&d) - 1.0).abs() < 1e-12);

        let (_, data) = scene(30, 1.0, 3);
        assert!(min_eigenvalue(&data.q) >= -1e-10);
    }

    #[test]
    fn min_eigenvalue_matches_bisection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = Mat12::from_fn(|_, _| rng.random::<f64>() * 2.0 - 1.0);
            let m = (a + a.transpose()) * 0.5;
            let oracle = bisection_min_eigenvalue(&m);
            assert!((min_eigenvalue(&m) - oracle).abs() <= 1e-9);
        }
    }

    #[test]
    fn hessian_of_lagrangian_examples() {
        let (_, data) = scene(20, 0.5, 1);
        assert_eq!(hessian_of_lagrangian(&data, &Vec6::zeros()), data.q);
        let m = hessian_of_lagrangian(&data, &Vec6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let mut expect = data.q;
        for i in 9..12 {
            expect[(i, i)] -= 1.0;
        }
        assert_eq!(m, expect);
        assert_eq!(m, m.transpose());
    }

    #[test]
    fn lagrangian_identity() {
        let (_, data) = scene(20, 1.0, 2);
        let a = constraint_matrices();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = Vec12::from_fn(|_, _| rng.random::<f64>() - 0.5);
            let l = Vec6::from_fn(|_, _| rng.random::<f64>() - 0.5);
            let direct = x.dot(&(data.q * x))
                + (0..6)
                    .map(|i| l[i] * (CONSTRAINT_OFFSETS[i] - x.dot(&(a[i] * x))))
                    .sum::<f64>();
            let via_m = x.dot(&(hessian_of_lagrangian(&data, &l) * x)) + l[0];
            assert!((direct - via_m).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn noiseless_optimum_has_zero_multipliers() {
        for seed in 0..20 {
            let (p, data) = scene(20, 0.0, seed);
            let rep = certify(
                &data,
                &p.gt_essential.primal_point(),
                &CertifierConfig::default(),
            )
            .unwrap();
            assert_eq!(rep.verdict, Verdict::Optimal);
            assert!(rep.lambda().amax() <= 1e-10);
            assert!(rep.min_eigenvalue >= -1e-10);
            assert_eq!(rep.dual_value, rep.lambda_hat[0]);
        }
    }

    #[test]
    fn noisy_optimum_residual_is_lagrangian_stationarity() {
        // At a Riemannian optimum the residual of the multiplier system is
        // exactly ‖M(λ̂) x̂‖ and is orthogonal to x̂.
        for seed in 0..50 {
            let (p, data) = scene(50, 1.0, seed);
            let sol = solve_rtr(
                &data,
                &eight_point(&p.pairs).unwrap(),
                &RtrConfig::default(),
            )
            .unwrap()
            .solution;
            let x = sol.primal_point();
            let (l, res) = dual_candidate(&data, &x).unwrap();
            let mx = hessian_of_lagrangian(&data, &l) * x.as_vector();
            let scale = data.q_times(x.as_vector()).norm();
            assert!((mx.norm() - res).abs() <= 1e-9 * scale);
            assert!(x.as_vector().dot(&mx).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn zero_row_is_rank_deficient() {
        let (_, data) = scene(20, 0.0, 1);
        let t = Vec3::x();
        let r = Rotation3::from_axis_angle(&Vec3::new(0.3, 0.4, 0.5).normalize(), 0.7);
        let e = essential_from_pose(r, UnitVector3::normalize(t).unwrap());
        // skew(e_x) has a zero first row.
        assert!(e.matrix().row(0).norm() < 1e-15);
        let x = e.primal_point();
        assert!(matches!(
            dual_candidate(&data, &x),
            Err(Error::RankDeficientJacobian { .. })
        ));
        let rep = certify(&data, &x, &CertifierConfig::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::Unknown);
        assert!(matches!(
            rep.diagnostic,
            Some(Diagnostic::RankDeficientJacobian { .. })
        ));
    }

    #[test]
    fn balancing_rotation_hits_target() {
        let target = Vec3::repeat(1.0).normalize();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut inputs: Vec<Vec3> = (0..50)
            .map(|_| Vec3::from_fn(|_, _| rng.random::<f64>() - 0.5).normalize())
            .collect();
        inputs.extend([Vec3::x(), target, -target]);
        for t in inputs {
            let p = balancing_rotation(&t);
            assert!((p * t - target).norm() <= 1e-12, "{t:?}");
            assert!((p.transpose() * p - Mat3::identity()).amax() <= 1e-12);
            assert!((p.determinant() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn balanced_frame_resolves_axis_aligned_translation() {
        // Noiseless scene whose translation is exactly the x axis, so the
        // true essential matrix has a zero first row.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let r = Rotation3::from_axis_angle(&Vec3::new(0.1, 0.9, 0.2).normalize(), 0.3);
        let t = UnitVector3::normalize(Vec3::x()).unwrap();
        let pairs: Vec<_> = (0..30)
            .map(|_| {
                let x2 = Vec3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    4.0 + rng.random::<f64>(),
                );
                let x1 = r.matrix() * x2 + t.as_vec();
                crate::problem::BearingPair::new(
                    UnitVector3::normalize(x1).unwrap(),
                    UnitVector3::normalize(x2).unwrap(),
                )
            })
            .collect();
        let data = build_data_matrix(&pairs).unwrap();
        let x = essential_from_pose(r, t).primal_point();

        let input = certify(&data, &x, &CertifierConfig::default()).unwrap();
        assert_eq!(input.verdict, Verdict::Unknown);
        assert!(input.diagnostic.is_some());

        let balanced = certify(
            &data,
            &x,
            &CertifierConfig {
                frame: CertificationFrame::Balanced,
                ..CertifierConfig::default()
            },
        )
        .unwrap();
        assert_eq!(balanced.verdict, Verdict::Optimal);
        assert_eq!(balanced.frame, CertificationFrame::Balanced);
        assert!(balanced.lambda().amax() <= 1e-10);
    }

    #[test]
    fn balanced_frame_is_identity_on_balanced_translation() {
        let (p, data) = scene(30, 1.0, 6);
        let sol = solve_rtr(
            &data,
            &eight_point(&p.pairs).unwrap(),
            &RtrConfig::default(),
        )
        .unwrap()
        .solution;
        // Rotate the whole problem so that the solution's translation is
        // already balanced; the two frames must then agree.
        let q = balancing_rotation(sol.translation().as_vec());
        let data = data.rotated_first_frame(&q);
        let x = PrimalPoint::from_parts(&(q * sol.matrix()), &(q * sol.translation().as_vec()));
        let a = certify(&data, &x, &CertifierConfig::default()).unwrap();
        let b = certify(
            &data,
            &x,
            &CertifierConfig {
                frame: CertificationFrame::Balanced,
                ..CertifierConfig::default()
            },
        )
        .unwrap();
        assert_eq!(a.verdict, b.verdict);
        assert!((a.lambda() - b.lambda()).norm() <= 1e-6 * a.lambda().norm().max(1e-12));
        assert!((a.min_eigenvalue - b.min_eigenvalue).abs() <= 1e-9);
    }

    #[test]
    fn perturbed_noiseless_point_is_not_certified() {
        for seed in 0..200 {
            let (p, data) = scene(20, 0.0, seed);
            let axis = random_essential(seed).translation().into_inner();
            let r =
                *p.gt_essential.rotation() * Rotation3::from_axis_angle(&axis, 5f64.to_radians());
            let x = essential_from_pose(r, *p.gt_essential.translation()).primal_point();
            let rep = certify(&data, &x, &CertifierConfig::default()).unwrap();
            assert_eq!(rep.verdict, Verdict::Unknown, "seed {seed}");
        }
    }

    #[test]
    fn scale_coupling() {
        let (p, data) = scene(40, 1.0, 4);
        let sol = solve_rtr(
            &data,
            &eight_point(&p.pairs).unwrap(),
            &RtrConfig::default(),
        )
        .unwrap()
        .solution;
        let doubled: Vec<_> = p.pairs.iter().chain(p.pairs.iter()).copied().collect();
        let data2 = build_data_matrix(&doubled).unwrap();
        let cfg = CertifierConfig::default();
        let r1 = certify(&data, &sol.primal_point(), &cfg).unwrap();
        let r2 = certify(&data2, &sol.primal_point(), &cfg).unwrap();
        assert!((r2.lambda() - r1.lambda() * 2.0).norm() <= 1e-12 * r1.lambda().norm());
        assert!((r2.primal_cost - 2.0 * r1.primal_cost).abs() <= 1e-12 * r1.primal_cost);
        // Both gaps sit at rounding level, so compare them at that level.
        let rounding = 1e-15 * (r2.lambda().norm() + r2.primal_cost);
        assert!((r2.gap - 2.0 * r1.gap).abs() <= rounding);
    }

    #[test]
    fn weak_duality_holds_for_certified_points() {
        let cfg = CertifierConfig::default();
        for seed in 0..50 {
            let (p, data) = scene(30, 0.5, seed);
            let sol = solve_rtr(
                &data,
                &eight_point(&p.pairs).unwrap(),
                &RtrConfig::default(),
            )
            .unwrap()
            .solution;
            let rep = certify(&data, &sol.primal_point(), &cfg).unwrap();
            if rep.min_eigenvalue >= 0.0 {
                assert!(rep.dual_value <= rep.primal_cost + cfg.tau_gap);
            }
            if rep.min_eigenvalue < cfg.tau_mu {
                assert_eq!(rep.verdict, Verdict::Unknown);
            }
        }
    }

    #[test]
    fn infeasible_point_rejected() {
        let (_, data) = scene(20, 0.0, 1);
        let x = PrimalPoint::from_parts(&(Mat3::identity() * 2.0), &Vec3::z());
        assert!(matches!(
            certify(&data, &x, &CertifierConfig::default()),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let bad = CertifierConfig {
            tau_mu: 0.1,
            ..CertifierConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = CertifierConfig {
            gap_mode: GapMode::Relative { floor: 0.0 },
            ..CertifierConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(CertifierConfig::default().validate().is_ok());
    }
}
