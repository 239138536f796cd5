//! Cost and constraint structure of the relative pose QCQP.
//!
//! The objective is `x^T Q x` with `Q = blockdiag(C, 0)` and
//! `C = sum_i (f'_i (x) f_i)(f'_i (x) f_i)^T`. The relaxed feasible set is
//! cut out by six quadratic constraints `x^T A_i x = c_i` (`c_1 = 1`, others 0):
//!
//! | i | constraint                     |
//! |---|--------------------------------|
//! | 1 | `t^T t = 1`                    |
//! | 2 | `e_1^T e_1 = t_2^2 + t_3^2`    |
//! | 3 | `e_2^T e_2 = t_1^2 + t_3^2`    |
//! | 4 | `e_3^T e_3 = t_1^2 + t_2^2`    |
//! | 5 | `e_1^T e_3 + t_1 t_3 = 0`      |
//! | 6 | `e_2^T e_3 + t_2 t_3 = 0`      |
//!
//! where `e_k` is the k-th row of `E`. The seventh constraint of the full
//! `E E^T = [t]x [t]x^T` description, `e_1^T e_2 + t_1 t_2 = 0`, is kept only
//! to expose the rank deficiency of the full constraint Jacobian.

use nalgebra::{DMatrix, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, PrimalPoint, UnitVector3, Vec12};

pub type Mat9 = SMatrix<f64, 9, 9>;
pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Vec9 = SVector<f64, 9>;
pub type Vec6 = SVector<f64, 6>;
pub type Jacobian6 = SMatrix<f64, 12, 6>;

/// One correspondence: bearing `f` in camera 1, `f_prime` in camera 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BearingPair {
    pub f: UnitVector3,
    pub f_prime: UnitVector3,
}

impl BearingPair {
    pub fn new(f: UnitVector3, f_prime: UnitVector3) -> Self {
        Self { f, f_prime }
    }

    /// `f' (x) f`, so that `kron . vec(E) = f^T E f'`.
    pub fn kron(&self) -> Vec9 {
        let a = self.f.as_vec();
        let b = self.f_prime.as_vec();
        Vec9::from_fn(|k, _| b[k / 3] * a[k % 3])
    }

    /// Algebraic epipolar error `f^T E f'`.
    pub fn algebraic_error(&self, e: &Mat3) -> f64 {
        self.f.as_vec().dot(&(e * self.f_prime.as_vec()))
    }
}

/// Scaling applied to `C` when building the problem.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostNormalization {
    /// Raw sum of squared algebraic errors.
    #[default]
    None,
    /// Divide `C` by its trace (equivalently by the number of pairs).
    Trace,
}

/// Data matrices of one problem instance.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub c: Mat9,
    pub q: Mat12,
    pub a: [Mat12; 6],
    pub a_dropped: Mat12,
    pub n_points: usize,
    /// Rows `(f'_i (x) f_i)^T`, scaled like `C`. Lets the cost be evaluated as
    /// a sum of squares, which is exact to rounding even when it is tiny.
    design: Option<DMatrix<f64>>,
}

fn sym_set(m: &mut Mat12, pairs: &[(usize, usize)], value: f64) {
    for &(i, j) in pairs {
        // 1-based indices in the `x` layout.
        m[(i - 1, j - 1)] = value;
        m[(j - 1, i - 1)] = value;
    }
}

/// The six constraint matrices `A_1 .. A_6`.
pub fn constraint_matrices() -> [Mat12; 6] {
    let mut a = [Mat12::zeros(); 6];
    sym_set(&mut a[0], &[(10, 10), (11, 11), (12, 12)], 1.0);

    sym_set(&mut a[1], &[(1, 1), (4, 4), (7, 7)], 1.0);
    sym_set(&mut a[1], &[(11, 11), (12, 12)], -1.0);

    sym_set(&mut a[2], &[(2, 2), (5, 5), (8, 8)], 1.0);
    sym_set(&mut a[2], &[(10, 10), (12, 12)], -1.0);

    sym_set(&mut a[3], &[(3, 3), (6, 6), (9, 9)], 1.0);
    sym_set(&mut a[3], &[(10, 10), (11, 11)], -1.0);

    sym_set(&mut a[4], &[(1, 3), (4, 6), (7, 9), (10, 12)], 0.5);
    sym_set(&mut a[5], &[(2, 3), (5, 6), (8, 9), (11, 12)], 0.5);
    a
}

/// Matrix of the dropped constraint `e_1^T e_2 + t_1 t_2 = 0`.
pub fn dropped_constraint_matrix() -> Mat12 {
    let mut m = Mat12::zeros();
    sym_set(&mut m, &[(1, 2), (4, 5), (7, 8), (10, 11)], 0.5);
    m
}

/// Right-hand sides `c_i` of the constraints.
pub const CONSTRAINT_OFFSETS: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];

/// Builds `C`, `Q` and the constraint matrices from correspondences.
pub fn build_data_matrix(pairs: &[BearingPair]) -> Result<ProblemData> {
    build_data_matrix_with(pairs, CostNormalization::None)
}

pub fn build_data_matrix_with(
    pairs: &[BearingPair],
    normalization: CostNormalization,
) -> Result<ProblemData> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut design = DMatrix::zeros(pairs.len(), 9);
    for (i, p) in pairs.iter().enumerate() {
        design.row_mut(i).copy_from(&p.kron().transpose());
    }
    if normalization == CostNormalization::Trace {
        // trace(C) = sum_i |f_i|^2 |f'_i|^2 = N for unit bearings.
        design /= (pairs.len() as f64).sqrt();
    }
    let c_dyn = design.transpose() * &design;
    let mut c = Mat9::from_fn(|i, j| c_dyn[(i, j)]);
    c = (c + c.transpose()) * 0.5;
    let mut data = ProblemData::from_cost_matrix(c, pairs.len());
    data.design = Some(design);
    Ok(data)
}

impl ProblemData {
    /// Wraps a precomputed `C`. Cost evaluation then uses the quadratic form.
    pub fn from_cost_matrix(c: Mat9, n_points: usize) -> Self {
        let mut q = Mat12::zeros();
        q.fixed_view_mut::<9, 9>(0, 0).copy_from(&c);
        Self {
            c,
            q,
            a: constraint_matrices(),
            a_dropped: dropped_constraint_matrix(),
            n_points,
            design: None,
        }
    }

    /// `vec(E)^T C vec(E)`.
    pub fn cost_e(&self, e: &Mat3) -> f64 {
        let v = Vec9::from_column_slice(e.as_slice());
        match &self.design {
            Some(k) => (k * v).norm_squared(),
            None => v.dot(&(self.c * v)).max(0.0),
        }
    }

    /// `C vec(E)`, evaluated through the design matrix when available.
    pub fn c_times(&self, v: &Vec9) -> Vec9 {
        match &self.design {
            Some(k) => {
                let r = k * v;
                let out = k.transpose() * r;
                Vec9::from_column_slice(out.as_slice())
            }
            None => self.c * v,
        }
    }

    /// `Q x`.
    pub fn q_times(&self, x: &Vec12) -> Vec12 {
        let e = x.fixed_rows::<9>(0).into_owned();
        let ce = self.c_times(&e);
        let mut out = Vec12::zeros();
        out.fixed_rows_mut::<9>(0).copy_from(&ce);
        out
    }

    /// The same problem with every correspondence counted `factor` times.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = Self::from_cost_matrix(self.c * factor, self.n_points);
        out.design = self.design.as_ref().map(|k| k * factor.sqrt());
        out
    }

    /// The same problem with every camera-1 bearing rotated by `p`. A
    /// feasible `(E, t)` of the original problem maps to `(p E, p t)` at
    /// equal cost.
    pub fn rotated_first_frame(&self, p: &Mat3) -> Self {
        let mut block = Mat9::zeros();
        for k in 0..3 {
            block.fixed_view_mut::<3, 3>(3 * k, 3 * k).copy_from(p);
        }
        let mut c = block * self.c * block.transpose();
        c = (c + c.transpose()) * 0.5;
        let mut out = Self::from_cost_matrix(c, self.n_points);
        let bt = DMatrix::from_column_slice(9, 9, block.transpose().as_slice());
        out.design = self.design.as_ref().map(|k| k * &bt);
        out
    }
}

/// Objective `x^T Q x`; for feasible `x` this is the sum of squared
/// algebraic errors.
pub fn cost(data: &ProblemData, x: &PrimalPoint) -> f64 {
    data.cost_e(&x.essential())
}

/// `(x^T A_1 x - 1, x^T A_2 x, ..., x^T A_6 x)`.
pub fn constraint_residuals(x: &Vec12) -> Vec6 {
    let a = constraint_matrices();
    Vec6::from_fn(|i, _| x.dot(&(a[i] * x)) - CONSTRAINT_OFFSETS[i])
}

/// Columns `A_i x` for the six retained constraints, in order `h_1 .. h_6`.
pub fn jacobian6(x: &Vec12) -> Jacobian6 {
    let a = constraint_matrices();
    let mut j = Jacobian6::zeros();
    for (i, ai) in a.iter().enumerate() {
        j.set_column(i, &(ai * x));
    }
    j
}

/// Constraint Jacobian (up to the factor 2) with columns `A_i x`.
///
/// Without `include_dropped` the columns are `h_1 .. h_6`. With it, the
/// seven columns follow the ordering
/// `(h_1, dropped, h_2, h_5, h_3, h_6, h_4)`.
pub fn constraint_jacobian(x: &Vec12, include_dropped: bool) -> DMatrix<f64> {
    let a = constraint_matrices();
    if !include_dropped {
        let j = jacobian6(x);
        return DMatrix::from_column_slice(12, 6, j.as_slice());
    }
    let dropped = dropped_constraint_matrix();
    let cols: [&Mat12; 7] = [&a[0], &dropped, &a[1], &a[4], &a[2], &a[5], &a[3]];
    let mut j = DMatrix::zeros(12, 7);
    for (k, m) in cols.iter().enumerate() {
        j.set_column(k, &(*m * x));
    }
    j
}

/// Nullspace vector of the 7-column Jacobian at a feasible point, in the
/// same column order as [`constraint_jacobian`] with `include_dropped`.
pub fn jacobian7_null_vector(t: &crate::geometry::Vec3) -> SVector<f64, 7> {
    SVector::<f64, 7>::from_column_slice(&[
        0.0,
        2.0 * t.x * t.y,
        t.x * t.x,
        2.0 * t.x * t.z,
        t.y * t.y,
        2.0 * t.y * t.z,
        t.z * t.z,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{essential_from_pose, Rotation3, Vec3};
    use crate::synth::{generate, SceneConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> UnitVector3 {
        UnitVector3::normalize(Vec3::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        ))
        .unwrap()
    }

    #[test]
    fn single_axis_pair() {
        let z = UnitVector3::z_axis();
        let data = build_data_matrix(&[BearingPair::new(z, z)]).unwrap();
        let mut expect = Mat9::zeros();
        expect[(8, 8)] = 1.0;
        assert_eq!(data.c, expect);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(build_data_matrix(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn kron_matches_scalar_epipolar_error() {
        // Oracle: direct evaluation of (f^T E f')^2 without any vectorization.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = BearingPair::new(random_unit(&mut rng), random_unit(&mut rng));
            let e = Mat3::from_fn(|_, _| rng.random::<f64>() - 0.5);
            let mut direct = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    direct += p.f.as_vec()[i] * e[(i, j)] * p.f_prime.as_vec()[j];
                }
            }
            let data = build_data_matrix(&[p]).unwrap();
            let v = Vec9::from_column_slice(e.as_slice());
            assert!((v.dot(&(data.c * v)) - direct * direct).abs() < 1e-12);
            assert!((data.cost_e(&e) - direct * direct).abs() < 1e-12);
        }
    }

    #[test]
    fn structure_of_c_and_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs: Vec<_> = (0..30)
            .map(|_| BearingPair::new(random_unit(&mut rng), random_unit(&mut rng)))
            .collect();
        let data = build_data_matrix(&pairs).unwrap();
        assert_eq!(data.c, data.c.transpose());
        let ev_c = data.c.symmetric_eigenvalues();
        assert!(ev_c.min() >= -1e-10);
        assert_eq!(data.q.fixed_view::<9, 9>(0, 0), data.c);
        assert_eq!(data.q.fixed_view::<3, 12>(9, 0).amax(), 0.0);
        let mut ev_q: Vec<f64> = data.q.symmetric_eigenvalues().iter().copied().collect();
        ev_q.sort_by(f64::total_cmp);
        assert!(ev_q.iter().filter(|v| v.abs() < 1e-10).count() >= 3);
        let mut ev_c: Vec<f64> = ev_c.iter().copied().collect();
        ev_c.sort_by(f64::total_cmp);
        for (a, b) in ev_c.iter().zip(&ev_q[3..]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rotated_frame_matches_rotated_bearings() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs: Vec<_> = (0..25)
            .map(|_| BearingPair::new(random_unit(&mut rng), random_unit(&mut rng)))
            .collect();
        let r = Rotation3::from_axis_angle(&Vec3::new(0.3, -0.2, 0.9), 1.3);
        let p = *r.matrix();
        let moved: Vec<_> = pairs
            .iter()
            .map(|q| BearingPair::new(UnitVector3::normalize(p * q.f.as_vec()).unwrap(), q.f_prime))
            .collect();
        let expect = build_data_matrix(&moved).unwrap();
        let got = build_data_matrix(&pairs).unwrap().rotated_first_frame(&p);
        assert!((got.c - expect.c).amax() < 1e-12);
        for _ in 0..20 {
            let e = Mat3::from_fn(|_, _| rng.random::<f64>() - 0.5);
            assert!((got.cost_e(&e) - expect.cost_e(&e)).abs() < 1e-12);
        }
    }

    #[test]
    fn constraint_matrices_are_exactly_symmetric() {
        for a in constraint_matrices()
            .iter()
            .chain([&dropped_constraint_matrix()])
        {
            assert_eq!(*a, a.transpose());
        }
        let mut a1 = Mat12::zeros();
        a1.fixed_view_mut::<3, 3>(9, 9).fill_with_identity();
        assert_eq!(constraint_matrices()[0], a1);
    }

    #[test]
    fn t_block_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Vec12::from_fn(|_, _| rng.random::<f64>());
        let a1 = &constraint_matrices()[0];
        let t = x.fixed_rows::<3>(9);
        assert!((x.dot(&(a1 * x)) - t.dot(&t)).abs() < 1e-14);
    }

    #[test]
    fn residual_examples() {
        let mut x = Vec12::zeros();
        assert_eq!(
            constraint_residuals(&x),
            Vec6::new(-1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );
        x[9] = 1.0;
        assert_eq!(
            constraint_residuals(&x),
            Vec6::new(0.0, 0.0, -1.0, -1.0, 0.0, 0.0)
        );
    }

    #[test]
    fn gradient_identity_by_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mats: Vec<Mat12> = constraint_matrices()
            .into_iter()
            .chain([dropped_constraint_matrix()])
            .collect();
        for _ in 0..50 {
            let x = Vec12::from_fn(|_, _| rng.random::<f64>() - 0.5);
            for a in &mats {
                let analytic = 2.0 * a * x;
                let h = 1e-6;
                let fd = Vec12::from_fn(|k, _| {
                    let mut xp = x;
                    let mut xm = x;
                    xp[k] += h;
                    xm[k] -= h;
                    (xp.dot(&(a * xp)) - xm.dot(&(a * xm))) / (2.0 * h)
                });
                assert!((fd - analytic).norm() <= 1e-6 * analytic.norm().max(1.0));
            }
        }
    }

    #[test]
    fn cost_examples() {
        let problem = generate(&SceneConfig {
            n_points: 20,
            seed: 4,
            ..SceneConfig::default()
        })
        .unwrap();
        let data = build_data_matrix(&problem.pairs).unwrap();
        let gt = problem.gt_essential.primal_point();
        assert!(cost(&data, &gt) <= 1e-18);

        let perturbed = essential_from_pose(
            problem.gt_rotation * Rotation3::from_axis_angle(&Vec3::z(), 5f64.to_radians()),
            problem.gt_translation,
        );
        let c5 = cost(&data, &perturbed.primal_point());
        assert!(c5 > 0.0);

        let doubled = PrimalPoint::from_vector(perturbed.primal_point().as_vector() * 2.0);
        assert!((cost(&data, &doubled) - 4.0 * c5).abs() <= 1e-12 * c5);
    }

    #[test]
    fn jacobian_reproduces_printed_structure() {
        // Rows as printed for the 7-constraint Jacobian, with e_k row-labelled.
        let e = Mat3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0);
        let t = Vec3::new(0.1, 0.2, 0.3);
        let x = PrimalPoint::from_parts(&e, &t);
        let j = constraint_jacobian(x.as_vector(), true);
        let [e1, e2, e3, e4, e5, e6, e7, e8, e9] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let (t1, t2, t3) = (0.1, 0.2, 0.3);
        #[rustfmt::skip]
        let expect = DMatrix::from_row_slice(12, 7, &[
            0.0, e4 / 2.0, e1, e7 / 2.0, 0.0, 0.0, 0.0,
            0.0, e1 / 2.0, 0.0, 0.0, e4, e7 / 2.0, 0.0,
            0.0, 0.0, 0.0, e1 / 2.0, 0.0, e4 / 2.0, e7,
            0.0, e5 / 2.0, e2, e8 / 2.0, 0.0, 0.0, 0.0,
            0.0, e2 / 2.0, 0.0, 0.0, e5, e8 / 2.0, 0.0,
            0.0, 0.0, 0.0, e2 / 2.0, 0.0, e5 / 2.0, e8,
            0.0, e6 / 2.0, e3, e9 / 2.0, 0.0, 0.0, 0.0,
            0.0, e3 / 2.0, 0.0, 0.0, e6, e9 / 2.0, 0.0,
            0.0, 0.0, 0.0, e3 / 2.0, 0.0, e6 / 2.0, e9,
            t1, t2 / 2.0, 0.0, t3 / 2.0, -t1, 0.0, -t1,
            t2, t1 / 2.0, -t2, 0.0, 0.0, t3 / 2.0, -t2,
            t3, 0.0, -t3, t1 / 2.0, -t3, t2 / 2.0, 0.0,
        ]);
        assert!((j - expect).amax() < 1e-15);
    }

    #[test]
    fn jacobian_of_zero_is_zero() {
        assert_eq!(constraint_jacobian(&Vec12::zeros(), false).amax(), 0.0);
        assert_eq!(constraint_jacobian(&Vec12::zeros(), true).amax(), 0.0);
    }
}
