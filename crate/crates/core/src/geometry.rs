//! Rotations, bearing vectors and essential matrices.
//!
//! Vectorization convention: the entries of an essential matrix are labelled
//! row-wise (`e1 e2 e3` is the first row) and stacked column-major, so the
//! 12-vector used by the QCQP is
//! `x = (e1, e4, e7, e2, e5, e8, e3, e6, e9, t1, t2, t3)`.
//! nalgebra stores matrices column-major, so `Matrix3::as_slice` already
//! yields `vec(E)` in this order.

use nalgebra::{Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::BearingPair;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec12 = SVector<f64, 12>;

/// Unit-norm 3-vector (a bearing or a translation direction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 3]", try_from = "[f64; 3]")]
pub struct UnitVector3(Vec3);

impl UnitVector3 {
    /// Normalizes `v`. Fails on zero or non-finite input.
    pub fn normalize(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::DegenerateInput(format!(
                "cannot normalize vector with norm {n}"
            )));
        }
        Ok(Self(v / n))
    }

    /// Accepts `v` only if it is already unit within `tol`, then renormalizes.
    /// Vectors that are unit to rounding are kept bit-for-bit.
    pub fn from_unit(v: Vec3, tol: f64) -> Result<Self> {
        let n = v.norm();
        if (n - 1.0).abs() > tol || !n.is_finite() {
            return Err(Error::DegenerateInput(format!(
                "vector norm {n} is not within {tol:e} of one"
            )));
        }
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self(v));
        }
        Ok(Self(v / n))
    }

    pub fn x_axis() -> Self {
        Self(Vec3::x())
    }

    pub fn z_axis() -> Self {
        Self(Vec3::z())
    }

    #[inline]
    pub fn as_vec(&self) -> &Vec3 {
        &self.0
    }

    #[inline]
    pub fn into_inner(self) -> Vec3 {
        self.0
    }
}

impl std::ops::Neg for UnitVector3 {
    type Output = UnitVector3;

    fn neg(self) -> Self::Output {
        UnitVector3(-self.0)
    }
}

impl From<UnitVector3> for [f64; 3] {
    fn from(u: UnitVector3) -> Self {
        [u.0.x, u.0.y, u.0.z]
    }
}

impl TryFrom<[f64; 3]> for UnitVector3 {
    type Error = Error;

    fn try_from(a: [f64; 3]) -> Result<Self> {
        UnitVector3::from_unit(Vec3::from(a), 1e-6)
    }
}

/// Element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Mat3);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Validates orthogonality and a positive determinant within `1e-10`.
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        let orth = (m.transpose() * m - Mat3::identity()).norm();
        let det = m.determinant();
        if orth > 1e-10 || (det - 1.0).abs() > 1e-10 {
            return Err(Error::DegenerateInput(format!(
                "not a rotation: |R^T R - I| = {orth:e}, det = {det}"
            )));
        }
        Ok(Self(m))
    }

    /// Projects an approximately orthogonal matrix onto SO(3).
    pub(crate) fn from_matrix_projected(m: Mat3) -> Self {
        let (u, _, v) = svd3(&m);
        let mut d = Mat3::identity();
        d[(2, 2)] = (u * v.transpose()).determinant().signum();
        Self(u * d * v.transpose())
    }

    /// Exponential map `exp([omega]x)` (Rodrigues).
    pub fn exp(omega: &Vec3) -> Self {
        Self(nalgebra::Rotation3::new(*omega).into_inner())
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        Self::exp(&(axis.normalize() * angle))
    }

    /// Geodesic angle to `other`, in radians.
    pub fn angle_to(&self, other: &Rotation3) -> f64 {
        let c = ((self.0.transpose() * other.0).trace() - 1.0) / 2.0;
        c.clamp(-1.0, 1.0).acos()
    }

    #[inline]
    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Rotation3 {
        Rotation3(self.0.transpose())
    }
}

impl std::ops::Mul for Rotation3 {
    type Output = Rotation3;

    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

/// Cross-product matrix: `skew(t) * w == t.cross(w)`.
#[inline]
pub fn skew(t: &Vec3) -> Mat3 {
    Mat3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Inverse of [`skew`] applied to the antisymmetric part: returns `v` with
/// `<A, skew(w)> = v . w` for every `w` (Frobenius inner product).
#[inline]
pub(crate) fn skew_adjoint(a: &Mat3) -> Vec3 {
    Vec3::new(
        a[(2, 1)] - a[(1, 2)],
        a[(0, 2)] - a[(2, 0)],
        a[(1, 0)] - a[(0, 1)],
    )
}

/// 3x3 SVD with singular values sorted in decreasing order.
pub(crate) fn svd3(m: &Mat3) -> (Mat3, Vec3, Mat3) {
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut uu = Mat3::zeros();
    let mut vv = Mat3::zeros();
    let mut ss = Vec3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        uu.set_column(dst, &u.column(src));
        vv.set_column(dst, &v_t.row(src).transpose());
        ss[dst] = s[src];
    }
    (uu, ss, vv)
}

/// A normalized essential matrix together with one factorization
/// `e = skew(t) * r`.
///
/// `e` and `-e` describe the same epipolar geometry; which of the two is
/// stored is not significant until [`recover_pose`] fixes it by cheirality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialElement {
    e: Mat3,
    r: Rotation3,
    t: UnitVector3,
}

impl EssentialElement {
    #[inline]
    pub fn matrix(&self) -> &Mat3 {
        &self.e
    }

    #[inline]
    pub fn rotation(&self) -> &Rotation3 {
        &self.r
    }

    #[inline]
    pub fn translation(&self) -> &UnitVector3 {
        &self.t
    }

    pub fn primal_point(&self) -> PrimalPoint {
        PrimalPoint::from_parts(&self.e, self.t.as_vec())
    }

    /// Same geometry with the sign of `e` flipped (`t -> -t`).
    pub fn negated(&self) -> Self {
        essential_from_pose(self.r, -self.t)
    }

    /// Row-major copy of `e`.
    pub fn row_major(&self) -> [f64; 9] {
        row_major(&self.e)
    }
}

pub(crate) fn row_major(m: &Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = m[(i, j)];
        }
    }
    out
}

pub(crate) fn from_row_major(a: &[f64; 9]) -> Mat3 {
    Mat3::from_row_slice(a)
}

/// The 12-vector `x = [vec(E); t]` of the QCQP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimalPoint(Vec12);

impl PrimalPoint {
    pub fn from_parts(e: &Mat3, t: &Vec3) -> Self {
        let mut x = Vec12::zeros();
        x.fixed_rows_mut::<9>(0).copy_from_slice(e.as_slice());
        x.fixed_rows_mut::<3>(9).copy_from(t);
        Self(x)
    }

    /// Wraps an arbitrary 12-vector; no feasibility is implied.
    pub fn from_vector(x: Vec12) -> Self {
        Self(x)
    }

    #[inline]
    pub fn as_vector(&self) -> &Vec12 {
        &self.0
    }

    pub fn essential(&self) -> Mat3 {
        Mat3::from_column_slice(&self.0.as_slice()[..9])
    }

    pub fn translation(&self) -> Vec3 {
        self.0.fixed_rows::<3>(9).into_owned()
    }
}

/// `E = skew(t) * R`.
pub fn essential_from_pose(r: Rotation3, t: UnitVector3) -> EssentialElement {
    EssentialElement {
        e: skew(t.as_vec()) * r.matrix(),
        r,
        t,
    }
}

/// Nearest normalized essential matrix to `m` (singular values forced to
/// `(1, 1, 0)`), together with a consistent `(R, t)` factorization.
pub fn project_to_essential(m: &Mat3) -> Result<EssentialElement> {
    let (mut u, s, mut v) = svd3(m);
    if !(s[0].is_finite() && s[0] > 0.0) || s[1] <= 1e-12 * s[0] {
        return Err(Error::DegenerateInput(format!(
            "rank < 2 (singular values {:e}, {:e}, {:e})",
            s[0], s[1], s[2]
        )));
    }
    // Flipping the third singular vectors leaves U diag(1,1,0) V^T unchanged.
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v.determinant() < 0.0 {
        v.column_mut(2).neg_mut();
    }
    let w_t = Mat3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r = Rotation3::from_matrix_projected(u * w_t * v.transpose());
    let t = UnitVector3::normalize(u.column(2).into_owned())?;
    Ok(essential_from_pose(r, t))
}

/// Depths `(lambda, mu)` solving `lambda f = mu R f' + t` in least squares,
/// or `None` when the rays are (numerically) parallel.
fn triangulate_depths(r: &Mat3, t: &Vec3, pair: &BearingPair) -> Option<(f64, f64)> {
    let a = pair.f.as_vec();
    let b = r * pair.f_prime.as_vec();
    // Normal equations of [a, -b] [lambda; mu] = t.
    let ab = a.dot(&b);
    let det = 1.0 - ab * ab;
    if det < 1e-12 {
        return None;
    }
    let at = a.dot(t);
    let bt = b.dot(t);
    let lambda = (at - ab * bt) / det;
    let mu = (ab * at - bt) / det;
    Some((lambda, mu))
}

/// Recovers `(R, t)` from an essential matrix by testing the four SVD
/// candidates for cheirality against `pairs`.
///
/// Convention: a point seen along `f` in camera 1 and `f'` in camera 2
/// satisfies `X1 = R X2 + s t` for some scale `s > 0`.
pub fn recover_pose(e: &Mat3, pairs: &[BearingPair]) -> Result<(Rotation3, UnitVector3)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (mut u, _, mut v) = svd3(e);
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v.determinant() < 0.0 {
        v.column_mut(2).neg_mut();
    }
    let w = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let u3: Vec3 = u.column(2).into_owned();
    let candidates = [
        (u * w * v.transpose(), u3),
        (u * w * v.transpose(), -u3),
        (u * w.transpose() * v.transpose(), u3),
        (u * w.transpose() * v.transpose(), -u3),
    ];

    let mut best: Option<(usize, usize)> = None;
    for (k, (r, t)) in candidates.iter().enumerate() {
        let count = pairs
            .iter()
            .filter_map(|p| triangulate_depths(r, t, p))
            .filter(|&(l, m)| l > 0.0 && m > 0.0)
            .count();
        if count > 0 && best.is_none_or(|(_, c)| count > c) {
            best = Some((k, count));
        }
    }
    let (k, _) = best.ok_or_else(|| {
        Error::DegenerateInput("no pose candidate places any point in front of both cameras".into())
    })?;
    let (r, t) = candidates[k];
    Ok((
        Rotation3::from_matrix_projected(r),
        UnitVector3::normalize(t)?,
    ))
}
