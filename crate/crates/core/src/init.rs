//! Initial guesses for the manifold solver.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    essential_from_pose, project_to_essential, EssentialElement, Mat3, Rotation3, UnitVector3, Vec3,
};
use crate::problem::BearingPair;

/// Which initializer seeds the refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[serde(alias = "8pt")]
    EightPoint,
    Identity,
    Random,
}

impl InitKind {
    pub fn label(&self) -> &'static str {
        match self {
            InitKind::EightPoint => "8pt",
            InitKind::Identity => "identity",
            InitKind::Random => "random",
        }
    }

    /// Produces the initial guess; `seed` only matters for [`InitKind::Random`].
    pub fn initialize(&self, pairs: &[BearingPair], seed: u64) -> Result<EssentialElement> {
        match self {
            InitKind::EightPoint => eight_point(pairs),
            InitKind::Identity => Ok(identity_init()),
            InitKind::Random => Ok(random_essential(seed)),
        }
    }
}

impl std::str::FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "8pt" | "eight_point" | "eightpoint" => Ok(InitKind::EightPoint),
            "identity" | "iden" => Ok(InitKind::Identity),
            "random" | "rand" => Ok(InitKind::Random),
            other => Err(Error::InvalidConfig(format!(
                "unknown initializer {other:?}"
            ))),
        }
    }
}

/// Linear 8-point estimate projected onto the essential set.
///
/// Works directly on unit bearings, so no Hartley normalization is applied.
pub fn eight_point(pairs: &[BearingPair]) -> Result<EssentialElement> {
    if pairs.len() < 8 {
        return Err(Error::InsufficientData {
            needed: 8,
            got: pairs.len(),
        });
    }
    // Pad to at least 9 rows so the thin SVD exposes the full right basis.
    let rows = pairs.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, p) in pairs.iter().enumerate() {
        a.row_mut(i).copy_from(&p.kron().transpose());
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let smallest = order[8];
    let second = order[7];
    let scale = s[order[0]];
    if s[second] - s[smallest] <= 1e-12 * scale {
        return Err(Error::DegenerateConfiguration(format!(
            "two smallest singular values coincide ({:e}, {:e})",
            s[second], s[smallest]
        )));
    }
    let v = v_t.row(smallest).transpose();
    let m = Mat3::from_column_slice(v.as_slice());
    project_to_essential(&m)
        .map_err(|e| Error::DegenerateConfiguration(format!("8-point solution: {e}")))
}

/// Uniform random rotation (normalized Gaussian quaternion) and uniform
/// random direction.
pub fn random_essential(seed: u64) -> EssentialElement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let q = loop {
        let q = nalgebra::Quaternion::new(gauss(), gauss(), gauss(), gauss());
        if q.norm() > 1e-9 {
            break nalgebra::UnitQuaternion::from_quaternion(q);
        }
    };
    let t = loop {
        let v = Vec3::new(gauss(), gauss(), gauss());
        if v.norm() > 1e-9 {
            break UnitVector3::normalize(v).expect("nonzero");
        }
    };
    let r = Rotation3::from_matrix_projected(q.to_rotation_matrix().into_inner());
    essential_from_pose(r, t)
}

/// `R = I`, `t = e_z`, i.e. `E = skew(e_z)`.
pub fn identity_init() -> EssentialElement {
    essential_from_pose(Rotation3::identity(), UnitVector3::z_axis())
}
