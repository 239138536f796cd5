//! Certifiable relative pose estimation from bearing correspondences.
//!
//! The essential matrix is refined by a Riemannian trust-region method on the
//! essential manifold and then certified globally optimal (or not) in closed
//! form from the Lagrangian dual of a QCQP relaxation.
//!
//! ```
//! use epicert_core::{generate, run_pipeline, PipelineConfig, SceneConfig, Verdict};
//!
//! let scene = generate(&SceneConfig { n_points: 30, noise_px: 0.5, seed: 1, ..SceneConfig::default() })?;
//! let result = run_pipeline(&scene.pairs, &PipelineConfig::default())?;
//! assert_eq!(result.certificate.verdict, Verdict::Optimal);
//! # Ok::<(), epicert_core::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certifier;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod init;
pub mod io;
pub mod manifold;
pub mod pipeline;
pub mod problem;
pub mod ransac;
pub mod rtr;
pub mod synth;

pub use certifier::{
    balancing_rotation, certify, dual_candidate, hessian_of_lagrangian, min_eigenvalue,
    CertificateReport, CertificationFrame, CertifierConfig, Diagnostic, GapMode, Verdict,
};
pub use error::{Error, Result};
pub use experiment::{
    precision_recall, rotation_error, run_grid, translation_error, CellSummary, ExperimentGrid,
    ExperimentResults, Label, OracleConfig, TrialRecord,
};
pub use geometry::{
    essential_from_pose, project_to_essential, recover_pose, skew, EssentialElement, Mat3,
    PrimalPoint, Rotation3, UnitVector3, Vec12, Vec3,
};
pub use init::{eight_point, identity_init, random_essential, InitKind};
pub use manifold::{retract, riemannian_gradient, riemannian_hessian_vec, TangentVector};
pub use pipeline::{
    run_pipeline, run_robust_pipeline, PipelineConfig, PipelineResult, RobustResult,
};
pub use problem::{
    build_data_matrix, build_data_matrix_with, constraint_jacobian, constraint_matrices,
    constraint_residuals, cost, BearingPair, CostNormalization, ProblemData,
};
pub use ransac::{ransac_essential, RansacConfig, RansacReport};
pub use rtr::{solve_rtr, RtrConfig, SolveReport};
pub use synth::{contaminate, generate, NoiseModel, SceneConfig, SyntheticProblem};
