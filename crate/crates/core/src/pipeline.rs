//! Initialize, refine on the manifold, certify, and extract the pose.

use serde::{Deserialize, Serialize};

use crate::certifier::{certify, CertificateReport, CertifierConfig};
use crate::error::{Error, Result};
use crate::geometry::{recover_pose, EssentialElement, Rotation3, UnitVector3};
use crate::init::InitKind;
use crate::problem::{build_data_matrix_with, BearingPair, CostNormalization, ProblemData};
use crate::ransac::{ransac_essential, RansacConfig, RansacReport};
use crate::rtr::{solve_rtr, RtrConfig, SolveReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub init: InitKind,
    /// Seed of the random initializer.
    pub init_seed: u64,
    pub normalization: CostNormalization,
    pub rtr: RtrConfig,
    pub certifier: CertifierConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            init: InitKind::EightPoint,
            init_seed: 0,
            normalization: CostNormalization::None,
            rtr: RtrConfig::default(),
            certifier: CertifierConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub initial: EssentialElement,
    pub solve: SolveReport,
    pub certificate: CertificateReport,
    pub rotation: Rotation3,
    pub translation: UnitVector3,
    /// `false` when no factorization put any point in front of both cameras
    /// and the pose was read off the solver's own factors instead.
    pub cheirality_resolved: bool,
}

/// Refines and certifies starting from `initial`.
pub fn refine_and_certify(
    data: &ProblemData,
    pairs: &[BearingPair],
    initial: EssentialElement,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    let solve = solve_rtr(data, &initial, &cfg.rtr)?;
    let certificate = certify(data, &solve.solution.primal_point(), &cfg.certifier)?;
    let (rotation, translation, cheirality_resolved) =
        match recover_pose(solve.solution.matrix(), pairs) {
            Ok((r, t)) => (r, t, true),
            Err(Error::DegenerateInput(_)) => (
                *solve.solution.rotation(),
                *solve.solution.translation(),
                false,
            ),
            Err(e) => return Err(e),
        };
    Ok(PipelineResult {
        initial,
        solve,
        certificate,
        rotation,
        translation,
        cheirality_resolved,
    })
}

pub fn run_pipeline(pairs: &[BearingPair], cfg: &PipelineConfig) -> Result<PipelineResult> {
    let data = build_data_matrix_with(pairs, cfg.normalization)?;
    let initial = cfg.init.initialize(pairs, cfg.init_seed)?;
    refine_and_certify(&data, pairs, initial, cfg)
}

#[derive(Debug, Clone)]
pub struct RobustResult {
    pub ransac: RansacReport,
    pub result: PipelineResult,
}

/// RANSAC selects the inliers and the initial guess; the pipeline then runs on
/// the inliers only.
pub fn run_robust_pipeline(
    pairs: &[BearingPair],
    ransac: &RansacConfig,
    cfg: &PipelineConfig,
) -> Result<RobustResult> {
    let report = ransac_essential(pairs, ransac)?;
    let inliers = report.inliers(pairs);
    let data = build_data_matrix_with(&inliers, cfg.normalization)?;
    let result = refine_and_certify(&data, &inliers, report.best_model, cfg)?;
    Ok(RobustResult {
        ransac: report,
        result,
    })
}
