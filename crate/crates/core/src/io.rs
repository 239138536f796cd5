//! Correspondence, problem and result files.
//!
//! Correspondences are CSV with header `fx,fy,fz,fpx,fpy,fpz`, or JSON
//! ([`ProblemFile`]) when ground truth travels with them. Bearings must be
//! unit within [`UNIT_TOLERANCE`]; they are renormalized on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::certifier::{CertificateReport, Verdict};
use crate::error::{Error, Result};
use crate::geometry::{
    essential_from_pose, from_row_major, project_to_essential, row_major, EssentialElement,
    UnitVector3, Vec3,
};
use crate::pipeline::{PipelineResult, RobustResult};
use crate::problem::BearingPair;
use crate::synth::{SceneConfig, SyntheticProblem};

pub const UNIT_TOLERANCE: f64 = 1e-6;

const CSV_HEADER: [&str; 6] = ["fx", "fy", "fz", "fpx", "fpy", "fpz"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    /// Row-major.
    pub essential: [f64; 9],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub pairs: Vec<BearingPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    /// `false` for correspondences known to be outliers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inlier_mask: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneConfig>,
}

impl From<&SyntheticProblem> for ProblemFile {
    fn from(p: &SyntheticProblem) -> Self {
        let t = p.gt_translation.as_vec();
        Self {
            pairs: p.pairs.clone(),
            ground_truth: Some(GroundTruth {
                rotation: row_major(p.gt_rotation.matrix()),
                translation: [t.x, t.y, t.z],
                essential: p.gt_essential.row_major(),
            }),
            inlier_mask: Some(p.inlier_mask.clone()),
            scene: Some(p.config.clone()),
        }
    }
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

pub fn read_correspondences_csv(path: &Path) -> Result<Vec<BearingPair>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::format(
            path,
            format!(
                "expected header {}, found {}",
                CSV_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut pairs = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = row + 2;
        let mut v = [0.0; 6];
        for (k, field) in record.iter().enumerate() {
            v[k] = field.parse().map_err(|_| {
                Error::format(
                    path,
                    format!("line {line}: cannot parse {field:?} as a number"),
                )
            })?;
        }
        let bearing = |a: f64, b: f64, c: f64| {
            UnitVector3::from_unit(Vec3::new(a, b, c), UNIT_TOLERANCE)
                .map_err(|e| Error::format(path, format!("line {line}: {e}")))
        };
        pairs.push(BearingPair::new(
            bearing(v[0], v[1], v[2])?,
            bearing(v[3], v[4], v[5])?,
        ));
    }
    Ok(pairs)
}

pub fn write_correspondences_csv(path: &Path, pairs: &[BearingPair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for p in pairs {
        let (f, g) = (p.f.as_vec(), p.f_prime.as_vec());
        w.write_record([f.x, f.y, f.z, g.x, g.y, g.z].map(|v| v.to_string()))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a problem from `.json` (with optional ground truth) or CSV.
pub fn load_problem(path: &Path) -> Result<ProblemFile> {
    if is_json(path) {
        let problem: ProblemFile = read_json(path)?;
        if let Some(mask) = &problem.inlier_mask {
            if mask.len() != problem.pairs.len() {
                return Err(Error::format(path, "inlier_mask length differs from pairs"));
            }
        }
        Ok(problem)
    } else {
        Ok(ProblemFile {
            pairs: read_correspondences_csv(path)?,
            ground_truth: None,
            inlier_mask: None,
            scene: None,
        })
    }
}

/// Saves as JSON or CSV depending on the extension; CSV keeps only the pairs.
pub fn save_problem(path: &Path, problem: &ProblemFile) -> Result<()> {
    if is_json(path) {
        write_json(path, problem)
    } else {
        write_correspondences_csv(path, &problem.pairs)
    }
}

/// Candidate essential matrix for certification, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub essential: [f64; 9],
}

/// Factors a candidate that must already be a normalized essential matrix
/// (within `tolerance` in Frobenius norm).
pub fn candidate_element(essential: &[f64; 9], tolerance: f64) -> Result<EssentialElement> {
    let m = from_row_major(essential);
    let element = project_to_essential(&m)?;
    let residual = (element.matrix() - m).norm();
    if residual > tolerance {
        return Err(Error::Infeasible {
            residual,
            tolerance,
        });
    }
    Ok(element)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacSummary {
    pub inlier_mask: Vec<bool>,
    pub inlier_count: usize,
    pub iterations_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    /// Row-major, consistent with `rotation` and `translation`.
    pub essential: [f64; 9],
    /// Row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub cost: f64,
    pub lambda_hat: [f64; 6],
    pub gap: f64,
    pub min_eigenvalue: f64,
    pub verdict: Verdict,
    pub iterations: usize,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub certificate: CertificateReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ransac: Option<RansacSummary>,
}

impl ResultFile {
    pub fn from_pipeline<C: Serialize>(
        res: &PipelineResult,
        seed: Option<u64>,
        config: &C,
    ) -> Self {
        let e = essential_from_pose(res.rotation, res.translation);
        let t = res.translation.as_vec();
        Self {
            essential: e.row_major(),
            rotation: row_major(res.rotation.matrix()),
            translation: [t.x, t.y, t.z],
            cost: res.solve.final_cost,
            lambda_hat: res.certificate.lambda_hat,
            gap: res.certificate.gap,
            min_eigenvalue: res.certificate.min_eigenvalue,
            verdict: res.certificate.verdict,
            iterations: res.solve.outer_iterations,
            seed,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            certificate: res.certificate.clone(),
            ransac: None,
        }
    }

    pub fn from_robust<C: Serialize>(res: &RobustResult, seed: Option<u64>, config: &C) -> Self {
        Self {
            ransac: Some(RansacSummary {
                inlier_mask: res.ransac.inlier_mask.clone(),
                inlier_count: res.ransac.inlier_count,
                iterations_used: res.ransac.iterations_used,
            }),
            ..Self::from_pipeline(&res.result, seed, config)
        }
    }
}
