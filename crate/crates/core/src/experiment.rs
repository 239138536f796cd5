//! Synthetic benchmark: a grid of scene configurations, a certified solve per
//! trial, an independent optimality oracle, and per-cell summaries.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certifier::{CertificateReport, Verdict};
use crate::error::{Error, Result};
use crate::geometry::{Rotation3, UnitVector3};
use crate::init::{random_essential, InitKind};
use crate::pipeline::{refine_and_certify, PipelineConfig};
use crate::problem::build_data_matrix_with;
use crate::rtr::solve_rtr;
use crate::synth::{generate, NoiseModel, SceneConfig};

/// Geodesic distance between two rotations, in degrees.
pub fn rotation_error(r_hat: &Rotation3, r_gt: &Rotation3) -> f64 {
    let c = ((r_hat.matrix().transpose() * r_gt.matrix()).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Angle between two unit directions, in degrees.
pub fn translation_error(t_hat: &UnitVector3, t_gt: &UnitVector3) -> f64 {
    t_hat
        .as_vec()
        .dot(t_gt.as_vec())
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "TP")]
    TruePositive,
    #[serde(rename = "FP")]
    FalsePositive,
    #[serde(rename = "FNP")]
    FalseNonPositive,
    #[serde(rename = "TN")]
    TrueNegative,
}

impl Label {
    pub fn from_outcome(oracle_optimal: bool, verdict: Verdict) -> Self {
        match (oracle_optimal, verdict) {
            (true, Verdict::Optimal) => Label::TruePositive,
            (false, Verdict::Optimal) => Label::FalsePositive,
            (true, Verdict::Unknown) => Label::FalseNonPositive,
            (false, Verdict::Unknown) => Label::TrueNegative,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::TruePositive => "TP",
            Label::FalsePositive => "FP",
            Label::FalseNonPositive => "FNP",
            Label::TrueNegative => "TN",
        }
    }
}

/// Decides whether a solve reached the global minimum.
///
/// Noiseless cells use the exact test `cost <= noiseless_cost_tolerance`.
/// Otherwise the best cost over `restarts` randomly initialized solves stands
/// in for the global minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub restarts: usize,
    pub relative_tolerance: f64,
    pub absolute_tolerance: f64,
    pub noiseless_cost_tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            restarts: 16,
            relative_tolerance: 1e-6,
            absolute_tolerance: 1e-15,
            noiseless_cost_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentGrid {
    pub noise_levels: Vec<f64>,
    pub point_counts: Vec<usize>,
    pub trials_per_cell: usize,
    pub fov_deg: Vec<f64>,
    pub parallax_ranges: Vec<[f64; 2]>,
    pub focal_px: Vec<f64>,
    pub initializers: Vec<InitKind>,
    pub depth_range: [f64; 2],
    pub noise_model: NoiseModel,
    pub master_seed: u64,
    pub pipeline: PipelineConfig,
    pub oracle: OracleConfig,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        let scene = SceneConfig::default();
        Self {
            noise_levels: vec![0.1, 0.5, 1.0, 2.5],
            point_counts: vec![8, 9, 10, 11, 12, 13, 14, 15, 20, 40, 100, 200],
            trials_per_cell: 100,
            fov_deg: vec![scene.fov_deg],
            parallax_ranges: vec![scene.parallax_range],
            focal_px: vec![scene.focal_px],
            initializers: vec![InitKind::EightPoint],
            depth_range: scene.depth_range,
            noise_model: scene.noise_model,
            master_seed: 0,
            pipeline: PipelineConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

/// One combination of grid parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    /// Index of the scene configuration, shared by cells that differ only in
    /// the initializer so that they see identical problems.
    pub scene_index: usize,
    pub init: InitKind,
    pub noise_px: f64,
    pub n_points: usize,
    pub fov_deg: f64,
    pub parallax_range: [f64; 2],
    pub focal_px: f64,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        let empty = self.noise_levels.is_empty()
            || self.point_counts.is_empty()
            || self.fov_deg.is_empty()
            || self.parallax_ranges.is_empty()
            || self.focal_px.is_empty()
            || self.initializers.is_empty();
        if empty {
            return Err(Error::InvalidConfig("grid lists must be nonempty".into()));
        }
        if self.trials_per_cell == 0 {
            return Err(Error::InvalidConfig("trials_per_cell must be >= 1".into()));
        }
        for cell in self.cells() {
            self.scene_config(&cell, 0).validate()?;
        }
        self.pipeline.rtr.validate()?;
        self.pipeline.certifier.validate()
    }

    /// Cells in a fixed order: initializer outermost, point count innermost.
    pub fn cells(&self) -> Vec<Cell> {
        let mut scenes = Vec::new();
        for &fov_deg in &self.fov_deg {
            for &parallax_range in &self.parallax_ranges {
                for &focal_px in &self.focal_px {
                    for &noise_px in &self.noise_levels {
                        for &n_points in &self.point_counts {
                            scenes.push((fov_deg, parallax_range, focal_px, noise_px, n_points));
                        }
                    }
                }
            }
        }
        let mut cells = Vec::with_capacity(scenes.len() * self.initializers.len());
        for &init in &self.initializers {
            for (scene_index, &(fov_deg, parallax_range, focal_px, noise_px, n_points)) in
                scenes.iter().enumerate()
            {
                cells.push(Cell {
                    index: cells.len(),
                    scene_index,
                    init,
                    noise_px,
                    n_points,
                    fov_deg,
                    parallax_range,
                    focal_px,
                });
            }
        }
        cells
    }

    fn scene_config(&self, cell: &Cell, seed: u64) -> SceneConfig {
        SceneConfig {
            n_points: cell.n_points,
            noise_px: cell.noise_px,
            focal_px: cell.focal_px,
            fov_deg: cell.fov_deg,
            parallax_range: cell.parallax_range,
            depth_range: self.depth_range,
            noise_model: self.noise_model,
            seed,
            ..SceneConfig::default()
        }
    }
}

/// SplitMix64 finalizer; spreads structured inputs over the seed space.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial` in scene configuration `scene_index`.
pub fn trial_seed(master_seed: u64, scene_index: usize, trial: usize) -> u64 {
    mix(mix(mix(master_seed) ^ scene_index as u64) ^ trial as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub cell: Cell,
    pub trial: usize,
    pub seed: u64,
    pub final_cost: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub certificate: CertificateReport,
    pub rotation_error_deg: f64,
    pub translation_error_deg: f64,
    /// Best cost the oracle found (the solve's own cost in noiseless cells).
    pub oracle_cost: f64,
    pub oracle_optimal: bool,
    /// Set when the certifier and the oracle disagree on a certified point.
    pub oracle_disagreement: bool,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub cell: Cell,
    pub trial: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    /// Linear-interpolation quantiles; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self {
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub trials: usize,
    pub failures: usize,
    pub certified: usize,
    pub certified_fraction: f64,
    pub tp: usize,
    pub fp: usize,
    pub fnp: usize,
    pub tn: usize,
    /// `None` when no trial was certified.
    pub precision: Option<f64>,
    /// `None` when the oracle found no optimal trial.
    pub recall: Option<f64>,
    pub median_iterations: Option<f64>,
    pub rotation_error_deg: Option<Quantiles>,
    pub translation_error_deg: Option<Quantiles>,
    pub oracle_disagreements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub master_seed: u64,
    pub grid: ExperimentGrid,
    pub records: Vec<TrialRecord>,
    pub failures: Vec<TrialFailure>,
    pub summaries: Vec<CellSummary>,
}

fn label_counts(records: &[&TrialRecord]) -> [usize; 4] {
    let mut c = [0; 4];
    for r in records {
        let i = match r.label {
            Label::TruePositive => 0,
            Label::FalsePositive => 1,
            Label::FalseNonPositive => 2,
            Label::TrueNegative => 3,
        };
        c[i] += 1;
    }
    c
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `(TP / (TP + FP), TP / (TP + FNP))`, each `None` when its denominator is
/// zero.
pub fn precision_recall(records: &[TrialRecord]) -> (Option<f64>, Option<f64>) {
    let refs: Vec<&TrialRecord> = records.iter().collect();
    let [tp, fp, fnp, _] = label_counts(&refs);
    (ratio(tp, tp + fp), ratio(tp, tp + fnp))
}

fn run_trial(grid: &ExperimentGrid, cell: &Cell, trial: usize) -> Result<TrialRecord> {
    let seed = trial_seed(grid.master_seed, cell.scene_index, trial);
    let scene = generate(&grid.scene_config(cell, seed))?;
    let cfg = PipelineConfig {
        init: cell.init,
        init_seed: mix(seed ^ 0x1),
        ..grid.pipeline.clone()
    };
    let data = build_data_matrix_with(&scene.pairs, cfg.normalization)?;
    let initial = cfg.init.initialize(&scene.pairs, cfg.init_seed)?;
    let result = refine_and_certify(&data, &scene.pairs, initial, &cfg)?;
    let final_cost = result.solve.final_cost;

    let (oracle_cost, oracle_optimal) = if cell.noise_px == 0.0 {
        (
            final_cost,
            final_cost <= grid.oracle.noiseless_cost_tolerance,
        )
    } else {
        let mut best = final_cost;
        for k in 0..grid.oracle.restarts {
            let start = random_essential(mix(seed ^ mix(0x100 + k as u64)));
            let c = solve_rtr(&data, &start, &cfg.rtr)?.final_cost;
            best = best.min(c);
        }
        let tol = grid.oracle.relative_tolerance * best + grid.oracle.absolute_tolerance;
        (best, final_cost <= best + tol)
    };
    let label = Label::from_outcome(oracle_optimal, result.certificate.verdict);

    Ok(TrialRecord {
        cell: *cell,
        trial,
        seed,
        final_cost,
        iterations: result.solve.outer_iterations,
        gradient_norm: result.solve.gradient_norm,
        rotation_error_deg: rotation_error(&result.rotation, &scene.gt_rotation),
        translation_error_deg: translation_error(&result.translation, &scene.gt_translation),
        certificate: result.certificate,
        oracle_cost,
        oracle_optimal,
        oracle_disagreement: label == Label::FalsePositive,
        label,
    })
}

fn summarize(cell: &Cell, records: &[&TrialRecord], failures: usize) -> CellSummary {
    let [tp, fp, fnp, tn] = label_counts(records);
    let certified = tp + fp;
    let iterations: Vec<f64> = records.iter().map(|r| r.iterations as f64).collect();
    let rot: Vec<f64> = records.iter().map(|r| r.rotation_error_deg).collect();
    let trans: Vec<f64> = records.iter().map(|r| r.translation_error_deg).collect();
    CellSummary {
        cell: *cell,
        trials: records.len(),
        failures,
        certified,
        certified_fraction: ratio(certified, records.len() + failures).unwrap_or(0.0),
        tp,
        fp,
        fnp,
        tn,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fnp),
        median_iterations: Quantiles::of(&iterations).map(|q| q.median),
        rotation_error_deg: Quantiles::of(&rot),
        translation_error_deg: Quantiles::of(&trans),
        oracle_disagreements: records.iter().filter(|r| r.oracle_disagreement).count(),
    }
}

/// Runs every trial of the grid in parallel. Output is identical across runs
/// and thread counts for a given grid.
pub fn run_grid(grid: &ExperimentGrid) -> Result<ExperimentResults> {
    grid.validate()?;
    let cells = grid.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..grid.trials_per_cell).map(move |t| (c, t)))
        .collect();
    let outcomes: Vec<Result<TrialRecord>> = jobs
        .par_iter()
        .map(|&(c, t)| run_trial(grid, &cells[c], t))
        .collect();

    let mut records = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (&(c, t), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => failures.push(TrialFailure {
                cell: cells[c],
                trial: t,
                seed: trial_seed(grid.master_seed, cells[c].scene_index, t),
                message: e.to_string(),
            }),
        }
    }
    let summaries = cells
        .iter()
        .map(|cell| {
            let recs: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.cell.index == cell.index)
                .collect();
            let fails = failures
                .iter()
                .filter(|f| f.cell.index == cell.index)
                .count();
            summarize(cell, &recs, fails)
        })
        .collect();

    Ok(ExperimentResults {
        master_seed: grid.master_seed,
        grid: grid.clone(),
        records,
        failures,
        summaries,
    })
}

impl ExperimentResults {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)
            .map_err(|e| Error::format(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::format(path, e))
    }

    /// One row per trial.
    pub fn write_records_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record([
            "cell",
            "init",
            "noise_px",
            "n_points",
            "fov_deg",
            "parallax_min",
            "parallax_max",
            "focal_px",
            "trial",
            "seed",
            "final_cost",
            "iterations",
            "gap",
            "min_eigenvalue",
            "verdict",
            "rotation_error_deg",
            "translation_error_deg",
            "oracle_cost",
            "label",
        ])
        .map_err(|e| csv_error(path, e))?;
        for r in &self.records {
            let c = &r.cell;
            w.write_record([
                c.index.to_string(),
                c.init.label().to_string(),
                c.noise_px.to_string(),
                c.n_points.to_string(),
                c.fov_deg.to_string(),
                c.parallax_range[0].to_string(),
                c.parallax_range[1].to_string(),
                c.focal_px.to_string(),
                r.trial.to_string(),
                r.seed.to_string(),
                r.final_cost.to_string(),
                r.iterations.to_string(),
                r.certificate.gap.to_string(),
                r.certificate.min_eigenvalue.to_string(),
                format!("{:?}", r.certificate.verdict),
                r.rotation_error_deg.to_string(),
                r.translation_error_deg.to_string(),
                r.oracle_cost.to_string(),
                r.label.as_str().to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes the per-figure series into `dir`:
    /// `certified_fraction.csv`, `rotation_error.csv`, `iterations.csv` and
    /// `labels.csv`. Undefined ratios are written as `undefined`.
    pub fn write_plot_data(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let key = [
            "init",
            "fov_deg",
            "parallax_min",
            "parallax_max",
            "focal_px",
            "noise_px",
            "n_points",
        ];
        let key_values = |c: &Cell| {
            vec![
                c.init.label().to_string(),
                c.fov_deg.to_string(),
                c.parallax_range[0].to_string(),
                c.parallax_range[1].to_string(),
                c.focal_px.to_string(),
                c.noise_px.to_string(),
                c.n_points.to_string(),
            ]
        };
        let opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| x.to_string());

        type Row = Box<dyn Fn(&CellSummary) -> Vec<String>>;
        let series: [(&str, Vec<&str>, Row); 4] = [
            (
                "certified_fraction.csv",
                vec!["certified_fraction", "precision", "recall"],
                Box::new(move |s: &CellSummary| {
                    vec![
                        s.certified_fraction.to_string(),
                        opt(s.precision),
                        opt(s.recall),
                    ]
                }),
            ),
            (
                "rotation_error.csv",
                vec!["q25_deg", "median_deg", "q75_deg", "max_deg"],
                Box::new(move |s: &CellSummary| match s.rotation_error_deg {
                    Some(q) => vec![q.q25, q.median, q.q75, q.max]
                        .into_iter()
                        .map(|v| v.to_string())
                        .collect(),
                    None => vec!["undefined".to_string(); 4],
                }),
            ),
            (
                "iterations.csv",
                vec!["median_iterations"],
                Box::new(move |s: &CellSummary| vec![opt(s.median_iterations)]),
            ),
            (
                "labels.csv",
                vec!["tp", "fp", "fnp", "tn", "failures"],
                Box::new(|s: &CellSummary| {
                    [s.tp, s.fp, s.fnp, s.tn, s.failures]
                        .iter()
                        .map(|v| v.to_string())
                        .collect()
                }),
            ),
        ];

        let mut written = Vec::new();
        for (name, columns, row) in series {
            let path = dir.join(name);
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
            let header: Vec<&str> = key.iter().copied().chain(columns).collect();
            w.write_record(&header).map_err(|e| csv_error(&path, e))?;
            for s in &self.summaries {
                let mut rec = key_values(&s.cell);
                rec.extend(row(s));
                w.write_record(&rec).map_err(|e| csv_error(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e)
    }
}
