//! `epicert`: generate, solve, certify and benchmark relative pose problems.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use epicert_core::io::{
    candidate_element, load_problem, read_json, save_problem, Candidate, ProblemFile, ResultFile,
};
use epicert_core::{
    build_data_matrix_with, certify, contaminate, generate, run_grid, run_pipeline,
    run_robust_pipeline, CertificationFrame, CertifierConfig, ExperimentResults, GapMode, InitKind,
    Label,
};
use serde::Serialize;

use crate::config::Config;

#[derive(Parser)]
#[command(
    name = "epicert",
    version,
    about = "Certifiable relative pose estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic problem file.
    Synth(SynthArgs),
    /// Estimate the pose of a problem file and certify it.
    Solve(SolveArgs),
    /// Certify a given essential matrix for a problem file.
    Certify(CertifyArgs),
    /// Robust estimation on outlier-contaminated correspondences.
    Ransac(RansacArgs),
    /// Run the synthetic benchmark grid.
    Benchmark(BenchmarkArgs),
    /// Turn benchmark results into per-figure CSV series.
    Plotdata(PlotdataArgs),
}

#[derive(Args)]
struct Common {
    /// TOML or JSON configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Write the output here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CertifierFlags {
    /// Coordinate frame used for the certificate.
    #[arg(long, value_enum)]
    frame: Option<Frame>,
    /// Compare the duality gap relative to max(cost, 1) instead of absolutely.
    #[arg(long)]
    relative_gap: bool,
    #[arg(long, allow_hyphen_values = true)]
    tau_mu: Option<f64>,
    #[arg(long)]
    tau_gap: Option<f64>,
}

impl CertifierFlags {
    fn apply(&self, cfg: &mut CertifierConfig) {
        if let Some(frame) = self.frame {
            cfg.frame = frame.into();
        }
        if self.relative_gap {
            cfg.gap_mode = GapMode::Relative { floor: 1.0 };
        }
        if let Some(v) = self.tau_mu {
            cfg.tau_mu = v;
        }
        if let Some(v) = self.tau_gap {
            cfg.tau_gap = v;
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Frame {
    Input,
    Balanced,
}

impl From<Frame> for CertificationFrame {
    fn from(f: Frame) -> Self {
        match f {
            Frame::Input => CertificationFrame::Input,
            Frame::Balanced => CertificationFrame::Balanced,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    #[value(name = "8pt")]
    EightPoint,
    Identity,
    Random,
}

impl From<Init> for InitKind {
    fn from(i: Init) -> Self {
        match i {
            Init::EightPoint => InitKind::EightPoint,
            Init::Identity => InitKind::Identity,
            Init::Random => InitKind::Random,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n_points: Option<usize>,
    /// Noise magnitude in pixels.
    #[arg(long)]
    noise_px: Option<f64>,
    #[arg(long)]
    fov_deg: Option<f64>,
    #[arg(long)]
    focal_px: Option<f64>,
    /// Translation norm range in meters, as `MIN MAX`.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    parallax: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of correspondences replaced by random outliers.
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
}

#[derive(Args)]
struct SolveArgs {
    /// Problem file: correspondence CSV or JSON problem file.
    problem: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    init: Option<Init>,
    /// Seed of the random initializer.
    #[arg(long)]
    init_seed: Option<u64>,
    #[command(flatten)]
    certifier: CertifierFlags,
}

#[derive(Args)]
struct CertifyArgs {
    problem: PathBuf,
    /// JSON file with a row-major `essential` array of 9 numbers.
    candidate: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Largest Frobenius distance between the candidate and the essential set.
    #[arg(long, default_value_t = 1e-6)]
    candidate_tolerance: f64,
    #[command(flatten)]
    certifier: CertifierFlags,
}

#[derive(Args)]
struct RansacArgs {
    problem: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    /// Inlier threshold on the squared algebraic error.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[command(flatten)]
    certifier: CertifierFlags,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Master seed; every trial derives its seed from it.
    #[arg(long)]
    seed: u64,
    /// TOML or JSON configuration file; the `[grid]` table is used.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory for results.json, records.csv and the plot series.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    noise: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    points: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    init: Option<Vec<Init>>,
    /// Random restarts of the optimality oracle.
    #[arg(long)]
    restarts: Option<usize>,
    #[command(flatten)]
    certifier: CertifierFlags,
}

#[derive(Args)]
struct PlotdataArgs {
    /// results.json written by `benchmark`.
    results: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Solve(a) => solve(a),
        Command::Certify(a) => certify_candidate(a),
        Command::Ransac(a) => ransac(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Plotdata(a) => plotdata(a),
    }
}

fn emit<T: Serialize>(value: &T, output: Option<&Path>) -> anyhow::Result<()> {
    match output {
        Some(path) => epicert_core::io::write_json(path, value)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, value)?;
            writeln!(stdout)?;
        }
    }
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut scene = Config::load(a.common.config.as_deref())?.scene;
    if let Some(v) = a.n_points {
        scene.n_points = v;
    }
    if let Some(v) = a.noise_px {
        scene.noise_px = v;
    }
    if let Some(v) = a.fov_deg {
        scene.fov_deg = v;
    }
    if let Some(v) = a.focal_px {
        scene.focal_px = v;
    }
    if let Some(p) = a.parallax {
        scene.parallax_range = [p[0], p[1]];
    }
    if let Some(v) = a.seed {
        scene.seed = v;
    }
    let mut problem = generate(&scene)?;
    if a.outliers > 0.0 {
        contaminate(&mut problem, a.outliers, scene.seed.wrapping_add(1))?;
    }
    let file = ProblemFile::from(&problem);
    match a.common.output {
        // A `.csv` output keeps only the correspondences.
        Some(path) => Ok(save_problem(&path, &file)?),
        None => emit(&file, None),
    }
}

fn solve(a: SolveArgs) -> anyhow::Result<()> {
    let mut cfg = Config::load(a.common.config.as_deref())?.pipeline;
    if let Some(init) = a.init {
        cfg.init = init.into();
    }
    if let Some(seed) = a.init_seed {
        cfg.init_seed = seed;
    }
    a.certifier.apply(&mut cfg.certifier);
    let problem = load_problem(&a.problem)?;
    let res = run_pipeline(&problem.pairs, &cfg)
        .with_context(|| format!("solving {}", a.problem.display()))?;
    let seed = (cfg.init == InitKind::Random).then_some(cfg.init_seed);
    emit(
        &ResultFile::from_pipeline(&res, seed, &cfg),
        a.common.output.as_deref(),
    )
}

fn certify_candidate(a: CertifyArgs) -> anyhow::Result<()> {
    let mut cfg = Config::load(a.common.config.as_deref())?.pipeline;
    a.certifier.apply(&mut cfg.certifier);
    let problem = load_problem(&a.problem)?;
    let candidate: Candidate = read_json(&a.candidate)?;
    let element = candidate_element(&candidate.essential, a.candidate_tolerance)
        .with_context(|| format!("candidate {}", a.candidate.display()))?;
    let data = build_data_matrix_with(&problem.pairs, cfg.normalization)?;
    let report = certify(&data, &element.primal_point(), &cfg.certifier)?;
    emit(&report, a.common.output.as_deref())
}

fn ransac(a: RansacArgs) -> anyhow::Result<()> {
    let cfg = Config::load(a.common.config.as_deref())?;
    let mut pipeline = cfg.pipeline;
    let mut ransac = cfg.ransac;
    if let Some(v) = a.seed {
        ransac.seed = v;
    }
    if let Some(v) = a.threshold {
        ransac.inlier_threshold = v;
    }
    if let Some(v) = a.max_iterations {
        ransac.max_iterations = v;
    }
    a.certifier.apply(&mut pipeline.certifier);
    let problem = load_problem(&a.problem)?;
    let res = run_robust_pipeline(&problem.pairs, &ransac, &pipeline)
        .with_context(|| format!("robust estimation on {}", a.problem.display()))?;
    if let Some(truth) = &problem.inlier_mask {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (&t, &g) in truth.iter().zip(&res.ransac.inlier_mask) {
            match (t, g) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                _ => {}
            }
        }
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + fneg).max(1) as f64;
        eprintln!("inliers: {tp} kept, {fneg} missed, {fp} outliers admitted (F1 {f1:.3})");
    }
    #[derive(Serialize)]
    struct Echo<'a> {
        pipeline: &'a epicert_core::PipelineConfig,
        ransac: &'a epicert_core::RansacConfig,
    }
    let echo = Echo {
        pipeline: &pipeline,
        ransac: &ransac,
    };
    emit(
        &ResultFile::from_robust(&res, Some(ransac.seed), &echo),
        a.common.output.as_deref(),
    )
}

fn benchmark(a: BenchmarkArgs) -> anyhow::Result<()> {
    let mut grid = Config::load(a.config.as_deref())?.grid;
    grid.master_seed = a.seed;
    if let Some(v) = a.trials {
        grid.trials_per_cell = v;
    }
    if let Some(v) = a.noise {
        grid.noise_levels = v;
    }
    if let Some(v) = a.points {
        grid.point_counts = v;
    }
    if let Some(v) = a.init {
        grid.initializers = v.into_iter().map(InitKind::from).collect();
    }
    if let Some(v) = a.restarts {
        grid.oracle.restarts = v;
    }
    a.certifier.apply(&mut grid.pipeline.certifier);

    let start = std::time::Instant::now();
    let results = run_grid(&grid)?;
    let elapsed = start.elapsed();

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    results.write_json(&a.out.join("results.json"))?;
    results.write_records_csv(&a.out.join("records.csv"))?;
    results.write_plot_data(&a.out)?;

    print_summary(&results);
    eprintln!(
        "{} trials, {} failed, in {:.1?}; results in {}",
        results.records.len(),
        results.failures.len(),
        elapsed,
        a.out.display()
    );
    Ok(())
}

fn print_summary(results: &ExperimentResults) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.3}"));
    eprintln!("init      noise  N     certified  precision  recall     med.iter");
    for s in &results.summaries {
        eprintln!(
            "{:<9} {:<6} {:<5} {:<10.3} {:<10} {:<10} {}",
            s.cell.init.label(),
            s.cell.noise_px,
            s.cell.n_points,
            s.certified_fraction,
            fmt(s.precision),
            fmt(s.recall),
            fmt(s.median_iterations),
        );
    }
    let fp = results
        .records
        .iter()
        .filter(|r| r.label == Label::FalsePositive)
        .count();
    if fp > 0 {
        eprintln!("{fp} false positives");
    }
}

fn plotdata(a: PlotdataArgs) -> anyhow::Result<()> {
    let results = ExperimentResults::read_json(&a.results)?;
    for path in results.write_plot_data(&a.out)? {
        println!("{}", path.display());
    }
    Ok(())
}
