//! Hypothesize-and-verify estimation of the essential matrix from
//! outlier-contaminated correspondences.
//!
//! Hypotheses come from [`eight_point`] on random 8-pair samples; the
//! consensus score is the number of pairs whose squared algebraic error
//! `(fᵀ E f')²` falls below the threshold. Whenever a sample improves on the
//! best score, the model is also re-fitted on that sample's consensus set and
//! the better of the two is kept.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EssentialElement;
use crate::init::eight_point;
use crate::problem::{build_data_matrix, BearingPair};
use crate::rtr::{solve_rtr, RtrConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Threshold on the squared algebraic error.
    pub inlier_threshold: f64,
    pub sample_size: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            inlier_threshold: 1e-6,
            sample_size: 8,
            confidence: 0.99,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size < 8 {
            return Err(Error::InvalidConfig(
                "sample_size must be at least 8".into(),
            ));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::InvalidConfig(
                "inlier threshold must be positive".into(),
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidConfig("confidence must lie in (0, 1)".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "max_iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacReport {
    pub best_model: EssentialElement,
    pub inlier_mask: Vec<bool>,
    pub iterations_used: usize,
    pub inlier_count: usize,
}

impl RansacReport {
    pub fn inliers(&self, pairs: &[BearingPair]) -> Vec<BearingPair> {
        pairs
            .iter()
            .zip(&self.inlier_mask)
            .filter(|(_, &keep)| keep)
            .map(|(p, _)| *p)
            .collect()
    }
}

fn consensus(pairs: &[BearingPair], model: &EssentialElement, threshold: f64) -> Vec<bool> {
    pairs
        .iter()
        .map(|p| p.algebraic_error(model.matrix()).powi(2) < threshold)
        .collect()
}

/// Number of samples needed to draw one all-inlier sample with probability
/// `confidence` when a fraction `w` of the data are inliers.
fn required_iterations(w: f64, sample_size: usize, confidence: f64) -> f64 {
    let good = w.powi(sample_size as i32);
    if good >= 1.0 {
        return 1.0;
    }
    if good <= 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - confidence).ln() / (1.0 - good).ln()).ceil()
}

struct Candidate {
    model: EssentialElement,
    mask: Vec<bool>,
    count: usize,
}

fn score(pairs: &[BearingPair], model: EssentialElement, threshold: f64) -> Candidate {
    let mask = consensus(pairs, &model, threshold);
    let count = mask.iter().filter(|&&m| m).count();
    Candidate { model, mask, count }
}

const MAX_REFITS: usize = 10;

/// Re-estimates the model from every pair in the consensus set of `cand` by
/// minimizing the algebraic error over the essential manifold.
fn refit(pairs: &[BearingPair], cand: &Candidate, threshold: f64) -> Option<Candidate> {
    let support: Vec<BearingPair> = pairs
        .iter()
        .zip(&cand.mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| *p)
        .collect();
    let start = eight_point(&support).ok()?;
    let data = build_data_matrix(&support).ok()?;
    let model = solve_rtr(&data, &start, &RtrConfig::default())
        .ok()?
        .solution;
    Some(score(pairs, model, threshold))
}

pub fn ransac_essential(pairs: &[BearingPair], cfg: &RansacConfig) -> Result<RansacReport> {
    cfg.validate()?;
    let n = pairs.len();
    if n < cfg.sample_size {
        return Err(Error::InsufficientData {
            needed: cfg.sample_size,
            got: n,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<Candidate> = None;
    let mut iterations = 0;
    let mut bound = cfg.max_iterations as f64;
    let mut subset = Vec::with_capacity(cfg.sample_size);

    while (iterations as f64) < bound.min(cfg.max_iterations as f64) {
        iterations += 1;
        subset.clear();
        subset.extend(
            sample(&mut rng, n, cfg.sample_size)
                .into_iter()
                .map(|i| pairs[i]),
        );
        let model = match eight_point(&subset) {
            Ok(m) => m,
            Err(Error::DegenerateConfiguration(_)) => continue,
            Err(e) => return Err(e),
        };
        let mut cand = score(pairs, model, cfg.inlier_threshold);
        if best.as_ref().is_some_and(|b| cand.count <= b.count) {
            continue;
        }
        for _ in 0..MAX_REFITS {
            match refit(pairs, &cand, cfg.inlier_threshold) {
                Some(better) if better.count > cand.count => cand = better,
                _ => break,
            }
        }
        bound = required_iterations(
            cand.count as f64 / n as f64,
            cfg.sample_size,
            cfg.confidence,
        );
        best = Some(cand);
    }

    let best = best.ok_or(Error::NoModelFound)?;
    Ok(RansacReport {
        best_model: best.model,
        inlier_mask: best.mask,
        iterations_used: iterations,
        inlier_count: best.count,
    })
}
