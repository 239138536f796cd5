//! Random two-view problems.
//!
//! Camera 1 sits at the origin with identity orientation. 3D points are drawn
//! in its viewing frustum, the second camera centre is drawn in a spherical
//! shell around the origin and oriented towards the point cloud, and the
//! second pose is resampled until every point is visible from both cameras.
//! Bearings are perturbed in their tangent plane by a pixel-scaled error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{essential_from_pose, EssentialElement, Mat3, Rotation3, UnitVector3, Vec3};
use crate::problem::BearingPair;

/// Distribution of the per-bearing tangent-plane error.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Uniform direction in the tangent plane, magnitude uniform in
    /// `[0, noise_px] / focal_px`.
    #[default]
    UniformTangent,
    /// Isotropic Gaussian in the tangent plane with per-axis standard
    /// deviation `noise_px / focal_px`.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_points: usize,
    pub noise_px: f64,
    pub focal_px: f64,
    pub fov_deg: f64,
    pub parallax_range: [f64; 2],
    pub depth_range: [f64; 2],
    pub noise_model: NoiseModel,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_points: 100,
            noise_px: 0.0,
            focal_px: 800.0,
            fov_deg: 100.0,
            parallax_range: [0.5, 2.0],
            depth_range: [1.0, 8.0],
            noise_model: NoiseModel::UniformTangent,
            max_attempts: 10_000,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_points < 5 {
            return bad("n_points must be at least 5");
        }
        if !(self.noise_px >= 0.0) {
            return bad("noise_px must be non-negative");
        }
        if !(self.focal_px > 0.0) {
            return bad("focal_px must be positive");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad("fov_deg must lie in (0, 180)");
        }
        let [pmin, pmax] = self.parallax_range;
        if !(pmin > 0.0 && pmin <= pmax) {
            return bad("parallax_range must satisfy 0 < min <= max");
        }
        let [dmin, dmax] = self.depth_range;
        if !(dmin > 0.0 && dmin <= dmax) {
            return bad("depth_range must satisfy 0 < min <= max");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        Ok(())
    }
}

/// A generated instance with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    pub pairs: Vec<BearingPair>,
    pub points: Vec<Vec3>,
    pub gt_rotation: Rotation3,
    pub gt_translation: UnitVector3,
    pub gt_essential: EssentialElement,
    /// Metric position of camera 2 in the camera-1 frame.
    pub gt_center: Vec3,
    /// `false` for correspondences replaced by [`contaminate`].
    pub inlier_mask: Vec<bool>,
    pub config: SceneConfig,
}

fn in_cone(p: &Vec3, cos_half_fov: f64) -> bool {
    p.z > 0.0 && p.z >= cos_half_fov * p.norm()
}

fn unit_gaussian(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Rotation whose third column (optical axis) is `axis`, with roll `roll`.
fn look_along(axis: &Vec3, roll: f64) -> Mat3 {
    let z = axis.normalize();
    let helper = if z.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let x0 = helper.cross(&z).normalize();
    let y0 = z.cross(&x0);
    let (s, c) = roll.sin_cos();
    let x = x0 * c + y0 * s;
    let y = z.cross(&x);
    Mat3::from_columns(&[x, y, z])
}

fn perturb(b: &Vec3, cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec3 {
    if cfg.noise_px == 0.0 {
        return *b;
    }
    let helper = if b.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let u = b.cross(&helper).normalize();
    let v = b.cross(&u);
    let scale = cfg.noise_px / cfg.focal_px;
    let offset = match cfg.noise_model {
        NoiseModel::UniformTangent => {
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            let mag = rng.random::<f64>() * scale;
            (u * theta.cos() + v * theta.sin()) * mag
        }
        NoiseModel::Gaussian => {
            let a: f64 = StandardNormal.sample(rng);
            let c: f64 = StandardNormal.sample(rng);
            (u * a + v * c) * scale
        }
    };
    (b + offset).normalize()
}

/// Generates a problem; deterministic in `config`.
const POSES_PER_CLOUD: usize = 100;

pub fn generate(config: &SceneConfig) -> Result<SyntheticProblem> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let half_fov = config.fov_deg.to_radians() / 2.0;
    let cos_half = half_fov.cos();
    let tan_half = half_fov.tan();
    let [dmin, dmax] = config.depth_range;
    let [pmin, pmax] = config.parallax_range;

    let mut points = Vec::with_capacity(config.n_points);
    let mut centroid = Vec3::zeros();
    let mut pose = None;
    for attempt in 0..config.max_attempts {
        // A cloud that camera 2 keeps failing to see is discarded.
        if attempt % POSES_PER_CLOUD == 0 {
            points.clear();
            let mut draws = 0usize;
            while points.len() < config.n_points {
                draws += 1;
                if draws > config.max_attempts * config.n_points {
                    return Err(Error::GenerationTimeout { attempts: draws });
                }
                let z = dmin + (dmax - dmin) * rng.random::<f64>();
                let x = (2.0 * rng.random::<f64>() - 1.0) * z * tan_half;
                let y = (2.0 * rng.random::<f64>() - 1.0) * z * tan_half;
                let p = Vec3::new(x, y, z);
                if in_cone(&p, cos_half) {
                    points.push(p);
                }
            }
            centroid = points.iter().sum::<Vec3>() / points.len() as f64;
        }

        let radius = pmin + (pmax - pmin) * rng.random::<f64>();
        let center = unit_gaussian(&mut rng) * radius;
        let to_scene = centroid - center;
        if to_scene.norm() < 1e-9 {
            continue;
        }
        // Aim at the cloud, then tilt the axis by up to a tenth of the FoV.
        let tilt_axis = unit_gaussian(&mut rng);
        let tilt = Rotation3::exp(&(tilt_axis * rng.random::<f64>() * half_fov * 0.1));
        let axis = tilt.matrix() * to_scene;
        let roll = rng.random::<f64>() * std::f64::consts::TAU;
        let r = look_along(&axis, roll);
        if points
            .iter()
            .all(|p| in_cone(&(r.transpose() * (p - center)), cos_half))
        {
            pose = Some((r, center));
            break;
        }
    }
    let (r_mat, center) = pose.ok_or(Error::GenerationTimeout {
        attempts: config.max_attempts,
    })?;

    let gt_rotation = Rotation3::from_matrix(r_mat)?;
    let gt_translation = UnitVector3::normalize(center)?;
    let gt_essential = essential_from_pose(gt_rotation, gt_translation);

    let mut pairs = Vec::with_capacity(points.len());
    for p in &points {
        let f = p.normalize();
        let fp = (r_mat.transpose() * (p - center)).normalize();
        let f = perturb(&f, config, &mut rng);
        let fp = perturb(&fp, config, &mut rng);
        pairs.push(BearingPair::new(
            UnitVector3::normalize(f)?,
            UnitVector3::normalize(fp)?,
        ));
    }

    Ok(SyntheticProblem {
        inlier_mask: vec![true; pairs.len()],
        pairs,
        points,
        gt_rotation,
        gt_translation,
        gt_essential,
        gt_center: center,
        config: config.clone(),
    })
}

/// Replaces `round(fraction * N)` randomly chosen correspondences with pairs
/// of independent uniformly random unit vectors and marks them in
/// `inlier_mask`.
pub fn contaminate(problem: &mut SyntheticProblem, fraction: f64, seed: u64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "outlier fraction {fraction} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = problem.pairs.len();
    let k = (fraction * n as f64).round() as usize;
    for idx in rand::seq::index::sample(&mut rng, n, k).into_iter() {
        let f = UnitVector3::normalize(unit_gaussian(&mut rng))?;
        let fp = UnitVector3::normalize(unit_gaussian(&mut rng))?;
        problem.pairs[idx] = BearingPair::new(f, fp);
        problem.inlier_mask[idx] = false;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_residual(p: &SyntheticProblem) -> f64 {
        p.pairs
            .iter()
            .map(|b| b.algebraic_error(p.gt_essential.matrix()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn noiseless_is_exact() {
        for seed in 0..100 {
            let p = generate(&SceneConfig {
                n_points: 50,
                seed,
                ..SceneConfig::default()
            })
            .unwrap();
            assert!(max_residual(&p) <= 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SceneConfig {
            n_points: 40,
            noise_px: 1.0,
            seed: 99,
            ..SceneConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }

    #[test]
    fn geometry_respects_config() {
        for seed in 0..50 {
            let cfg = SceneConfig {
                n_points: 30,
                noise_px: 2.5,
                seed,
                ..SceneConfig::default()
            };
            let p = generate(&cfg).unwrap();
            let r = p.gt_rotation.matrix();
            let baseline = p.gt_center.norm();
            assert!(baseline >= cfg.parallax_range[0] && baseline <= cfg.parallax_range[1]);
            let cos_half = (cfg.fov_deg.to_radians() / 2.0).cos();
            for b in &p.pairs {
                assert!((b.f.as_vec().norm() - 1.0).abs() < 1e-12);
                assert!((b.f_prime.as_vec().norm() - 1.0).abs() < 1e-12);
            }
            for x in &p.points {
                assert!(in_cone(x, cos_half));
                assert!(in_cone(&(r.transpose() * (x - p.gt_center)), cos_half));
                assert!(x.z >= cfg.depth_range[0] && x.z <= cfg.depth_range[1]);
            }
        }
    }

    #[test]
    fn noise_grows_with_level() {
        let levels = [0.0, 0.1, 0.5, 1.0, 2.5];
        let means: Vec<f64> = levels
            .iter()
            .map(|&noise_px| {
                let mut acc = 0.0;
                let mut count = 0usize;
                for seed in 0..200 {
                    let p = generate(&SceneConfig {
                        n_points: 20,
                        noise_px,
                        seed,
                        ..SceneConfig::default()
                    })
                    .unwrap();
                    for b in &p.pairs {
                        acc += b.algebraic_error(p.gt_essential.matrix()).abs();
                        count += 1;
                    }
                }
                acc / count as f64
            })
            .collect();
        for w in means.windows(2) {
            assert!(w[0] < w[1], "{means:?}");
        }
    }

    #[test]
    fn gaussian_model_is_available() {
        let p = generate(&SceneConfig {
            n_points: 20,
            noise_px: 1.0,
            noise_model: NoiseModel::Gaussian,
            seed: 1,
            ..SceneConfig::default()
        })
        .unwrap();
        assert!(max_residual(&p) > 0.0);
    }

    #[test]
    fn infeasible_config_times_out() {
        let cfg = SceneConfig {
            n_points: 50,
            fov_deg: 1.0,
            parallax_range: [50.0, 60.0],
            depth_range: [1.0, 100.0],
            max_attempts: 50,
            ..SceneConfig::default()
        };
        assert!(matches!(
            generate(&cfg),
            Err(Error::GenerationTimeout { .. })
        ));
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            SceneConfig {
                n_points: 4,
                ..SceneConfig::default()
            },
            SceneConfig {
                noise_px: -1.0,
                ..SceneConfig::default()
            },
            SceneConfig {
                fov_deg: 180.0,
                ..SceneConfig::default()
            },
            SceneConfig {
                parallax_range: [2.0, 1.0],
                ..SceneConfig::default()
            },
            SceneConfig {
                depth_range: [0.0, 1.0],
                ..SceneConfig::default()
            },
        ] {
            assert!(matches!(generate(&cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn contamination_marks_outliers() {
        let mut p = generate(&SceneConfig {
            n_points: 100,
            seed: 3,
            ..SceneConfig::default()
        })
        .unwrap();
        contaminate(&mut p, 0.3, 17).unwrap();
        assert_eq!(p.inlier_mask.iter().filter(|&&m| !m).count(), 30);
        for (b, &inlier) in p.pairs.iter().zip(&p.inlier_mask) {
            let r = b.algebraic_error(p.gt_essential.matrix()).abs();
            if inlier {
                assert!(r < 1e-12);
            }
        }
    }
}
