//! Four-plane synthetic room with random motions and uniform inlier noise,
//! scored by rotation/translation error and validity.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::ClassConfig;
use crate::error::{Error, Result};
use crate::geom::{angle_between, rotation_angle, Plane, RigidMotion, Vec3};
use crate::pair_match::{match_views_with, ValidationConfig};
use crate::par::{derive_seed, map_range, Execution};
use crate::synth::{noisy_plane, RectPatch};

/// Validity thresholds of a trial.
pub const VALID_ROT_MAX: f64 = 20.0 * PI / 180.0;
pub const VALID_TRANS_MAX: f64 = 0.20;

/// Noise levels swept by the default benchmark (percent).
pub const DEFAULT_LEVELS: [f64; 8] = [0.0, 5.0, 10.0, 20.0, 30.0, 50.0, 80.0, 100.0];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    /// Left wall, far wall, floor, ceiling.
    pub patches: [RectPatch; 4],
    pub planes: Vec<Plane>,
    pub width: f64,
    pub depth: f64,
    pub height: f64,
}

/// Left wall at x = −2, far wall at z = −2, floor at y = 0 and ceiling at
/// y = 2.5; walls are 4 m × 2.5 m, floor and ceiling 4 m × 4 m.
pub fn make_toy_scene() -> ToyScene {
    let (width, depth, height) = (4.0, 4.0, 2.5);
    let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
    let patches = [
        RectPatch::new(Vec3::new(-2.0, height / 2.0, 0.0), z * depth, y * height),
        RectPatch::new(Vec3::new(0.0, height / 2.0, -2.0), x * width, y * height),
        RectPatch::new(Vec3::new(0.0, 0.0, 0.0), x * width, z * depth),
        RectPatch::new(Vec3::new(0.0, height, 0.0), x * width, z * depth),
    ];
    let planes = patches.iter().map(RectPatch::plane).collect();
    ToyScene { patches, planes, width, depth, height }
}

/// Yaw uniform in `[−π, π]` about +Y and translation uniform in `[−1, 1]`
/// per axis.
pub fn random_motion(rng: &mut impl Rng) -> RigidMotion {
    let yaw = rng.random_range(-PI..=PI);
    let t = Vec3::new(
        rng.random_range(-1.0..=1.0),
        rng.random_range(-1.0..=1.0),
        rng.random_range(-1.0..=1.0),
    );
    RigidMotion::from_rotation(Rotation3::from_axis_angle(&Vec3::y_axis(), yaw), t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Percent of `max_displacement`, in `[0, 100]`.
    pub level: f64,
    pub max_displacement: f64,
    pub samples_per_plane: usize,
}

impl NoiseConfig {
    pub fn new(level: f64) -> Self {
        Self { level, max_displacement: 2.0, samples_per_plane: 400 }
    }

    pub fn radius(&self) -> f64 {
        self.level / 100.0 * self.max_displacement
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.level) {
            return Err(Error::InvalidConfig(format!("noise level {} outside [0, 100]", self.level)));
        }
        if self.samples_per_plane < 3 {
            return Err(Error::InvalidConfig("at least 3 samples per plane".into()));
        }
        Ok(())
    }
}

/// Samples the patch, displaces every sample uniformly within the noise ball
/// and refits the plane.
pub fn perturb_plane(patch: &RectPatch, noise: &NoiseConfig, rng: &mut impl Rng) -> Result<Plane> {
    noisy_plane(patch, noise.samples_per_plane, noise.radius(), None, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub success: bool,
    /// Angle of `R_est R_gtᵀ` (NaN when unsuccessful).
    pub rot_error: f64,
    /// `‖t_est − t_gt‖` (NaN when unsuccessful).
    pub trans_error: f64,
    pub valid: bool,
}

impl TrialResult {
    pub fn score(estimate: Option<&RigidMotion>, truth: &RigidMotion) -> Self {
        match estimate {
            None => Self { success: false, rot_error: f64::NAN, trans_error: f64::NAN, valid: false },
            Some(m) => {
                let rot_error = rotation_angle(&(m.rotation() * truth.rotation().transpose()));
                let trans_error = (m.translation() - truth.translation()).norm();
                Self {
                    success: true,
                    rot_error,
                    trans_error,
                    valid: rot_error < VALID_ROT_MAX && trans_error < VALID_TRANS_MAX,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub noise_level: f64,
    pub rot_error_mean: f64,
    pub rot_error_std: f64,
    pub trans_error_mean: f64,
    pub trans_error_std: f64,
    /// Percent of trials that produced a motion.
    pub success: f64,
    /// Percent of all trials that were valid.
    pub validity: f64,
    pub trials: usize,
    /// Largest errors over successful trials.
    pub rot_error_max: f64,
    pub trans_error_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub trials: usize,
    pub seed: u64,
    pub classes: ClassConfig,
    /// Matching thresholds. The rotation gate must admit any yaw, since the
    /// random motions cover the full circle.
    pub validation: ValidationConfig,
    pub samples_per_plane: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            trials: 10_000,
            seed: 0,
            classes: ClassConfig::default(),
            validation: ValidationConfig { motion_rot_max: PI, ..ValidationConfig::default() },
            samples_per_plane: 400,
        }
    }
}

/// One trial: both views are sampled and perturbed independently, then
/// matched with no prior.
pub fn run_trial(level: f64, trial: usize, cfg: &BenchConfig, scene: &ToyScene) -> TrialResult {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, level.to_bits(), trial as u64));
    let truth = random_motion(&mut rng);
    let noise = NoiseConfig { samples_per_plane: cfg.samples_per_plane, ..NoiseConfig::new(level) };
    let mut planes_a = Vec::with_capacity(4);
    let mut planes_b = Vec::with_capacity(4);
    for patch in &scene.patches {
        let a = perturb_plane(patch, &noise, &mut rng);
        let b = perturb_plane(&patch.transformed(&truth), &noise, &mut rng);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                planes_a.push(a);
                planes_b.push(b);
            }
            _ => return TrialResult::score(None, &truth),
        }
    }
    let up_a = Vec3::y_axis();
    let up_b = truth.transform_unit(&up_a);
    let vcfg = ValidationConfig { sample_seed: rng.random(), ..cfg.validation };
    let reg = match_views_with(&planes_a, &planes_b, &up_a, &up_b, &cfg.classes, &vcfg, Execution::Sequential);
    TrialResult::score(reg.outcome.as_ref().ok().map(|e| &e.motion), &truth)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate(level: f64, results: &[TrialResult]) -> BenchmarkRow {
    let ok: Vec<&TrialResult> = results.iter().filter(|r| r.success).collect();
    let rot: Vec<f64> = ok.iter().map(|r| r.rot_error).collect();
    let trans: Vec<f64> = ok.iter().map(|r| r.trans_error).collect();
    let (rm, rs) = mean_std(&rot);
    let (tm, ts) = mean_std(&trans);
    let n = results.len().max(1) as f64;
    BenchmarkRow {
        noise_level: level,
        rot_error_mean: rm,
        rot_error_std: rs,
        trans_error_mean: tm,
        trans_error_std: ts,
        success: 100.0 * ok.len() as f64 / n,
        validity: 100.0 * results.iter().filter(|r| r.valid).count() as f64 / n,
        trials: results.len(),
        rot_error_max: rot.iter().copied().fold(f64::NAN, f64::max),
        trans_error_max: trans.iter().copied().fold(f64::NAN, f64::max),
    }
}

pub fn run_benchmark(levels: &[f64], trials: usize, seed: u64) -> Result<Vec<BenchmarkRow>> {
    let cfg = BenchConfig { trials, seed, ..BenchConfig::default() };
    run_benchmark_with(levels, &cfg, Execution::default())
}

/// Runs every level. Trials fan out over threads with per-trial seeds, so
/// rows are identical under either execution strategy.
pub fn run_benchmark_with(levels: &[f64], cfg: &BenchConfig, exec: Execution) -> Result<Vec<BenchmarkRow>> {
    let scene = make_toy_scene();
    levels
        .iter()
        .map(|&level| {
            NoiseConfig::new(level).validate()?;
            let results = map_range(cfg.trials, exec, |i| run_trial(level, i, cfg, &scene));
            Ok(aggregate(level, &results))
        })
        .collect()
}

/// Column names of the benchmark CSV.
pub const CSV_HEADER: [&str; 7] = [
    "noiseperc",
    "roterrorrad",
    "roterrorradstd",
    "transerrormet",
    "transerrormetstd",
    "success",
    "valid",
];

pub fn write_csv<W: Write>(rows: &[BenchmarkRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.noise_level,
            r.rot_error_mean,
            r.rot_error_std,
            r.trans_error_mean,
            r.trans_error_std,
            r.success,
            r.validity,
        ]
        .map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

/// Mean normal deviation (radians) and mean absolute offset error (meters)
/// of a perturbed plane relative to its exact patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub level: f64,
    pub normal_deviation: f64,
    pub offset_error: f64,
}

pub fn calibrate_noise(patch: &RectPatch, level: f64, repetitions: usize, seed: u64) -> Result<NoiseCalibration> {
    let exact = patch.plane();
    let noise = NoiseConfig::new(level);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut dev, mut off) = (0.0, 0.0);
    for _ in 0..repetitions {
        let p = perturb_plane(patch, &noise, &mut rng)?;
        let (n, d) = p.oriented_along(&exact.normal);
        dev += angle_between(&n, &exact.normal);
        off += (d - exact.offset).abs();
    }
    let k = repetitions.max(1) as f64;
    Ok(NoiseCalibration { level, normal_deviation: dev / k, offset_error: off / k })
}
