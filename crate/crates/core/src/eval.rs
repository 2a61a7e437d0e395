//! Registration scoring against ground-truth point correspondences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{RigidMotion, Vec3};
use crate::motion::median;

/// Correspondence error below which a registered pair counts as valid.
pub const VALID_CORR_ERROR: f64 = 0.20;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(Vec3, Vec3)>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(Vec3, Vec3)>) -> Self {
        Self { pairs }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::EmptyCorrespondences);
        }
        if !self.pairs.iter().all(|(a, b)| a.iter().chain(b.iter()).all(|v| v.is_finite())) {
            return Err(Error::DegenerateInput("non-finite correspondence coordinates".into()));
        }
        Ok(())
    }
}

/// Mean distance between each moved view-a point and its view-b partner.
pub fn correspondence_error(motion: &RigidMotion, corr: &CorrespondenceSet) -> Result<f64> {
    corr.validate()?;
    let sum: f64 = corr.pairs.iter().map(|(a, b)| (motion.transform_point(a) - b).norm()).sum();
    Ok(sum / corr.pairs.len() as f64)
}

/// Outcome of registering one view pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub registered: bool,
    /// Correspondence error of the estimate; `None` when unregistered.
    pub corr_error: Option<f64>,
    pub elapsed_ms: f64,
}

impl PairResult {
    pub fn valid(&self) -> bool {
        self.valid_below(VALID_CORR_ERROR)
    }

    pub fn valid_below(&self, threshold: f64) -> bool {
        self.registered && self.corr_error.is_some_and(|e| e < threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: Vec<PairResult>,
    pub total: usize,
    pub registered: usize,
    pub valid: usize,
    pub success: f64,
    pub recall: f64,
    /// Zero when nothing registered; see `precision_undefined`.
    pub precision: f64,
    pub precision_undefined: bool,
    /// Over registered pairs; `None` when nothing registered.
    pub rmse: Option<f64>,
    /// Median correspondence error over registered pairs.
    pub mae: Option<f64>,
    pub mean_time_ms: f64,
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn aggregate(results: &[PairResult]) -> EvalReport {
    aggregate_with(results, VALID_CORR_ERROR)
}

/// Aggregates with a custom validity threshold (meters).
pub fn aggregate_with(results: &[PairResult], threshold: f64) -> EvalReport {
    let total = results.len();
    let mut errors: Vec<f64> = results.iter().filter(|r| r.registered).filter_map(|r| r.corr_error).collect();
    let registered = results.iter().filter(|r| r.registered).count();
    let valid = results.iter().filter(|r| r.valid_below(threshold)).count();
    let rmse = (!errors.is_empty())
        .then(|| (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt());
    let mae = (!errors.is_empty()).then(|| median(&mut errors));
    let mean_time_ms = if total == 0 {
        0.0
    } else {
        results.iter().map(|r| r.elapsed_ms).sum::<f64>() / total as f64
    };
    EvalReport {
        pairs: results.to_vec(),
        total,
        registered,
        valid,
        success: percent(registered, total),
        recall: percent(valid, total),
        precision: percent(valid, registered),
        precision_undefined: registered == 0,
        rmse,
        mae,
        mean_time_ms,
    }
}
