//! Greedy RANSAC plane extraction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{fit_plane_colored, Plane, Rgb, Vec3};
use crate::par::{map_range, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    /// Inlier band half-width (meters).
    pub distance_threshold: f64,
    /// Minimum inliers per plane; `None` means `max(500, 1% of the cloud)`.
    pub min_inliers: Option<usize>,
    pub max_planes: usize,
    pub ransac_iterations: usize,
    pub rng_seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            distance_threshold: 0.02,
            min_inliers: None,
            max_planes: 10,
            ransac_iterations: 1000,
            rng_seed: 0,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_threshold > 0.0 && self.distance_threshold.is_finite()) {
            return Err(Error::InvalidConfig("distance_threshold must be positive".into()));
        }
        if self.min_inliers.is_some_and(|m| m < 3) {
            return Err(Error::InvalidConfig("min_inliers must be at least 3".into()));
        }
        if self.max_planes == 0 {
            return Err(Error::InvalidConfig("max_planes must be at least 1".into()));
        }
        if self.ransac_iterations == 0 {
            return Err(Error::InvalidConfig("ransac_iterations must be at least 1".into()));
        }
        Ok(())
    }

    pub fn min_inliers_for(&self, cloud_size: usize) -> usize {
        self.min_inliers.unwrap_or_else(|| 500.max(cloud_size / 100))
    }
}

#[derive(Debug, Clone, Copy)]
struct Hypothesis {
    normal: Vec3,
    offset: f64,
}

impl Hypothesis {
    fn through(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<Self> {
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if !(len > 1e-12) {
            return None;
        }
        let normal = n / len;
        Some(Self { normal, offset: normal.dot(a) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Score {
    count: usize,
    sq_sum: f64,
}

impl Score {
    /// More inliers win; ties go to the lower squared residual sum.
    fn better_than(&self, other: &Score) -> bool {
        self.count > other.count || (self.count == other.count && self.sq_sum < other.sq_sum)
    }
}

fn score(h: &Hypothesis, cloud: &[Vec3], remaining: &[usize], threshold: f64) -> Score {
    let mut s = Score { count: 0, sq_sum: 0.0 };
    for &i in remaining {
        let r = h.normal.dot(&cloud[i]) - h.offset;
        if r.abs() <= threshold {
            s.count += 1;
            s.sq_sum += r * r;
        }
    }
    s
}

fn sample_triple(rng: &mut ChaCha8Rng, n: usize) -> [usize; 3] {
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n);
    while b == a {
        b = rng.random_range(0..n);
    }
    let mut c = rng.random_range(0..n);
    while c == a || c == b {
        c = rng.random_range(0..n);
    }
    [a, b, c]
}

/// Fits `members`, then keeps only those within `threshold` of the fit and
/// refits until the set is stable, so the returned inliers all satisfy the
/// band around the returned plane.
fn refit(cloud: &[Vec3], mut members: Vec<usize>, threshold: f64) -> Option<(Plane, Vec<usize>)> {
    loop {
        let plane = fit_plane_colored(members.iter().map(|&i| cloud[i]).collect(), None).ok()?;
        let before = members.len();
        members.retain(|&i| plane.distance(&cloud[i]) <= threshold);
        if members.len() == before {
            return Some((plane, members));
        }
    }
}

/// Detects planes with default (parallel when available) execution.
pub fn detect_planes(cloud: &[Vec3], colors: Option<&[Rgb]>, cfg: &DetectConfig) -> Result<Vec<Plane>> {
    detect_planes_with(cloud, colors, cfg, Execution::default())
}

/// Greedy RANSAC: find the best-supported plane among the remaining points,
/// refit it, remove its inliers and repeat. Hypotheses are drawn
/// sequentially from the seeded generator and only their scoring fans out,
/// so the result does not depend on `exec`.
pub fn detect_planes_with(
    cloud: &[Vec3],
    colors: Option<&[Rgb]>,
    cfg: &DetectConfig,
    exec: Execution,
) -> Result<Vec<Plane>> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(Error::DegenerateInput("point cloud is empty".into()));
    }
    if let Some(c) = colors {
        if c.len() != cloud.len() {
            return Err(Error::DegenerateInput("color count does not match point count".into()));
        }
    }
    let min_inliers = cfg.min_inliers_for(cloud.len());
    let threshold = cfg.distance_threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut remaining: Vec<usize> = (0..cloud.len()).collect();
    let mut planes = Vec::new();

    while planes.len() < cfg.max_planes && remaining.len() >= min_inliers.max(3) {
        let hypotheses: Vec<Option<Hypothesis>> = (0..cfg.ransac_iterations)
            .map(|_| {
                let [a, b, c] = sample_triple(&mut rng, remaining.len());
                Hypothesis::through(&cloud[remaining[a]], &cloud[remaining[b]], &cloud[remaining[c]])
            })
            .collect();
        let scores = map_range(hypotheses.len(), exec, |k| {
            hypotheses[k].as_ref().map(|h| score(h, cloud, &remaining, threshold))
        });
        let mut best: Option<(usize, Score)> = None;
        for (k, s) in scores.iter().enumerate() {
            if let Some(s) = s {
                if best.is_none_or(|(_, b)| s.better_than(&b)) {
                    best = Some((k, *s));
                }
            }
        }
        let Some((k, s)) = best else { break };
        if s.count < min_inliers {
            break;
        }
        let h = hypotheses[k].expect("scored hypothesis exists");
        let members: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| (h.normal.dot(&cloud[i]) - h.offset).abs() <= threshold)
            .collect();
        // One widening pass with the refit plane, then shrink to the band.
        let Some((first, _)) = refit(cloud, members, threshold) else { break };
        let widened: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| first.distance(&cloud[i]) <= threshold)
            .collect();
        let Some((mut plane, members)) = refit(cloud, widened, threshold) else { break };
        if members.len() < min_inliers {
            break;
        }
        plane.colors = colors.map(|c| members.iter().map(|&i| c[i]).collect());
        let taken: std::collections::HashSet<usize> = members.iter().copied().collect();
        remaining.retain(|i| !taken.contains(i));
        planes.push(plane);
    }

    planes.sort_by_key(|p| std::cmp::Reverse(p.inlier_count()));
    Ok(planes)
}
