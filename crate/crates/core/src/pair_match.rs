//! Plane matching between two views without a prior motion.
//!
//! Same-category plane pairs are compared across views with view-agnostic
//! penalties, surviving candidates are validated by the motion they imply,
//! conflicts are resolved greedily by inlier distance, and single planes are
//! matched one by one when pairs are unavailable.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{classify_normal, classify_pair_normals, ClassConfig, PairClass, PlaneClass};
use crate::error::{Error, Result};
use crate::geom::{angle_between, Plane, RigidMotion, Rgb, UnitVec3, Vec2, Vec3};
use crate::hull::{convex_hull, overlap_ratio};
use crate::motion::{estimate_motion, refined_ups, solve_components, Dof, MatchedPair, MotionEstimate};
use crate::par::{derive_seed, map_slice, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePair {
    pub first: usize,
    pub second: usize,
    pub category: PairClass,
    pub alpha_rel: f64,
    /// `N_first · (P_first − P_second)` with centroids as `P`.
    pub signed_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCandidate {
    pub pair_a: PlanePair,
    pub pair_b: PlanePair,
    pub penalty: f64,
    /// `((i_a, i_b), (j_a, j_b))`.
    pub implied_matches: [(usize, usize); 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub angle_penalty_max: f64,
    pub distance_penalty_max: f64,
    pub motion_rot_max: f64,
    pub motion_trans_max: f64,
    pub normal_angle_max: f64,
    pub offset_diff_max: f64,
    pub inlier_sample: usize,
    pub inlier_dist_max: f64,
    pub hull_overlap_min: f64,
    pub hist_similarity_min: f64,
    pub hist_bins: (usize, usize),
    pub sample_seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        let ten = 10f64.to_radians();
        Self {
            angle_penalty_max: ten,
            distance_penalty_max: 0.10,
            motion_rot_max: std::f64::consts::FRAC_PI_2,
            motion_trans_max: 5.0,
            normal_angle_max: ten,
            offset_diff_max: 0.10,
            inlier_sample: 100,
            inlier_dist_max: 0.05,
            hull_overlap_min: 0.3,
            hist_similarity_min: 0.5,
            hist_bins: (8, 8),
            sample_seed: 0,
        }
    }
}

impl ValidationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("angle_penalty_max", self.angle_penalty_max),
            ("distance_penalty_max", self.distance_penalty_max),
            ("motion_rot_max", self.motion_rot_max),
            ("motion_trans_max", self.motion_trans_max),
            ("normal_angle_max", self.normal_angle_max),
            ("offset_diff_max", self.offset_diff_max),
            ("inlier_dist_max", self.inlier_dist_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("hull_overlap_min", self.hull_overlap_min),
            ("hist_similarity_min", self.hist_similarity_min),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1]")));
            }
        }
        if self.inlier_sample == 0 || self.hist_bins.0 == 0 || self.hist_bins.1 == 0 {
            return Err(Error::InvalidConfig("sample size and histogram bins must be positive".into()));
        }
        Ok(())
    }

    fn penalty_max(&self, category: PairClass) -> f64 {
        if category.is_parallel() {
            self.distance_penalty_max
        } else {
            self.angle_penalty_max
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    /// The implied motion could not be computed.
    MotionUndefined,
    MagnitudeExceeded,
    NormalAngle,
    OffsetDifference,
    InlierDistance,
    HullOverlap,
    ColorHistogram,
}

/// Per-match measurements taken during validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchCheck {
    pub a: usize,
    pub b: usize,
    pub normal_angle: f64,
    pub offset_diff: f64,
    /// Mean distance of sampled inliers to the other plane, both directions.
    pub mean_distance: f64,
    /// `mean_distance` minus the samples' mean distance to their own plane.
    pub excess_distance: f64,
    pub hull_overlap: Option<f64>,
    pub hist_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub motion: Option<RigidMotion>,
    pub rejection: Option<Rejection>,
    pub checks: Vec<MatchCheck>,
}

impl Validation {
    pub fn accepted(&self) -> bool {
        self.rejection.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneMatch {
    pub a: usize,
    pub b: usize,
    pub class: PlaneClass,
    /// Post-motion mean inlier distance used to settle conflicts.
    pub distance: f64,
}

/// One-to-one plane correspondences.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchSet {
    pub matches: Vec<PlaneMatch>,
}

impl MatchSet {
    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.matches.iter().map(|m| (m.a, m.b)).collect()
    }

    pub fn matched_planes<'a>(&self, a: &'a [Plane], b: &'a [Plane]) -> Vec<MatchedPair<'a>> {
        self.matches
            .iter()
            .map(|m| MatchedPair { a: &a[m.a], b: &b[m.b], class: m.class })
            .collect()
    }
}

/// A view: its planes, their classes and the Up direction.
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub planes: &'a [Plane],
    pub classes: &'a [PlaneClass],
    pub up: UnitVec3,
}

pub fn classify_planes(planes: &[Plane], up: &UnitVec3, cfg: &ClassConfig) -> Vec<PlaneClass> {
    planes.iter().map(|p| classify_normal(&p.normal, up, cfg).0).collect()
}

/// Gap between the planes of a parallel pair. Horizontal normals are taken
/// pointing along Up, so the gap reads as a height difference in every view.
/// Vertical normals have no shared reference, so `N_i` is taken pointing
/// toward the partner plane and the gap is minus the separation.
fn signed_gap(pi: &Plane, pj: &Plane, category: PairClass, up: &UnitVec3) -> f64 {
    let gap = |n: &UnitVec3| n.dot(&(pi.centroid - pj.centroid));
    if category == PairClass::Horizontal {
        gap(&pi.oriented_along(up).0)
    } else {
        -gap(&pi.normal).abs()
    }
}

/// All same-class unordered pairs, tagged by pair category; `Other` pairs are
/// dropped.
pub fn generate_pairs(planes: &[Plane], classes: &[PlaneClass], up: &UnitVec3, cfg: &ClassConfig) -> Vec<PlanePair> {
    assert_eq!(planes.len(), classes.len(), "classes must align with planes");
    let mut pairs = Vec::new();
    for i in 0..planes.len() {
        for j in i + 1..planes.len() {
            if classes[i] != classes[j] {
                continue;
            }
            let (category, alpha_rel) =
                classify_pair_normals((&planes[i].normal, classes[i]), (&planes[j].normal, classes[j]), cfg);
            if category == PairClass::Other {
                continue;
            }
            pairs.push(PlanePair {
                first: i,
                second: j,
                category,
                alpha_rel,
                signed_gap: signed_gap(&planes[i], &planes[j], category, up),
            });
        }
    }
    pairs
}

fn flipped(pair: &PlanePair, planes: &[Plane], up: &UnitVec3) -> PlanePair {
    PlanePair {
        first: pair.second,
        second: pair.first,
        signed_gap: signed_gap(&planes[pair.second], &planes[pair.first], pair.category, up),
        ..*pair
    }
}

fn raw_penalty(pa: &PlanePair, pb: &PlanePair) -> f64 {
    if pa.category.is_parallel() {
        (pa.signed_gap - pb.signed_gap).abs()
    } else {
        (pa.alpha_rel - pb.alpha_rel).abs()
    }
}

/// Both role assignments of `pb` against `pa`, identity first.
fn assignments(pa: &PlanePair, pb: &PlanePair, b: &View) -> [(f64, PairCandidate); 2] {
    [*pb, flipped(pb, b.planes, &b.up)].map(|pb| {
        let penalty = raw_penalty(pa, &pb);
        (
            penalty,
            PairCandidate {
                pair_a: *pa,
                pair_b: pb,
                penalty,
                implied_matches: [(pa.first, pb.first), (pa.second, pb.second)],
            },
        )
    })
}

/// Penalty of matching `pa` with `pb` under the better of the two role
/// assignments (identity on ties).
pub fn pair_penalty(pa: &PlanePair, pb: &PlanePair, b: &View) -> PairCandidate {
    let [(p0, c0), (p1, c1)] = assignments(pa, pb, b);
    if p1 < p0 {
        c1
    } else {
        c0
    }
}

/// Candidates whose penalty passes the gate. Both role assignments are kept
/// when both pass; validation decides between them.
pub fn gate_candidates(pairs_a: &[PlanePair], pairs_b: &[PlanePair], b: &View, vcfg: &ValidationConfig) -> Vec<PairCandidate> {
    let mut out = Vec::new();
    for pa in pairs_a {
        for pb in pairs_b.iter().filter(|pb| pb.category == pa.category) {
            let max = vcfg.penalty_max(pa.category);
            let [first, second] = assignments(pa, pb, b);
            for (penalty, cand) in [first, second] {
                if penalty <= max {
                    out.push(cand);
                }
            }
        }
    }
    out
}

/// Hue–saturation histogram of a color list, L1-normalized.
pub fn hs_histogram(colors: &[Rgb], bins: (usize, usize)) -> Vec<f64> {
    let mut h = vec![0.0; bins.0 * bins.1];
    if colors.is_empty() {
        return h;
    }
    for c in colors {
        let [r, g, b] = c.map(|x| x as f64 / 255.0);
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let delta = max - min;
        let hue = if delta == 0.0 {
            0.0
        } else if max == r {
            60.0 * ((g - b) / delta).rem_euclid(6.0)
        } else if max == g {
            60.0 * ((b - r) / delta + 2.0)
        } else {
            60.0 * ((r - g) / delta + 4.0)
        };
        let sat = if max == 0.0 { 0.0 } else { delta / max };
        let hb = ((hue / 360.0 * bins.0 as f64) as usize).min(bins.0 - 1);
        let sb = ((sat * bins.1 as f64) as usize).min(bins.1 - 1);
        h[hb * bins.1 + sb] += 1.0;
    }
    let n = colors.len() as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

pub fn histogram_intersection(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum()
}

fn sample_inliers(plane: &Plane, n: usize, seed: u64) -> Vec<Vec3> {
    if plane.inliers.len() <= n {
        return plane.inliers.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, plane.inliers.len(), n)
        .into_iter()
        .map(|i| plane.inliers[i])
        .collect()
}

/// Normal and offset of `p` after `motion`, without moving its inliers.
fn moved_params(motion: &RigidMotion, p: &Plane) -> (UnitVec3, f64) {
    let n = motion.transform_unit(&p.normal);
    (n, p.offset + n.dot(motion.translation()))
}

fn project_2d(points: impl Iterator<Item = Vec3>, u: &Vec3, v: &Vec3) -> Vec<Vec2> {
    points.map(|x| Vec2::new(x.dot(u), x.dot(v))).collect()
}

/// Measures one implied match under `motion` and returns the first failed
/// check, if any.
fn check_match(
    a_idx: usize,
    b_idx: usize,
    a: &View,
    b: &View,
    motion: &RigidMotion,
    yaw_observed: bool,
    vcfg: &ValidationConfig,
) -> (MatchCheck, Option<Rejection>) {
    let (pa, pb) = (&a.planes[a_idx], &b.planes[b_idx]);
    let (mut na, mut da) = moved_params(motion, pa);
    if na.dot(&pb.normal) < 0.0 {
        na = -na;
        da = -da;
    }
    let normal_angle = angle_between(&na, &pb.normal);
    let offset_diff = (da - pb.offset).abs();

    let sa: Vec<Vec3> = sample_inliers(pa, vcfg.inlier_sample, derive_seed(vcfg.sample_seed, 0, a_idx as u64))
        .iter()
        .map(|x| motion.transform_point(x))
        .collect();
    let sb = sample_inliers(pb, vcfg.inlier_sample, derive_seed(vcfg.sample_seed, 1, b_idx as u64));
    let mean = |pts: &[Vec3], n: &UnitVec3, d: f64| pts.iter().map(|x| (n.dot(x) - d).abs()).sum::<f64>() / pts.len() as f64;
    let a_to_b = mean(&sa, &pb.normal, pb.offset);
    let b_to_a = mean(&sb, &na, da);
    let excess = (a_to_b - mean(&sa, &na, da)).max(b_to_a - mean(&sb, &pb.normal, pb.offset));

    let hull_overlap = yaw_observed.then(|| {
        let (u, v) = pb.basis();
        let ha = convex_hull(&project_2d(pa.inliers.iter().map(|x| motion.transform_point(x)), &u, &v));
        let hb = convex_hull(&project_2d(pb.inliers.iter().copied(), &u, &v));
        overlap_ratio(&ha, &hb)
    });
    let hist_similarity = match (&pa.colors, &pb.colors) {
        (Some(ca), Some(cb)) => Some(histogram_intersection(
            &hs_histogram(ca, vcfg.hist_bins),
            &hs_histogram(cb, vcfg.hist_bins),
        )),
        _ => None,
    };

    let check = MatchCheck {
        a: a_idx,
        b: b_idx,
        normal_angle,
        offset_diff,
        mean_distance: 0.5 * (a_to_b + b_to_a),
        excess_distance: excess,
        hull_overlap,
        hist_similarity,
    };
    let rejection = if normal_angle > vcfg.normal_angle_max {
        Some(Rejection::NormalAngle)
    } else if offset_diff > vcfg.offset_diff_max {
        Some(Rejection::OffsetDifference)
    } else if excess > vcfg.inlier_dist_max {
        Some(Rejection::InlierDistance)
    } else if hull_overlap.is_some_and(|o| o < vcfg.hull_overlap_min) {
        Some(Rejection::HullOverlap)
    } else if hist_similarity.is_some_and(|s| s < vcfg.hist_similarity_min) {
        Some(Rejection::ColorHistogram)
    } else {
        None
    };
    (check, rejection)
}

/// Motion implied by a few plane matches. Components the matches leave open
/// are filled by aligning the matched centroids when the yaw is known, and
/// set to zero otherwise. Returns the motion and whether the yaw is observed.
fn implied_motion(matches: &[(usize, usize)], class: PlaneClass, a: &View, b: &View, ccfg: &ClassConfig) -> Result<(RigidMotion, bool)> {
    let pairs: Vec<MatchedPair> = matches
        .iter()
        .map(|&(i, j)| MatchedPair { a: &a.planes[i], b: &b.planes[j], class })
        .collect();
    let (up_a, up_b) = refined_ups(&pairs, &a.up, &b.up);
    let c = solve_components(&pairs, up_a, up_b, None, ccfg)?;
    let yaw_observed = class == PlaneClass::Vertical;
    let fill = if yaw_observed {
        let sum: Vec3 = pairs
            .iter()
            .map(|m| m.b.centroid - c.rotation * m.a.centroid)
            .sum();
        c.frame.to_world(&(sum / pairs.len() as f64))
    } else {
        Vec3::zeros()
    };
    let (t_world, _) = c.translation_with(&fill);
    Ok((RigidMotion::from_rotation(c.rotation, c.frame.from_world(&t_world)), yaw_observed))
}

fn validate_matches(matches: &[(usize, usize)], class: PlaneClass, a: &View, b: &View, ccfg: &ClassConfig, vcfg: &ValidationConfig) -> Validation {
    let Ok((motion, yaw_observed)) = implied_motion(matches, class, a, b, ccfg) else {
        return Validation { motion: None, rejection: Some(Rejection::MotionUndefined), checks: vec![] };
    };
    let (angle, dist) = motion.magnitude();
    if angle > vcfg.motion_rot_max || dist > vcfg.motion_trans_max {
        return Validation { motion: Some(motion), rejection: Some(Rejection::MagnitudeExceeded), checks: vec![] };
    }
    let mut checks = Vec::with_capacity(matches.len());
    let mut rejection = None;
    for &(i, j) in matches {
        let (check, r) = check_match(i, j, a, b, &motion, yaw_observed, vcfg);
        checks.push(check);
        rejection = rejection.or(r);
    }
    Validation { motion: Some(motion), rejection, checks }
}

fn pair_class(category: PairClass) -> PlaneClass {
    if category == PairClass::Horizontal {
        PlaneClass::Horizontal
    } else {
        PlaneClass::Vertical
    }
}

/// Computes the candidate's motion (rotation and horizontal translation for
/// vertical pairs, Up alignment and vertical translation for horizontal
/// pairs) and checks every implied match against it.
pub fn validate_candidate(cand: &PairCandidate, a: &View, b: &View, ccfg: &ClassConfig, vcfg: &ValidationConfig) -> Validation {
    validate_matches(&cand.implied_matches, pair_class(cand.pair_a.category), a, b, ccfg, vcfg)
}

/// Greedy one-to-one selection: matches are taken in increasing distance
/// (then index) order, skipping any that reuse an already matched plane.
pub fn resolve_conflicts(candidates: &[PlaneMatch]) -> MatchSet {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|x, y| x.distance.total_cmp(&y.distance).then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b)));
    let (mut used_a, mut used_b) = (HashSet::new(), HashSet::new());
    let mut matches = Vec::new();
    for m in sorted {
        if used_a.contains(&m.a) || used_b.contains(&m.b) {
            continue;
        }
        used_a.insert(m.a);
        used_b.insert(m.b);
        matches.push(m);
    }
    matches.sort_by_key(|m| (m.a, m.b));
    MatchSet { matches }
}

fn accepted_matches(validation: &Validation, class: PlaneClass) -> Vec<PlaneMatch> {
    if !validation.accepted() {
        return Vec::new();
    }
    validation
        .checks
        .iter()
        .map(|c| PlaneMatch { a: c.a, b: c.b, class, distance: c.mean_distance })
        .collect()
}

fn single_candidates(a: &View, b: &View, class: PlaneClass) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, ca) in a.classes.iter().enumerate() {
        for (j, cb) in b.classes.iter().enumerate() {
            if *ca == class && *cb == class {
                out.push((i, j));
            }
        }
    }
    out
}

/// Validated single-plane matches of one class, before conflict resolution.
fn single_plane_matches(a: &View, b: &View, class: PlaneClass, ccfg: &ClassConfig, vcfg: &ValidationConfig, exec: Execution) -> Vec<PlaneMatch> {
    let candidates = single_candidates(a, b, class);
    map_slice(&candidates, exec, |&m| accepted_matches(&validate_matches(&[m], class, a, b, ccfg, vcfg), class))
        .into_iter()
        .flatten()
        .collect()
}

/// Matches single planes one by one (rotation from the plane and Up,
/// translation along its normal) and resolves conflicts.
pub fn match_single_planes(a: &View, b: &View, ccfg: &ClassConfig, vcfg: &ValidationConfig) -> MatchSet {
    let mut all = single_plane_matches(a, b, PlaneClass::Vertical, ccfg, vcfg, Execution::default());
    all.extend(single_plane_matches(a, b, PlaneClass::Horizontal, ccfg, vcfg, Execution::default()));
    resolve_conflicts(&all)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "missing", rename_all = "snake_case")]
pub enum NoMotion {
    NoPlanes,
    NoMatches,
    Underconstrained(Vec<Dof>),
}

impl std::fmt::Display for NoMotion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoMotion::NoPlanes => write!(f, "no planes"),
            NoMotion::NoMatches => write!(f, "no matches"),
            NoMotion::Underconstrained(d) => write!(f, "insufficient constraints (missing {d:?})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchStats {
    pub pair_candidates: usize,
    pub accepted_candidates: usize,
    pub single_plane_classes: usize,
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub matches: MatchSet,
    pub outcome: std::result::Result<MotionEstimate, NoMotion>,
    pub stats: MatchStats,
}

pub fn match_views(
    planes_a: &[Plane],
    planes_b: &[Plane],
    up_a: &UnitVec3,
    up_b: &UnitVec3,
    ccfg: &ClassConfig,
    vcfg: &ValidationConfig,
) -> Registration {
    match_views_with(planes_a, planes_b, up_a, up_b, ccfg, vcfg, Execution::default())
}

/// Full matching pipeline: classify, pair, gate, validate, resolve, fall back
/// to single planes per class, then estimate the motion from every match.
pub fn match_views_with(
    planes_a: &[Plane],
    planes_b: &[Plane],
    up_a: &UnitVec3,
    up_b: &UnitVec3,
    ccfg: &ClassConfig,
    vcfg: &ValidationConfig,
    exec: Execution,
) -> Registration {
    let mut stats = MatchStats::default();
    if planes_a.is_empty() || planes_b.is_empty() {
        return Registration { matches: MatchSet::default(), outcome: Err(NoMotion::NoPlanes), stats };
    }
    let classes_a = classify_planes(planes_a, up_a, ccfg);
    let classes_b = classify_planes(planes_b, up_b, ccfg);
    let a = View { planes: planes_a, classes: &classes_a, up: *up_a };
    let b = View { planes: planes_b, classes: &classes_b, up: *up_b };

    let pairs_a = generate_pairs(planes_a, &classes_a, up_a, ccfg);
    let pairs_b = generate_pairs(planes_b, &classes_b, up_b, ccfg);
    let candidates = gate_candidates(&pairs_a, &pairs_b, &b, vcfg);
    stats.pair_candidates = candidates.len();

    let validations = map_slice(&candidates, exec, |c| validate_candidate(c, &a, &b, ccfg, vcfg));
    let mut pool = Vec::new();
    let mut classes_with_pairs = HashSet::new();
    for (cand, v) in candidates.iter().zip(&validations) {
        if v.accepted() {
            stats.accepted_candidates += 1;
            let class = pair_class(cand.pair_a.category);
            classes_with_pairs.insert(class);
            pool.extend(accepted_matches(v, class));
        }
    }

    for class in [PlaneClass::Vertical, PlaneClass::Horizontal] {
        let count = |cs: &[PlaneClass]| cs.iter().filter(|c| **c == class).count();
        let few = count(&classes_a) < 2 || count(&classes_b) < 2;
        if few || !classes_with_pairs.contains(&class) {
            stats.single_plane_classes += 1;
            pool.extend(single_plane_matches(&a, &b, class, ccfg, vcfg, exec));
        }
    }

    let matches = resolve_conflicts(&pool);
    if matches.is_empty() {
        return Registration { matches, outcome: Err(NoMotion::NoMatches), stats };
    }
    let outcome = match estimate_motion(&matches.matched_planes(planes_a, planes_b), up_a, up_b, None, ccfg) {
        Ok(m) => Ok(m),
        Err(Error::Underconstrained(d)) => Err(NoMotion::Underconstrained(d)),
        // A vertical plane too close to the refined Up cannot fix the yaw.
        Err(_) => Err(NoMotion::Underconstrained(vec![Dof::Rotation])),
    };
    Registration { matches, outcome, stats }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::transform_plane;
    use crate::synth::{noisy_plane, RectPatch};
    use crate::toy_bench::make_toy_scene;
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sample(patches: &[RectPatch], seed: u64) -> Vec<Plane> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        patches.iter().map(|p| noisy_plane(p, 400, 0.0, None, &mut rng).unwrap()).collect()
    }

    fn wall(center: Vec3, yaw: f64, width: f64) -> RectPatch {
        let u = Vec3::new(yaw.cos(), 0.0, -yaw.sin()) * width;
        RectPatch::new(center, u, Vec3::y() * 2.5)
    }

    fn floor(y: f64) -> RectPatch {
        RectPatch::new(Vec3::new(0.0, y, 0.0), Vec3::x() * 4.0, Vec3::z() * 4.0)
    }

    fn toy(seed: u64) -> Vec<Plane> {
        sample(&make_toy_scene().patches, seed)
    }

    fn moved(planes: &[Plane], m: &RigidMotion) -> Vec<Plane> {
        planes.iter().map(|p| transform_plane(m, p)).collect()
    }

    fn up() -> UnitVec3 {
        Vec3::y_axis()
    }

    fn pairs_of(planes: &[Plane]) -> (Vec<PlaneClass>, Vec<PlanePair>) {
        pairs_with(planes, &ClassConfig::default())
    }

    fn pairs_with(planes: &[Plane], cfg: &ClassConfig) -> (Vec<PlaneClass>, Vec<PlanePair>) {
        let classes = classify_planes(planes, &up(), cfg);
        let pairs = generate_pairs(planes, &classes, &up(), cfg);
        (classes, pairs)
    }

    /// Three vertical directions cannot be pairwise within 10° of
    /// orthogonal, so the three-wall case uses walls 60° apart and a 40°
    /// relative threshold.
    #[test]
    fn pair_generation_counts() {
        let three = sample(
            &[
                wall(Vec3::new(0.0, 1.0, -2.0), 0.0, 3.0),
                wall(Vec3::new(-2.0, 1.0, 0.0), PI / 3.0, 3.0),
                wall(Vec3::new(2.0, 1.0, -1.0), -PI / 3.0, 3.0),
            ],
            1,
        );
        let (_, p) = pairs_with(&three, &ClassConfig { alpha_thresh_rel: 40f64.to_radians(), ..Default::default() });
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|x| x.category == PairClass::VerticalNonParallel && x.first < x.second));

        let mixed = sample(&[wall(Vec3::new(0.0, 1.0, -2.0), 0.0, 3.0), floor(-1.0)], 2);
        assert!(pairs_of(&mixed).1.is_empty());

        let four = sample(
            &[
                floor(-1.2),
                floor(1.3),
                wall(Vec3::new(0.0, 0.0, -2.0), 0.0, 3.0),
                wall(Vec3::new(0.0, 0.0, 2.0), 0.0, 3.0),
            ],
            3,
        );
        let (_, p) = pairs_of(&four);
        let mut cats: Vec<PairClass> = p.iter().map(|x| x.category).collect();
        cats.sort();
        assert_eq!(cats, vec![PairClass::Horizontal, PairClass::VerticalParallel]);
    }

    fn single_pair(planes: &[Plane]) -> (Vec<PlaneClass>, PlanePair) {
        let (c, p) = pairs_with(planes, &ClassConfig { alpha_thresh_rel: 15f64.to_radians(), ..Default::default() });
        assert_eq!(p.len(), 1);
        (c, p[0])
    }

    #[test]
    fn penalty_examples() {
        let cfg = ValidationConfig::default();
        let a = toy(4);
        let (ca, pa) = pairs_of(&a);
        let va = View { planes: &a, classes: &ca, up: up() };
        for p in &pa {
            assert_eq!(pair_penalty(p, p, &va).penalty, 0.0);
        }

        let at = |deg: f64| {
            sample(
                &[
                    wall(Vec3::new(0.0, 1.0, -2.0), 0.0, 3.0),
                    wall(Vec3::new(-2.0, 1.0, 0.0), deg.to_radians(), 3.0),
                ],
                5,
            )
        };
        let (a80, b90) = (at(80.0), at(90.0));
        let (_, p80) = single_pair(&a80);
        let (c90, p90) = single_pair(&b90);
        let vb = View { planes: &b90, classes: &c90, up: up() };
        let c = pair_penalty(&p80, &p90, &vb);
        assert!((c.penalty - 10f64.to_radians()).abs() < 1e-12);
        assert!((c.penalty - 0.1745).abs() < 1e-4);

        let corridor = |far: f64| {
            sample(
                &[
                    wall(Vec3::new(-1.0, 1.0, 0.0), PI / 2.0, 3.0),
                    wall(Vec3::new(far, 1.0, 0.0), PI / 2.0, 3.0),
                ],
                6,
            )
        };
        let (a2, b2) = (corridor(1.0), corridor(1.08));
        let (_, p2) = single_pair(&a2);
        let (cb, pb) = single_pair(&b2);
        assert_eq!(p2.category, PairClass::VerticalParallel);
        let vb = View { planes: &b2, classes: &cb, up: up() };
        let c = pair_penalty(&p2, &pb, &vb);
        assert!((c.penalty - 0.08).abs() < 1e-12);
        assert!(!gate_candidates(&[p2], &[pb], &vb, &cfg).is_empty());
        let b3 = corridor(1.2);
        let (cb3, pb3) = single_pair(&b3);
        let vb3 = View { planes: &b3, classes: &cb3, up: up() };
        assert!(gate_candidates(&[p2], &[pb3], &vb3, &cfg).is_empty());
    }

    fn view<'a>(planes: &'a [Plane], classes: &'a [PlaneClass]) -> View<'a> {
        View { planes, classes, up: up() }
    }

    fn candidate(planes: &[Plane], m: [(usize, usize); 2], a: &View) -> PairCandidate {
        let (_, pairs) = pairs_of(planes);
        let find = |i: usize, j: usize| *pairs.iter().find(|p| p.first == i.min(j) && p.second == i.max(j)).unwrap();
        let pa = find(m[0].0, m[1].0);
        let pb = find(m[0].1, m[1].1);
        let _ = a;
        PairCandidate { pair_a: pa, pair_b: pb, penalty: 0.0, implied_matches: m }
    }

    #[test]
    fn identity_candidate_is_accepted() {
        let a = toy(7);
        let (ca, _) = pairs_of(&a);
        let va = view(&a, &ca);
        let cand = candidate(&a, [(0, 0), (1, 1)], &va);
        let v = validate_candidate(&cand, &va, &va, &ClassConfig::default(), &ValidationConfig::default());
        assert!(v.accepted(), "{v:?}");
        let (r, t) = v.motion.unwrap().magnitude();
        assert!(r < 1e-12 && t < 1e-12);
    }

    #[test]
    fn large_translation_is_rejected() {
        let a = toy(8);
        let m = RigidMotion::from_axis_angle(&up(), 0.0, Vec3::new(8.0, 0.0, 0.0));
        let b = moved(&a, &m);
        let (ca, _) = pairs_of(&a);
        let (cb, _) = pairs_of(&b);
        let cand = candidate(&a, [(0, 0), (1, 1)], &view(&a, &ca));
        let v = validate_candidate(&cand, &view(&a, &ca), &view(&b, &cb), &ClassConfig::default(), &ValidationConfig::default());
        assert_eq!(v.rejection, Some(Rejection::MagnitudeExceeded));
    }

    /// Floor, two orthogonal walls and a third wall facing the same way as
    /// the first but 8° off, so pairing the first wall with the third passes
    /// the angle gate.
    fn decoy_scene() -> Vec<Plane> {
        sample(
            &[
                floor(-1.3),
                wall(Vec3::new(-2.0, 0.0, 0.0), PI / 2.0, 4.0),
                wall(Vec3::new(0.0, 0.0, -2.0), 0.0, 4.0),
                wall(Vec3::new(-2.4, 0.0, 3.0), PI / 2.0 + 8f64.to_radians(), 4.0),
            ],
            9,
        )
    }

    #[test]
    fn true_candidate_beats_decoy() {
        let truth = RigidMotion::from_axis_angle(&up(), 30f64.to_radians(), Vec3::new(0.4, 0.0, 0.2));
        let a = decoy_scene();
        let b = moved(&a, &truth);
        let (ca, pa) = pairs_of(&a);
        let (cb, pb) = pairs_of(&b);
        let (va, vb) = (view(&a, &ca), view(&b, &cb));
        let (ccfg, vcfg) = (ClassConfig::default(), ValidationConfig::default());
        let cands = gate_candidates(&pa, &pb, &vb, &vcfg);

        let pick = |m: [(usize, usize); 2]| *cands.iter().find(|c| c.implied_matches == m).expect("candidate gated");
        let good = validate_candidate(&pick([(1, 1), (2, 2)]), &va, &vb, &ccfg, &vcfg);
        assert!(good.accepted(), "{good:?}");
        let err = good.motion.unwrap().compose(&truth.inverse());
        let (r, t) = err.magnitude();
        assert!(r < 1e-6 && t < 1e-6, "{r} {t}");

        let decoy_cand = pick([(1, 3), (2, 2)]);
        assert!(decoy_cand.penalty > 7f64.to_radians() && decoy_cand.penalty < 10f64.to_radians());
        let decoy = validate_candidate(&decoy_cand, &va, &vb, &ccfg, &vcfg);
        assert_eq!(decoy.rejection, Some(Rejection::InlierDistance), "{decoy:?}");
        assert!(decoy.checks.iter().all(|c| c.normal_angle <= vcfg.normal_angle_max));
    }

    fn pm(a: usize, b: usize, distance: f64) -> PlaneMatch {
        PlaneMatch { a, b, class: PlaneClass::Vertical, distance }
    }

    #[test]
    fn conflicts_keep_closest() {
        let m = resolve_conflicts(&[pm(2, 3, 0.04), pm(2, 1, 0.01), pm(0, 0, 0.02)]);
        assert_eq!(m.pairs(), vec![(0, 0), (2, 1)]);
        let m = resolve_conflicts(&[pm(0, 0, 0.01), pm(1, 1, 0.03)]);
        assert_eq!(m.pairs(), vec![(0, 0), (1, 1)]);
    }

    /// Independent greedy: repeatedly take the global minimum and delete
    /// everything it conflicts with.
    fn greedy_oracle(cands: &[PlaneMatch]) -> Vec<(usize, usize)> {
        let mut left = cands.to_vec();
        let mut out = Vec::new();
        while !left.is_empty() {
            let best = left
                .iter()
                .min_by(|x, y| (x.distance, x.a, x.b).partial_cmp(&(y.distance, y.a, y.b)).unwrap())
                .copied()
                .unwrap();
            out.push((best.a, best.b));
            left.retain(|m| m.a != best.a && m.b != best.b);
        }
        out.sort();
        out
    }

    /// Among all maximal one-to-one subsets, the one whose ascending distance
    /// list is lexicographically smallest.
    fn brute_force(cands: &[PlaneMatch]) -> Vec<(usize, usize)> {
        let n = cands.len();
        type Scored = (Vec<f64>, Vec<(usize, usize)>);
        let mut best: Option<Scored> = None;
        for mask in 0u32..1 << n {
            let chosen: Vec<&PlaneMatch> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| &cands[i]).collect();
            let one_to_one = chosen.iter().enumerate().all(|(i, x)| {
                chosen[i + 1..].iter().all(|y| x.a != y.a && x.b != y.b)
            });
            let maximal = cands.iter().all(|c| chosen.iter().any(|x| x.a == c.a || x.b == c.b));
            if !(one_to_one && maximal) {
                continue;
            }
            let mut d: Vec<f64> = chosen.iter().map(|x| x.distance).collect();
            d.sort_by(f64::total_cmp);
            let mut pairs: Vec<(usize, usize)> = chosen.iter().map(|x| (x.a, x.b)).collect();
            pairs.sort();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, pairs));
            }
        }
        best.map(|b| b.1).unwrap_or_default()
    }

    #[test]
    fn chain_of_conflicts() {
        let chain = [pm(0, 0, 0.03), pm(1, 0, 0.02), pm(1, 1, 0.01)];
        let m = resolve_conflicts(&chain);
        assert_eq!(m.pairs(), vec![(0, 0), (1, 1)]);
        assert_eq!(m.pairs(), brute_force(&chain));
    }

    fn arb_matches() -> impl Strategy<Value = Vec<PlaneMatch>> {
        prop::collection::btree_map((0usize..5, 0usize..5), 1u32..1000, 0..10).prop_map(|m| {
            m.into_iter().map(|((a, b), d)| pm(a, b, d as f64 * 1e-3 + a as f64 * 1e-7 + b as f64 * 1e-9)).collect()
        })
    }

    proptest! {
        #[test]
        fn resolve_is_one_to_one_and_greedy(cands in arb_matches()) {
            let m = resolve_conflicts(&cands);
            let pairs = m.pairs();
            let mut a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let mut b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            a.dedup();
            b.sort();
            b.dedup();
            prop_assert_eq!(a.len(), pairs.len());
            prop_assert_eq!(b.len(), pairs.len());
            prop_assert_eq!(&pairs, &greedy_oracle(&cands));
            prop_assert_eq!(&pairs, &brute_force(&cands));
        }
    }

    #[test]
    fn single_plane_cases() {
        let (ccfg, vcfg) = (ClassConfig::default(), ValidationConfig::default());
        let w = sample(&[wall(Vec3::new(0.0, 1.0, -2.0), 0.0, 3.0)], 10);
        let cw = classify_planes(&w, &up(), &ccfg);
        assert_eq!(match_single_planes(&view(&w, &cw), &view(&w, &cw), &ccfg, &vcfg).pairs(), vec![(0, 0)]);

        let f = sample(&[floor(-1.0)], 11);
        let cf = classify_planes(&f, &up(), &ccfg);
        assert!(match_single_planes(&view(&f, &cf), &view(&w, &cw), &ccfg, &vcfg).is_empty());

        let corridor = sample(
            &[
                wall(Vec3::new(-1.5, 1.0, 0.0), PI / 2.0, 4.0),
                wall(Vec3::new(1.5, 1.0, 0.0), PI / 2.0, 4.0),
            ],
            12,
        );
        let shifted = moved(&corridor, &RigidMotion::from_axis_angle(&up(), 0.0, Vec3::new(0.0, 0.0, 0.3)));
        let cc = classify_planes(&corridor, &up(), &ccfg);
        let m = match_single_planes(&view(&corridor, &cc), &view(&shifted, &cc), &ccfg, &vcfg);
        assert!(!m.is_empty());
        let mut a: Vec<usize> = m.matches.iter().map(|x| x.a).collect();
        let mut b: Vec<usize> = m.matches.iter().map(|x| x.b).collect();
        a.dedup();
        b.sort();
        b.dedup();
        assert_eq!((a.len(), b.len()), (m.len(), m.len()));
    }

    #[test]
    fn identical_views_give_identity() {
        let a = toy(13);
        let r = match_views(&a, &a, &up(), &up(), &ClassConfig::default(), &ValidationConfig::default());
        assert_eq!(r.matches.pairs(), vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        let (rot, t) = r.outcome.unwrap().motion.magnitude();
        assert!(rot < 1e-9 && t < 1e-9);
    }

    #[test]
    fn disjoint_categories_give_no_matches() {
        let h = sample(&[floor(-1.2), floor(1.3)], 14);
        let v = sample(&[wall(Vec3::new(0.0, 1.0, -2.0), 0.0, 3.0), wall(Vec3::new(-2.0, 1.0, 0.0), PI / 2.0, 3.0)], 15);
        let r = match_views(&h, &v, &up(), &up(), &ClassConfig::default(), &ValidationConfig::default());
        assert_eq!(r.outcome.unwrap_err(), NoMotion::NoMatches);
        let r = match_views(&[], &v, &up(), &up(), &ClassConfig::default(), &ValidationConfig::default());
        assert_eq!(r.outcome.unwrap_err(), NoMotion::NoPlanes);
    }

    #[test]
    fn toy_random_motions_are_exact() {
        use crate::toy_bench::random_motion;
        let vcfg = ValidationConfig { motion_rot_max: PI, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for k in 0..50 {
            let truth = random_motion(&mut rng);
            let a = toy(100 + k);
            let b = moved(&a, &truth);
            let r = match_views(&a, &b, &up(), &up(), &ClassConfig::default(), &vcfg);
            let (rot, t) = r.outcome.unwrap().motion.compose(&truth.inverse()).magnitude();
            assert!(rot < 1e-9 && t < 1e-9, "{rot} {t}");
        }
    }

    fn two_walls(yaw1: f64, yaw2: f64, c1: (f64, f64), c2: (f64, f64)) -> Vec<Plane> {
        sample(
            &[
                wall(Vec3::new(c1.0, 1.0, c1.1), yaw1, 3.0),
                wall(Vec3::new(c2.0, 1.0, c2.1), yaw2, 3.0),
            ],
            17,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn view_motion_within_gates_is_recovered(yaw in -1.5f64..1.5, tx in -1.0f64..1.0, ty in -1.0f64..1.0, tz in -1.0f64..1.0) {
            let truth = RigidMotion::from_axis_angle(&up(), yaw, Vec3::new(tx, ty, tz));
            let a = toy(18);
            let r = match_views(&a, &moved(&a, &truth), &up(), &up(), &ClassConfig::default(), &ValidationConfig::default());
            let (rot, t) = r.outcome.unwrap().motion.compose(&truth.inverse()).magnitude();
            prop_assert!(rot < 1e-9 && t < 1e-9);
        }

        #[test]
        fn penalty_is_view_agnostic(
            y1 in -PI..PI, dy in 1.4f64..1.74, y2 in -PI..PI, dy2 in 1.4f64..1.74,
            c in prop::array::uniform4(-3.0f64..3.0),
            yaw in -PI..PI, t in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let a = two_walls(y1, y1 + dy, (c[0], c[1]), (c[2], c[3]));
            let b = two_walls(y2, y2 + dy2, (c[1], c[0]), (c[3], c[2]));
            let (ca, pa) = single_pair(&a);
            let (cb, pb) = single_pair(&b);
            prop_assume!(pa.category == pb.category);
            let fwd = pair_penalty(&pa, &pb, &view(&b, &cb)).penalty;
            let back = pair_penalty(&pb, &pa, &view(&a, &ca)).penalty;
            prop_assert!((fwd - back).abs() < 1e-12);

            let m = RigidMotion::from_axis_angle(&up(), yaw, Vec3::from(t));
            let bm = moved(&b, &m);
            let (cbm, pbm) = single_pair(&bm);
            prop_assert_eq!(pbm.category, pb.category);
            let moved_penalty = pair_penalty(&pa, &pbm, &view(&bm, &cbm)).penalty;
            prop_assert!((fwd - moved_penalty).abs() < 1e-9);
        }

        #[test]
        fn parallel_penalty_is_view_agnostic(
            y in -PI..PI, gap_a in 0.5f64..4.0, gap_b in 0.5f64..4.0,
            yaw in -PI..PI, t in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let corridor = |g: f64| two_walls(y, y, (0.0, 0.0), (g * y.sin(), g * y.cos()));
            let (a, b) = (corridor(gap_a), corridor(gap_b));
            let (ca, pa) = single_pair(&a);
            let (cb, pb) = single_pair(&b);
            let fwd = pair_penalty(&pa, &pb, &view(&b, &cb)).penalty;
            prop_assert!((fwd - pair_penalty(&pb, &pa, &view(&a, &ca)).penalty).abs() < 1e-12);
            prop_assert!((fwd - (gap_a - gap_b).abs()).abs() < 1e-9);
            let bm = moved(&b, &RigidMotion::from_axis_angle(&up(), yaw, Vec3::from(t)));
            let (cbm, pbm) = single_pair(&bm);
            prop_assert!((fwd - pair_penalty(&pa, &pbm, &view(&bm, &cbm)).penalty).abs() < 1e-9);
        }
    }
}
