//! Plane tracking under a prior motion: transport view-a planes into view b
//! and refit them on the supporting view-b points.

use serde::{Deserialize, Serialize};

use crate::classify::{classify_plane, ClassConfig};
use crate::error::{Error, Result};
use crate::geom::{fit_plane_colored, transform_plane, Plane, Rgb, RigidMotion, UnitVec3, Vec2, Vec3};
use crate::hull::{convex_hull, distance_to_convex};
use crate::motion::{estimate_motion, MatchedPair, MotionEstimate};
use crate::par::{map_slice, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    /// Support band half-width and hull dilation (meters).
    pub support_dist: f64,
    /// Required support as a fraction of the original inlier count.
    pub min_support_ratio: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self { support_dist: 0.05, min_support_ratio: 0.3 }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.support_dist > 0.0 && self.support_dist.is_finite()) {
            return Err(Error::InvalidConfig("support_dist must be positive".into()));
        }
        if !(self.min_support_ratio > 0.0 && self.min_support_ratio <= 1.0) {
            return Err(Error::InvalidConfig("min_support_ratio must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedPlane {
    /// Index of the plane in view a.
    pub index: usize,
    /// View-a plane moved by the prior.
    pub transported: Plane,
    /// Refit on the supporting view-b points.
    pub refined: Plane,
    /// Support count over the original inlier count.
    pub support_ratio: f64,
}

fn project(p: &Vec3, u: &UnitVec3, v: &UnitVec3) -> Vec2 {
    Vec2::new(u.dot(p), v.dot(p))
}

/// Indices of the view-b points within the band around `plane` and within
/// its inlier hull dilated by `dist`.
pub fn support_indices(plane: &Plane, cloud: &[Vec3], dist: f64) -> Vec<usize> {
    let (u, v) = plane.basis();
    let hull = convex_hull(&plane.inliers.iter().map(|p| project(p, &u, &v)).collect::<Vec<_>>());
    cloud
        .iter()
        .enumerate()
        .filter(|(_, p)| plane.distance(p) <= dist && distance_to_convex(&hull, &project(p, &u, &v)) <= dist)
        .map(|(i, _)| i)
        .collect()
}

fn track_one(
    index: usize,
    plane: &Plane,
    cloud: &[Vec3],
    colors: Option<&[Rgb]>,
    prior: &RigidMotion,
    cfg: &TrackConfig,
) -> Option<TrackedPlane> {
    let transported = transform_plane(prior, plane);
    let support = support_indices(&transported, cloud, cfg.support_dist);
    let ratio = support.len() as f64 / plane.inlier_count().max(1) as f64;
    if ratio < cfg.min_support_ratio {
        return None;
    }
    let points = support.iter().map(|&i| cloud[i]).collect();
    let cols = colors.map(|c| support.iter().map(|&i| c[i]).collect());
    let refined = fit_plane_colored(points, cols).ok()?;
    Some(TrackedPlane { index, transported, refined, support_ratio: ratio })
}

pub fn track_planes(
    planes_a: &[Plane],
    cloud_b: &[Vec3],
    colors_b: Option<&[Rgb]>,
    prior: &RigidMotion,
    cfg: &TrackConfig,
) -> Result<Vec<TrackedPlane>> {
    track_planes_with(planes_a, cloud_b, colors_b, prior, cfg, Execution::default())
}

/// Tracks each view-a plane independently; the result keeps view-a order.
pub fn track_planes_with(
    planes_a: &[Plane],
    cloud_b: &[Vec3],
    colors_b: Option<&[Rgb]>,
    prior: &RigidMotion,
    cfg: &TrackConfig,
    exec: Execution,
) -> Result<Vec<TrackedPlane>> {
    cfg.validate()?;
    if colors_b.is_some_and(|c| c.len() != cloud_b.len()) {
        return Err(Error::DegenerateInput("color count does not match point count".into()));
    }
    let indexed: Vec<(usize, &Plane)> = planes_a.iter().enumerate().collect();
    let tracked = map_slice(&indexed, exec, |&(i, p)| track_one(i, p, cloud_b, colors_b, prior, cfg));
    Ok(tracked.into_iter().flatten().collect())
}

/// Motion from tracked planes, with components the planes leave open taken
/// from the prior.
pub fn refine_motion(
    planes_a: &[Plane],
    tracked: &[TrackedPlane],
    up_a: &UnitVec3,
    up_b: &UnitVec3,
    prior: &RigidMotion,
    ccfg: &ClassConfig,
) -> Result<MotionEstimate> {
    let matches: Vec<MatchedPair> = tracked
        .iter()
        .map(|t| {
            let a = &planes_a[t.index];
            MatchedPair { a, b: &t.refined, class: classify_plane(a, up_a, ccfg).0 }
        })
        .collect();
    estimate_motion(&matches, up_a, up_b, Some(prior), ccfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{angle_between, fit_plane};
    use crate::synth::{noisy_plane, random_unit, RectPatch};
    use crate::toy_bench::make_toy_scene;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sampled_scene(seed: u64, noise: f64) -> Vec<Plane> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        make_toy_scene()
            .patches
            .iter()
            .map(|p| noisy_plane(p, 400, noise, None, &mut rng).unwrap())
            .collect()
    }

    /// Patches that do not touch, so no support leaks between planes.
    fn separated_planes(seed: u64) -> Vec<Plane> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
        [
            RectPatch::new(Vec3::new(-2.0, 1.25, 0.0), z * 3.0, y * 1.5),
            RectPatch::new(Vec3::new(0.0, 1.25, -2.0), x * 3.0, y * 1.5),
            RectPatch::new(Vec3::new(0.0, -0.2, 0.0), x * 3.0, z * 3.0),
        ]
        .iter()
        .map(|p| noisy_plane(p, 400, 0.0, None, &mut rng).unwrap())
        .collect()
    }

    fn cloud(planes: &[Plane]) -> Vec<Vec3> {
        planes.iter().flat_map(|p| p.inliers.iter().copied()).collect()
    }

    fn truth() -> RigidMotion {
        RigidMotion::from_axis_angle(&Vec3::y_axis(), 0.4, Vec3::new(0.3, -0.1, 0.2))
    }

    #[test]
    fn exact_prior_tracks_everything() {
        let a = separated_planes(1);
        let m = truth();
        let b: Vec<Vec3> = cloud(&a).iter().map(|p| m.transform_point(p)).collect();
        let tracked = track_planes(&a, &b, None, &m, &TrackConfig::default()).unwrap();
        assert_eq!(tracked.len(), 3);
        for t in &tracked {
            let expected = transform_plane(&m, &a[t.index]);
            let (n, d) = t.refined.oriented_along(&expected.normal);
            assert!(angle_between(&n, &expected.normal) < 1e-9);
            assert!((d - expected.offset).abs() < 1e-9);
            assert!(t.support_ratio >= 0.99);
        }
    }

    #[test]
    fn distant_prior_tracks_nothing() {
        let a = separated_planes(2);
        let m = truth();
        let b: Vec<Vec3> = cloud(&a).iter().map(|p| m.transform_point(p)).collect();
        let off = RigidMotion::from_parts(nalgebra::Matrix3::identity(), Vec3::new(3.0, 3.0, 3.0)).compose(&m);
        assert!(track_planes(&a, &b, None, &off, &TrackConfig::default()).unwrap().is_empty());
    }

    /// Points of adjacent surfaces within the band near shared edges leak
    /// into the support, so improvement is a majority property rather than a
    /// per-plane guarantee.
    #[test]
    fn refit_improves_perturbed_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = truth();
        let (mut all_tracked, mut closer_angle, mut closer_offset, mut total) = (0, 0, 0, 0);
        let (mut before, mut after) = (0.0, 0.0);
        for _ in 0..200 {
            let a: Vec<Plane> = make_toy_scene()
                .patches
                .iter()
                .map(|p| noisy_plane(p, 400, 0.0, None, &mut rng).unwrap())
                .collect();
            let b_planes: Vec<Plane> = a.iter().map(|p| transform_plane(&m, p)).collect();
            let nudge = RigidMotion::from_axis_angle(
                &random_unit(&mut rng),
                2f64.to_radians(),
                random_unit(&mut rng).into_inner() * 0.03,
            );
            let tracked = track_planes(&a, &cloud(&b_planes), None, &nudge.compose(&m), &TrackConfig::default()).unwrap();
            all_tracked += usize::from(tracked.len() == 4);
            for t in &tracked {
                let gt = &b_planes[t.index];
                let err = |p: &Plane| {
                    let (n, d) = p.oriented_along(&gt.normal);
                    (angle_between(&n, &gt.normal), (d - gt.offset).abs())
                };
                let (ang0, off0) = err(&t.transported);
                let (ang1, off1) = err(&t.refined);
                total += 1;
                closer_angle += usize::from(ang1 < ang0);
                closer_offset += usize::from(off1 < off0);
                before += ang0;
                after += ang1;
            }
        }
        assert!(all_tracked >= 190, "{all_tracked}");
        assert!(closer_angle as f64 >= 0.95 * total as f64, "{closer_angle}/{total}");
        assert!(closer_offset as f64 >= 0.90 * total as f64, "{closer_offset}/{total}");
        assert!(after < 0.2 * before);
    }

    #[test]
    fn identity_prior_on_identical_views() {
        let a = sampled_scene(4, 0.02);
        let tracked = track_planes(&a, &cloud(&a), None, &RigidMotion::identity(), &TrackConfig::default()).unwrap();
        assert_eq!(tracked.len(), 4);
        assert!(tracked.iter().all(|t| t.support_ratio >= 0.99));
    }

    #[test]
    fn prior_refinement_recovers_truth() {
        let a = sampled_scene(5, 0.0);
        let m = truth();
        let b = cloud(&a.iter().map(|p| transform_plane(&m, p)).collect::<Vec<_>>());
        let prior = RigidMotion::from_axis_angle(&Vec3::y_axis(), 0.02, Vec3::new(0.02, 0.0, -0.02)).compose(&m);
        let tracked = track_planes(&a, &b, None, &prior, &TrackConfig::default()).unwrap();
        let up = Vec3::y_axis();
        let est = refine_motion(&a, &tracked, &up, &up, &prior, &ClassConfig::default()).unwrap();
        let (rot, trans) = est.motion.compose(&m.inverse()).magnitude();
        let (rot_p, trans_p) = prior.compose(&m.inverse()).magnitude();
        assert!(rot < rot_p && trans < trans_p, "{rot} {trans}");
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrackConfig { min_support_ratio: 0.0, ..Default::default() };
        assert!(matches!(
            track_planes(&[], &[], None, &RigidMotion::identity(), &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn support_within_band_and_refit_not_worse(
            seed in 0u64..1000,
            yaw in -0.05f64..0.05,
            dx in -0.03f64..0.03,
            noise in 0.0f64..0.04,
        ) {
            let a = sampled_scene(seed, noise);
            let b = cloud(&a);
            let prior = RigidMotion::from_axis_angle(&Vec3::y_axis(), yaw, Vec3::new(dx, 0.0, 0.0));
            let cfg = TrackConfig::default();
            for t in track_planes(&a, &b, None, &prior, &cfg).unwrap() {
                let rms = |p: &Plane| {
                    (t.refined.inliers.iter().map(|x| p.signed_distance(x).powi(2)).sum::<f64>()
                        / t.refined.inlier_count() as f64)
                        .sqrt()
                };
                for x in &t.refined.inliers {
                    prop_assert!(t.transported.distance(x) <= cfg.support_dist);
                }
                prop_assert!(rms(&t.refined) <= rms(&t.transported) + 1e-12);
                prop_assert!(fit_plane(t.refined.inliers.clone()).is_ok());
            }
        }
    }
}
