//! Synthetic planar scenes: rectangular patches, noise and random Manhattan
//! rooms.

use std::f64::consts::PI;

use nalgebra::Rotation3;
use rand::Rng;

use crate::error::Result;
use crate::geom::{fit_plane_colored, Plane, RigidMotion, Rgb, UnitVec3, Vec3};

/// Rectangle `center + s·u + t·v` for `s, t ∈ [-1/2, 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectPatch {
    pub center: Vec3,
    pub u: Vec3,
    pub v: Vec3,
}

impl RectPatch {
    pub fn new(center: Vec3, u: Vec3, v: Vec3) -> Self {
        Self { center, u, v }
    }

    pub fn normal(&self) -> UnitVec3 {
        UnitVec3::new_normalize(self.u.cross(&self.v))
    }

    pub fn corners(&self) -> [Vec3; 4] {
        let (u, v) = (self.u * 0.5, self.v * 0.5);
        [
            self.center - u - v,
            self.center + u - v,
            self.center + u + v,
            self.center - u + v,
        ]
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                let s = rng.random::<f64>() - 0.5;
                let t = rng.random::<f64>() - 0.5;
                self.center + self.u * s + self.v * t
            })
            .collect()
    }

    pub fn transformed(&self, m: &RigidMotion) -> RectPatch {
        RectPatch {
            center: m.transform_point(&self.center),
            u: m.transform_vector(&self.u),
            v: m.transform_vector(&self.v),
        }
    }

    /// Exact plane with the corners as inliers.
    pub fn plane(&self) -> Plane {
        fit_plane_colored(self.corners().to_vec(), None).expect("patch has positive area")
    }
}

/// Uniform sample from the ball of the given radius.
pub fn uniform_in_ball(radius: f64, rng: &mut impl Rng) -> Vec3 {
    if radius <= 0.0 {
        return Vec3::zeros();
    }
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

pub fn random_unit(rng: &mut impl Rng) -> UnitVec3 {
    loop {
        let v = uniform_in_ball(1.0, rng);
        if v.norm() > 1e-6 {
            return UnitVec3::new_normalize(v);
        }
    }
}

/// Samples `n` points on `patch`, displaces each uniformly in a ball of
/// `radius` and fits a plane. Colors, when given, are jittered per point.
pub fn noisy_plane(
    patch: &RectPatch,
    n: usize,
    radius: f64,
    color: Option<Rgb>,
    rng: &mut impl Rng,
) -> Result<Plane> {
    let (points, colors) = noisy_points(patch, n, radius, color, rng);
    fit_plane_colored(points, colors)
}

pub fn noisy_points(
    patch: &RectPatch,
    n: usize,
    radius: f64,
    color: Option<Rgb>,
    rng: &mut impl Rng,
) -> (Vec<Vec3>, Option<Vec<Rgb>>) {
    let points: Vec<Vec3> = patch
        .sample(n, rng)
        .into_iter()
        .map(|p| p + uniform_in_ball(radius, rng))
        .collect();
    let colors = color.map(|c| (0..n).map(|_| jitter(c, rng)).collect());
    (points, colors)
}

fn jitter(c: Rgb, rng: &mut impl Rng) -> Rgb {
    c.map(|x| (x as i32 + rng.random_range(-6..=6)).clamp(0, 255) as u8)
}

/// Fully saturated color of the given hue (degrees).
pub fn hue_color(hue: f64) -> Rgb {
    let h = hue.rem_euclid(360.0) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [(r * 230.0) as u8 + 20, (g * 230.0) as u8 + 20, (b * 230.0) as u8 + 20]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Floor,
    Ceiling,
    LeftWall,
    RightWall,
    FarWall,
    NearWall,
}

impl Surface {
    pub fn is_horizontal(self) -> bool {
        matches!(self, Surface::Floor | Surface::Ceiling)
    }
}

/// A box room around the sensor with a subset of its six surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct ManhattanScene {
    pub surfaces: Vec<Surface>,
    pub patches: Vec<RectPatch>,
    pub colors: Vec<Rgb>,
}

/// Random room: floor 1.0–1.6 m below the sensor, optional ceiling 0.8–1.4 m
/// above, walls 1.5–3.5 m away. Always has the floor and two orthogonal
/// walls; 3 to 6 surfaces in total, each with its own hue.
pub fn manhattan_scene(rng: &mut impl Rng) -> ManhattanScene {
    let floor = -rng.random_range(1.0..1.6);
    let ceiling = rng.random_range(0.8..1.4);
    let left = -rng.random_range(1.5..3.5);
    let right = rng.random_range(1.5..3.5);
    let far = -rng.random_range(1.5..3.5);
    let near = rng.random_range(1.5..3.5);

    let side = if rng.random_bool(0.5) { Surface::LeftWall } else { Surface::RightWall };
    let end = if rng.random_bool(0.5) { Surface::FarWall } else { Surface::NearWall };
    let mut surfaces = vec![Surface::Floor, side, end];
    let mut extra: Vec<Surface> = [
        Surface::Ceiling,
        Surface::LeftWall,
        Surface::RightWall,
        Surface::FarWall,
        Surface::NearWall,
    ]
    .into_iter()
    .filter(|s| !surfaces.contains(s))
    .collect();
    let total = rng.random_range(3..=6);
    while surfaces.len() < total {
        let k = rng.random_range(0..extra.len());
        surfaces.push(extra.swap_remove(k));
    }

    let (w, d, h) = (right - left, near - far, ceiling - floor);
    let (cx, cz, cy) = ((left + right) / 2.0, (far + near) / 2.0, (floor + ceiling) / 2.0);
    let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
    let patches = surfaces
        .iter()
        .map(|s| match s {
            Surface::Floor => RectPatch::new(Vec3::new(cx, floor, cz), x * w, z * d),
            Surface::Ceiling => RectPatch::new(Vec3::new(cx, ceiling, cz), x * w, z * d),
            Surface::LeftWall => RectPatch::new(Vec3::new(left, cy, cz), z * d, y * h),
            Surface::RightWall => RectPatch::new(Vec3::new(right, cy, cz), z * d, y * h),
            Surface::FarWall => RectPatch::new(Vec3::new(cx, cy, far), x * w, y * h),
            Surface::NearWall => RectPatch::new(Vec3::new(cx, cy, near), x * w, y * h),
        })
        .collect();
    let offset = rng.random_range(0.0..360.0);
    let colors = (0..surfaces.len())
        .map(|i| hue_color(offset + 360.0 * i as f64 / surfaces.len() as f64))
        .collect();
    ManhattanScene { surfaces, patches, colors }
}

/// Sensor motion for Manhattan scenes: yaw within ±80°, tilt up to 5° about
/// a random horizontal axis, translation of norm at most 1 m.
pub fn scene_motion(rng: &mut impl Rng) -> RigidMotion {
    let yaw = rng.random_range(-80f64..80.0).to_radians();
    let tilt = rng.random_range(0f64..5.0).to_radians();
    let azimuth = rng.random_range(-PI..PI);
    let axis = UnitVec3::new_normalize(Vec3::new(azimuth.cos(), 0.0, azimuth.sin()));
    let r = Rotation3::from_axis_angle(&axis, tilt) * Rotation3::from_axis_angle(&Vec3::y_axis(), yaw);
    RigidMotion::from_rotation(r, uniform_in_ball(1.0, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(uniform_in_ball(0.3, &mut rng).norm() <= 0.3);
        }
    }

    #[test]
    fn patch_samples_lie_on_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = RectPatch::new(Vec3::new(0.0, 1.0, -2.0), Vec3::x() * 4.0, Vec3::y() * 2.5);
        let plane = p.plane();
        for x in p.sample(100, &mut rng) {
            assert!(plane.distance(&x) < 1e-12);
            assert!(x.x.abs() <= 2.0 && (x.y - 1.0).abs() <= 1.25);
        }
    }

    #[test]
    fn scenes_have_required_surfaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = manhattan_scene(&mut rng);
            assert!((3..=6).contains(&s.surfaces.len()));
            assert!(s.surfaces.iter().any(|x| x.is_horizontal()));
            let walls: Vec<UnitVec3> = s
                .surfaces
                .iter()
                .zip(&s.patches)
                .filter(|(x, _)| !x.is_horizontal())
                .map(|(_, p)| p.normal())
                .collect();
            assert!(walls.iter().any(|a| walls.iter().any(|b| a.dot(b).abs() < 1e-12)));
            let m = scene_motion(&mut rng);
            let (angle, t) = m.magnitude();
            assert!(angle <= 85f64.to_radians() + 1e-9 && t <= 1.0);
        }
    }
}
