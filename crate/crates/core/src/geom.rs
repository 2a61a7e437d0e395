//! Planes, rigid motions and world frames.
//!
//! Motions are stored as a rotation matrix plus a translation and map
//! view-a coordinates into view-b coordinates: `x_b = R x_a + t`.

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;
pub type UnitVec3 = Unit<Vector3<f64>>;
pub type Rgb = [u8; 3];

/// Shared tolerance between a plane's offset and its centroid (meters).
pub const FIT_TOLERANCE: f64 = 0.02;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidMotion {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Default for RigidMotion {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidMotion {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a motion, rejecting rotations that are not proper within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        if !is_rotation(&rotation, ORTHONORMAL_TOL) {
            return Err(Error::InvalidTransform(
                "rotation is not orthonormal with determinant +1".into(),
            ));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("translation is not finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Caller guarantees `rotation` is a proper rotation.
    pub(crate) fn from_parts(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        debug_assert!(is_rotation(&rotation, 1e-6));
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self::from_parts(*rotation.matrix(), translation)
    }

    /// Rotation of `angle` radians about `axis`, followed by `translation`.
    pub fn from_axis_angle(axis: &UnitVec3, angle: f64, translation: Vec3) -> Self {
        Self::from_rotation(Rotation3::from_axis_angle(axis, angle), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn transform_unit(&self, v: &UnitVec3) -> UnitVec3 {
        UnitVec3::new_normalize(self.rotation * v.as_ref())
    }

    /// Applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidMotion) -> RigidMotion {
        RigidMotion::from_parts(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidMotion {
        let rt = self.rotation.transpose();
        RigidMotion::from_parts(rt, -(rt * self.translation))
    }

    /// `(rotation angle in radians, translation norm in meters)`.
    pub fn magnitude(&self) -> (f64, f64) {
        (rotation_angle(&self.rotation), self.translation.norm())
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Parses a homogeneous matrix. The last row must be exactly `[0,0,0,1]`
    /// and the rotation block orthonormal within `tol`; blocks that are only
    /// orthonormal within `tol` (not 1e-9) are projected onto SO(3).
    pub fn from_homogeneous(m: &Matrix4<f64>, tol: f64) -> Result<Self> {
        if m.row(3).iter().copied().ne([0.0, 0.0, 0.0, 1.0]) {
            return Err(Error::InvalidTransform("last row must be [0, 0, 0, 1]".into()));
        }
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("matrix has non-finite entries".into()));
        }
        let rotation: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation: Vec3 = m.fixed_view::<3, 1>(0, 3).into_owned();
        if !is_rotation(&rotation, tol) {
            return Err(Error::InvalidTransform(format!(
                "rotation block is not orthonormal within {tol:e}"
            )));
        }
        let rotation = if is_rotation(&rotation, ORTHONORMAL_TOL) {
            rotation
        } else {
            project_to_rotation(&rotation)
        };
        Ok(Self::from_parts(rotation, translation))
    }
}

/// Rotation angle of a rotation matrix in `[0, π]`.
///
/// Equal to `arccos((tr R − 1) / 2)`, evaluated through `atan2` so small
/// angles keep full precision.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = (r.trace() - 1.0) / 2.0;
    let axis = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = axis.norm() / 2.0;
    sin.atan2(cos.clamp(-1.0, 1.0))
}

/// Angle between two vectors, accurate near 0 and π.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    r.iter().all(|v| v.is_finite()) && err <= tol && (r.determinant() - 1.0).abs() <= tol
}

/// Nearest proper rotation in the Frobenius sense.
pub fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * v_t
}

/// Smallest rotation taking `from` onto `to`.
pub fn align_vectors(from: &UnitVec3, to: &UnitVec3) -> Matrix3<f64> {
    match Rotation3::rotation_between(from.as_ref(), to.as_ref()) {
        Some(r) => *r.matrix(),
        None => {
            // Antiparallel: any axis orthogonal to `from` works.
            let frame = make_world_frame(from);
            *Rotation3::from_axis_angle(&frame.x, std::f64::consts::PI).matrix()
        }
    }
}

/// Orthonormal frame whose Y axis is the Up direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldFrame {
    pub x: UnitVec3,
    pub y: UnitVec3,
    pub z: UnitVec3,
}

impl WorldFrame {
    /// Components of `v` along `(x, y, z)`.
    pub fn to_world(&self, v: &Vec3) -> Vec3 {
        Vec3::new(self.x.dot(v), self.y.dot(v), self.z.dot(v))
    }

    pub fn from_world(&self, w: &Vec3) -> Vec3 {
        self.x.as_ref() * w.x + self.y.as_ref() * w.y + self.z.as_ref() * w.z
    }

    /// Horizontal `(x, z)` components of `v`.
    pub fn horizontal(&self, v: &Vec3) -> Vec2 {
        Vec2::new(self.x.dot(v), self.z.dot(v))
    }
}

/// Completes `up` into a right-handed frame. The helper axis is the canonical
/// axis least aligned with `up` (lowest index on ties), which keeps the cross
/// product well conditioned and the result deterministic.
pub fn make_world_frame(up: &UnitVec3) -> WorldFrame {
    let comps = [up.x.abs(), up.y.abs(), up.z.abs()];
    let mut axis = 0;
    for i in 1..3 {
        if comps[i] < comps[axis] {
            axis = i;
        }
    }
    let e = Vec3::ith(axis, 1.0);
    let z = UnitVec3::new_normalize(up.cross(&e));
    let x = UnitVec3::new_normalize(up.cross(&z));
    WorldFrame { x, y: *up, z }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub normal: UnitVec3,
    /// Signed offset `d = normal · p` for points `p` on the plane.
    pub offset: f64,
    pub inliers: Vec<Vec3>,
    pub centroid: Vec3,
    pub colors: Option<Vec<Rgb>>,
}

impl Plane {
    /// Signed distance of `p` to the plane.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.signed_distance(p).abs()
    }

    pub fn inlier_count(&self) -> usize {
        self.inliers.len()
    }

    /// In-plane basis `(u, v)` such that `(u, normal, v)` is right-handed.
    pub fn basis(&self) -> (UnitVec3, UnitVec3) {
        let f = make_world_frame(&self.normal);
        (f.x, f.z)
    }

    /// Flips the normal so it faces the view origin.
    fn canonicalize(&mut self) {
        if self.normal.dot(&self.centroid) > 0.0 {
            self.normal = -self.normal;
            self.offset = -self.offset;
        }
    }

    /// Normal and offset with the normal sign chosen to agree with `reference`.
    pub fn oriented_along(&self, reference: &Vec3) -> (UnitVec3, f64) {
        if self.normal.dot(reference) < 0.0 {
            (-self.normal, -self.offset)
        } else {
            (self.normal, self.offset)
        }
    }
}

/// Least-squares plane through `points`: centroid plus the direction of least
/// variance. The normal is oriented toward the view origin.
pub fn fit_plane(points: Vec<Vec3>) -> Result<Plane> {
    fit_plane_colored(points, None)
}

pub fn fit_plane_colored(points: Vec<Vec3>, colors: Option<Vec<Rgb>>) -> Result<Plane> {
    if points.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "plane fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(c) = &colors {
        if c.len() != points.len() {
            return Err(Error::DegenerateInput(
                "color count does not match point count".into(),
            ));
        }
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in &points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    if !cov.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite point coordinates".into()));
    }

    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let spread = |i: usize| eig.eigenvalues[order[i]].max(0.0).sqrt();
    if spread(1) <= 1e-9 * spread(2).max(1.0) {
        return Err(Error::DegenerateInput("points are collinear".into()));
    }
    let normal = UnitVec3::new_normalize(eig.eigenvectors.column(order[0]).into_owned());
    let mut plane = Plane {
        normal,
        offset: normal.dot(&centroid),
        inliers: points,
        centroid,
        colors,
    };
    plane.canonicalize();
    Ok(plane)
}

/// Expresses `plane` in the coordinates reached through `motion`.
pub fn transform_plane(motion: &RigidMotion, plane: &Plane) -> Plane {
    let normal = motion.transform_unit(&plane.normal);
    let centroid = motion.transform_point(&plane.centroid);
    let mut out = Plane {
        normal,
        offset: plane.offset + normal.dot(motion.translation()),
        inliers: plane.inliers.iter().map(|p| motion.transform_point(p)).collect(),
        centroid,
        colors: plane.colors.clone(),
    };
    out.canonicalize();
    out
}
