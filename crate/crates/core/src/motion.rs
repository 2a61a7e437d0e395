//! Rigid motion from matched planes.
//!
//! The motion is split into rotation (vertical planes and Up), horizontal
//! translation (vertical planes, world X/Z axes) and vertical translation
//! (horizontal planes, world Y axis). Estimates map view-a coordinates into
//! view-b coordinates.

use nalgebra::{Matrix2, Matrix3, Rotation3, Vector2};
use serde::{Deserialize, Serialize};

use crate::classify::{classify_pair_normals, ClassConfig, PairClass, PlaneClass};
use crate::error::{Error, Result};
use crate::geom::{align_vectors, make_world_frame, project_to_rotation, Plane, RigidMotion, UnitVec3, Vec2, Vec3, WorldFrame};

/// Largest admissible condition number of the quadric's 2×2 block.
pub const MAX_QUADRIC_CONDITION: f64 = 1e6;

/// Planes whose normal is within this angle of Up cannot anchor a rotation.
pub const MIN_VERTICAL_TILT: f64 = 10.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dof {
    Rotation,
    /// Both horizontal translation components.
    Horizontal,
    /// Horizontal translation orthogonal to an observed parallel direction.
    HorizontalComplement,
    Vertical,
}

/// Summed fundamental error quadrics `K = Σ p pᵀ` over vertical planes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadricAccumulator {
    k: Matrix3<f64>,
    count: usize,
}

impl QuadricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Homogeneous 2D plane vector `p = (a, b, −(d_a − d_b)) / ‖(a, b)‖` with
    /// `(a, b) = (n·X_w, n·Z_w)`.
    pub fn plane_vector(n: &UnitVec3, d_a: f64, d_b: f64, frame: &WorldFrame) -> Vec3 {
        let ab = frame.horizontal(n);
        let s = ab.norm();
        Vec3::new(ab.x / s, ab.y / s, -(d_a - d_b) / s)
    }

    pub fn accumulate(&mut self, n: &UnitVec3, d_a: f64, d_b: f64, frame: &WorldFrame) {
        let p = Self::plane_vector(n, d_a, d_b, frame);
        self.k += p * p.transpose();
        self.count += 1;
    }

    /// Sum of squared residuals `Σ (pᵀ [v; 1])²` of the minimizer's
    /// sign-flipped argument, i.e. the cost evaluated at translation `t`.
    pub fn cost(&self, t: &Vec2) -> f64 {
        let v = Vec3::new(-t.x, -t.y, 1.0);
        (v.transpose() * self.k * v)[(0, 0)]
    }

    /// Horizontal translation `(t_x, t_z)` minimizing the quadric.
    ///
    /// Solves `A v = −b`. Written literally, the plane vector encodes
    /// `n·v = d_a − d_b`, so `v` is the negated translation; the returned
    /// value is `−v`, which agrees with the parallel-plane formula
    /// `t_N = (d_b − d_a) N`.
    pub fn minimize(&self) -> Result<Vec2> {
        let a = Matrix2::new(self.k[(0, 0)], self.k[(0, 1)], self.k[(1, 0)], self.k[(1, 1)]);
        let b = Vector2::new(self.k[(0, 2)], self.k[(1, 2)]);
        let eig = a.symmetric_eigen();
        let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_QUADRIC_CONDITION) {
            return Err(Error::SingularSystem { condition });
        }
        let v = a
            .lu()
            .solve(&(-b))
            .ok_or(Error::SingularSystem { condition })?;
        Ok(-v)
    }
}

/// One matched plane's offsets along a shared normal: view-b offset and the
/// rotated view-a offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetPair {
    pub normal: UnitVec3,
    pub d_a: f64,
    pub d_b: f64,
}

impl OffsetPair {
    fn aligned_to(&self, reference: &Vec3) -> (UnitVec3, f64) {
        let delta = self.d_b - self.d_a;
        if self.normal.dot(reference) < 0.0 {
            (-self.normal, -delta)
        } else {
            (self.normal, delta)
        }
    }
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Replaces Up by the horizontal-plane normal of median deviation from it
/// (the smaller middle deviation for even counts).
pub fn refine_up(horizontal_normals: &[UnitVec3], up: &UnitVec3) -> UnitVec3 {
    let mut candidates: Vec<(f64, usize, UnitVec3)> = horizontal_normals
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let n = if n.dot(up) < 0.0 { -*n } else { *n };
            let dev = n.cross(up).norm().atan2(n.dot(up));
            (dev, i, n)
        })
        .collect();
    if candidates.is_empty() {
        return *up;
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    candidates[(candidates.len() - 1) / 2].2
}

fn project_horizontal(n: &UnitVec3, up: &UnitVec3) -> Result<UnitVec3> {
    if n.dot(up).abs() > MIN_VERTICAL_TILT.cos() {
        return Err(Error::DegenerateInput(
            "plane normal too close to Up to define a frame".into(),
        ));
    }
    let v = n.as_ref() - up.as_ref() * n.dot(up);
    Ok(UnitVec3::new_normalize(v))
}

/// Frame `(N, Up, Up × N)` as matrix columns.
fn plane_frame(n: &UnitVec3, up: &UnitVec3) -> Matrix3<f64> {
    Matrix3::from_columns(&[n.into_inner(), up.into_inner(), up.cross(n)])
}

/// Rotation taking the frame of `(n_a, up_a)` onto that of `(n_b, up_b)`.
///
/// Normals are first projected orthogonally to their Up. The result maps
/// `n_a → n_b` and `up_a → up_b`.
pub fn rotation_from_plane(
    n_a: &UnitVec3,
    n_b: &UnitVec3,
    up_a: &UnitVec3,
    up_b: &UnitVec3,
) -> Result<Rotation3<f64>> {
    let pa = project_horizontal(n_a, up_a)?;
    let pb = project_horizontal(n_b, up_b)?;
    let r = plane_frame(&pb, up_b) * plane_frame(&pa, up_a).transpose();
    Ok(Rotation3::from_matrix_unchecked(r))
}

/// Chordal mean: the rotation closest in Frobenius norm to the entrywise mean.
pub fn average_rotations(rotations: &[Rotation3<f64>]) -> Rotation3<f64> {
    assert!(!rotations.is_empty(), "average of no rotations");
    if rotations.len() == 1 {
        return rotations[0];
    }
    let mean = rotations.iter().map(|r| r.matrix()).sum::<Matrix3<f64>>() / rotations.len() as f64;
    Rotation3::from_matrix_unchecked(project_to_rotation(&mean))
}

/// Translation from offset differences along a common direction `N`.
/// Returns `median(δ)·(N·X_w, N·Z_w)` and `N`.
pub fn horizontal_translation_parallel(matches: &[OffsetPair], frame: &WorldFrame) -> (Vec2, UnitVec3) {
    assert!(!matches.is_empty(), "parallel translation needs a match");
    let reference = matches[0].normal.into_inner();
    let mut sum = Vec3::zeros();
    let mut deltas = Vec::with_capacity(matches.len());
    for m in matches {
        let (n, delta) = m.aligned_to(&reference);
        sum += n.as_ref();
        deltas.push(delta);
    }
    let dir = UnitVec3::new_normalize(sum);
    (frame.horizontal(&dir) * median(&mut deltas), dir)
}

/// Displacement along Up: median of `d_b − d_a` with normals aligned to Up.
pub fn vertical_translation(matches: &[OffsetPair], up: &UnitVec3) -> f64 {
    let mut deltas: Vec<f64> = matches.iter().map(|m| m.aligned_to(up).1).collect();
    median(&mut deltas)
}

/// A plane correspondence between the two views.
#[derive(Debug, Clone, Copy)]
pub struct MatchedPair<'a> {
    pub a: &'a Plane,
    pub b: &'a Plane,
    pub class: PlaneClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservedDof {
    pub rotation: bool,
    pub horizontal_full: bool,
    /// Observed horizontal direction when only one is constrained.
    pub horizontal_1d: Option<[f64; 3]>,
    pub vertical: bool,
}

/// Number of matched planes behind each motion component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DofSources {
    pub rotation: usize,
    pub horizontal: usize,
    pub vertical: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionEstimate {
    pub motion: RigidMotion,
    pub observed: ObservedDof,
    pub sources: DofSources,
    /// Refined Up directions of both views.
    pub up_a: UnitVec3,
    pub up_b: UnitVec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum HorizontalPart {
    None,
    OneD { t: Vec2, dir: Vec2 },
    Full(Vec2),
}

/// Motion components observed from plane evidence alone.
#[derive(Debug, Clone)]
pub(crate) struct Components {
    pub rotation: Rotation3<f64>,
    pub horizontal: HorizontalPart,
    pub vertical: Option<f64>,
    pub frame: WorldFrame,
    pub sources: DofSources,
    pub up_a: UnitVec3,
    pub up_b: UnitVec3,
}

impl Components {
    /// World-frame translation with observed components set and the others
    /// taken from `fill` (world coordinates). Returns the translation and the
    /// components that were filled.
    pub fn translation_with(&self, fill: &Vec3) -> (Vec3, Vec<Dof>) {
        let mut missing = Vec::new();
        let (tx, tz) = match self.horizontal {
            HorizontalPart::Full(t) => (t.x, t.y),
            HorizontalPart::OneD { t, dir } => {
                missing.push(Dof::HorizontalComplement);
                let perp = Vec2::new(-dir.y, dir.x);
                let h = t + perp * perp.dot(&Vec2::new(fill.x, fill.z));
                (h.x, h.y)
            }
            HorizontalPart::None => {
                missing.push(Dof::Horizontal);
                (fill.x, fill.z)
            }
        };
        let ty = self.vertical.unwrap_or_else(|| {
            missing.push(Dof::Vertical);
            fill.y
        });
        (Vec3::new(tx, ty, tz), missing)
    }
}

/// Offset pairs for matches after rotating view-a planes, with view-a signs
/// aligned to the view-b normals.
fn rotated_offsets(matches: &[&MatchedPair], rotation: &Rotation3<f64>) -> Vec<OffsetPair> {
    matches
        .iter()
        .map(|m| {
            let na = rotation * m.a.normal.as_ref();
            let d_a = if na.dot(&m.b.normal) < 0.0 { -m.a.offset } else { m.a.offset };
            OffsetPair { normal: m.b.normal, d_a, d_b: m.b.offset }
        })
        .collect()
}

/// Up directions of both views refined by their matched horizontal planes.
pub(crate) fn refined_ups(matches: &[MatchedPair], up_a: &UnitVec3, up_b: &UnitVec3) -> (UnitVec3, UnitVec3) {
    let horizontal = || matches.iter().filter(|m| m.class == PlaneClass::Horizontal);
    let na: Vec<UnitVec3> = horizontal().map(|m| m.a.normal).collect();
    let nb: Vec<UnitVec3> = horizontal().map(|m| m.b.normal).collect();
    (refine_up(&na, up_a), refine_up(&nb, up_b))
}

/// Solves every component the matches observe, given refined Up directions.
/// `rotation` overrides the plane-derived rotation; without vertical matches
/// and without an override the Up-alignment rotation is used and marked
/// unobserved.
pub(crate) fn solve_components(
    matches: &[MatchedPair],
    up_a: UnitVec3,
    up_b: UnitVec3,
    rotation: Option<Rotation3<f64>>,
    ccfg: &ClassConfig,
) -> Result<Components> {
    let horizontal: Vec<&MatchedPair> = matches.iter().filter(|m| m.class == PlaneClass::Horizontal).collect();
    let vertical: Vec<&MatchedPair> = matches.iter().filter(|m| m.class == PlaneClass::Vertical).collect();

    let (rotation, rotation_observed) = match rotation {
        Some(r) => (r, true),
        None if !vertical.is_empty() => {
            let rs = vertical
                .iter()
                .map(|m| rotation_from_plane(&m.a.normal, &m.b.normal, &up_a, &up_b))
                .collect::<Result<Vec<_>>>()?;
            (average_rotations(&rs), true)
        }
        None => (Rotation3::from_matrix_unchecked(align_vectors(&up_a, &up_b)), false),
    };

    let frame = make_world_frame(&up_b);
    let mut sources = DofSources {
        rotation: if rotation_observed { vertical.len() } else { 0 },
        ..Default::default()
    };

    let horizontal_part = if vertical.is_empty() {
        HorizontalPart::None
    } else {
        sources.horizontal = vertical.len();
        let offsets = rotated_offsets(&vertical, &rotation);
        let non_parallel = (0..vertical.len()).any(|i| {
            (i + 1..vertical.len()).any(|j| {
                let (c, _) = classify_pair_normals(
                    (&vertical[i].b.normal, PlaneClass::Vertical),
                    (&vertical[j].b.normal, PlaneClass::Vertical),
                    ccfg,
                );
                c == PairClass::VerticalNonParallel
            })
        });
        let quadric = non_parallel
            .then(|| {
                let mut acc = QuadricAccumulator::new();
                for o in &offsets {
                    acc.accumulate(&o.normal, o.d_a, o.d_b, &frame);
                }
                acc.minimize().ok()
            })
            .flatten();
        match quadric {
            Some(t) => HorizontalPart::Full(t),
            None => {
                let (t, dir) = horizontal_translation_parallel(&offsets, &frame);
                let h = frame.horizontal(&dir);
                if h.norm() > 0.0 {
                    HorizontalPart::OneD { t, dir: h.normalize() }
                } else {
                    HorizontalPart::None
                }
            }
        }
    };

    let vertical_part = (!horizontal.is_empty()).then(|| {
        sources.vertical = horizontal.len();
        vertical_translation(&rotated_offsets(&horizontal, &rotation), &up_b)
    });

    Ok(Components {
        rotation,
        horizontal: horizontal_part,
        vertical: vertical_part,
        frame,
        sources,
        up_a,
        up_b,
    })
}

/// Estimates the motion mapping view a into view b from matched planes.
///
/// Components without plane evidence are taken from `prior`: the rotation as
/// the prior's rotation corrected to map `up_a` onto `up_b`, translations per
/// world axis. Without a prior, missing components yield
/// [`Error::Underconstrained`].
pub fn estimate_motion(
    matches: &[MatchedPair],
    up_a: &UnitVec3,
    up_b: &UnitVec3,
    prior: Option<&RigidMotion>,
    ccfg: &ClassConfig,
) -> Result<MotionEstimate> {
    let has_vertical = matches.iter().any(|m| m.class == PlaneClass::Vertical);
    let (up_a, up_b) = refined_ups(matches, up_a, up_b);
    let prior_rotation = match (has_vertical, prior) {
        (false, Some(p)) => {
            let rp = p.rotation();
            let tilt = align_vectors(&UnitVec3::new_normalize(rp * up_a.as_ref()), &up_b);
            Some(Rotation3::from_matrix_unchecked(tilt * rp))
        }
        _ => None,
    };
    let c = solve_components(matches, up_a, up_b, prior_rotation, ccfg)?;
    let rotation_observed = has_vertical;

    let mut missing = Vec::new();
    if !rotation_observed && prior.is_none() {
        missing.push(Dof::Rotation);
    }
    let fill = prior.map(|p| c.frame.to_world(p.translation())).unwrap_or_default();
    let (t_world, filled) = c.translation_with(&fill);
    if prior.is_none() {
        missing.extend(filled);
    }
    if !missing.is_empty() {
        return Err(Error::Underconstrained(missing));
    }

    let observed = ObservedDof {
        rotation: rotation_observed,
        horizontal_full: matches!(c.horizontal, HorizontalPart::Full(_)),
        horizontal_1d: match c.horizontal {
            HorizontalPart::OneD { dir, .. } => Some(c.frame.from_world(&Vec3::new(dir.x, 0.0, dir.y)).into()),
            _ => None,
        },
        vertical: c.vertical.is_some(),
    };
    let mut sources = c.sources;
    if !rotation_observed {
        sources.rotation = 0;
    }
    Ok(MotionEstimate {
        motion: RigidMotion::from_rotation(c.rotation, c.frame.from_world(&t_world)),
        observed,
        sources,
        up_a: c.up_a,
        up_b: c.up_b,
    })
}
