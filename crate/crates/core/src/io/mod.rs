//! File formats: PLY clouds, JSON transforms, planes, matches,
//! correspondences and evaluation manifests; Up direction sources.

pub mod ply;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Matrix4;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::CorrespondenceSet;
use crate::geom::{angle_between, Plane, RigidMotion, UnitVec3, Vec3};
use crate::motion::MotionEstimate;
use crate::pair_match::{MatchSet, NoMotion};

pub use ply::{parse_ply, read_ply, write_ply, PlyFormat, PointCloud};

/// Orthonormality tolerance of loaded transforms.
pub const TRANSFORM_TOLERANCE: f64 = 1e-6;

/// Largest angle to +Y for a plane to count as the floor (or ceiling).
pub const UP_SEARCH_ANGLE: f64 = 30.0 * std::f64::consts::PI / 180.0;

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// 4×4 row-major homogeneous matrix mapping view-a to view-b coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformFile {
    pub matrix: [[f64; 4]; 4],
}

impl TransformFile {
    pub fn from_motion(m: &RigidMotion) -> Self {
        let h = m.to_homogeneous();
        Self { matrix: std::array::from_fn(|r| std::array::from_fn(|c| h[(r, c)])) }
    }

    pub fn to_motion(&self) -> Result<RigidMotion> {
        let h = Matrix4::from_fn(|r, c| self.matrix[r][c]);
        RigidMotion::from_homogeneous(&h, TRANSFORM_TOLERANCE)
    }
}

pub fn read_transform(path: impl AsRef<Path>) -> Result<RigidMotion> {
    read_json::<TransformFile>(path)?.to_motion()
}

pub fn write_transform(path: impl AsRef<Path>, m: &RigidMotion) -> Result<()> {
    write_json(path, &TransformFile::from_motion(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneRecord {
    pub normal: [f64; 3],
    pub offset: f64,
    pub centroid: [f64; 3],
    pub inlier_count: usize,
}

impl From<&Plane> for PlaneRecord {
    fn from(p: &Plane) -> Self {
        Self {
            normal: p.normal.into_inner().into(),
            offset: p.offset,
            centroid: p.centroid.into(),
            inlier_count: p.inlier_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanesFile {
    pub planes: Vec<PlaneRecord>,
}

impl PlanesFile {
    pub fn new(planes: &[Plane]) -> Self {
        Self { planes: planes.iter().map(PlaneRecord::from).collect() }
    }
}

/// Matches plus the outcome of the motion estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchesFile {
    pub matches: MatchSet,
    pub registered: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<NoMotion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed: Option<crate::motion::ObservedDof>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sources: Option<crate::motion::DofSources>,
}

impl MatchesFile {
    pub fn new(matches: MatchSet, outcome: &std::result::Result<MotionEstimate, NoMotion>) -> Self {
        match outcome {
            Ok(e) => Self {
                matches,
                registered: true,
                failure: None,
                observed: Some(e.observed),
                sources: Some(e.sources),
            },
            Err(f) => Self { matches, registered: false, failure: Some(f.clone()), observed: None, sources: None },
        }
    }
}

/// Correspondences as a JSON list of `[ax, ay, az, bx, by, bz]`.
pub fn read_correspondences(path: impl AsRef<Path>) -> Result<CorrespondenceSet> {
    let rows: Vec<[f64; 6]> = read_json(path)?;
    let set = CorrespondenceSet::new(
        rows.iter()
            .map(|r| (Vec3::new(r[0], r[1], r[2]), Vec3::new(r[3], r[4], r[5])))
            .collect(),
    );
    set.validate()?;
    Ok(set)
}

pub fn write_correspondences(path: impl AsRef<Path>, set: &CorrespondenceSet) -> Result<()> {
    let rows: Vec<[f64; 6]> = set.pairs.iter().map(|(a, b)| [a.x, a.y, a.z, b.x, b.y, b.z]).collect();
    write_json(path, &rows)
}

/// Source of a view's Up direction.
#[derive(Debug, Clone, PartialEq)]
pub enum UpSpec {
    FromPlanes,
    Vector(Vec3),
    File(PathBuf),
}

impl FromStr for UpSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "from-planes" {
            return Ok(UpSpec::FromPlanes);
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(UpSpec::File(PathBuf::from(path)));
        }
        parse_vector(s).map(UpSpec::Vector)
    }
}

/// Three numbers separated by commas and/or whitespace, optionally bracketed.
fn parse_vector(s: &str) -> Result<Vec3> {
    let values: Vec<f64> = s
        .trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse Up vector {s:?}")))?;
    match values[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(Error::InvalidConfig(format!("Up vector needs 3 components, got {s:?}"))),
    }
}

fn normalized(v: Vec3) -> Result<UnitVec3> {
    let n = v.norm();
    if !(n > 1e-12 && n.is_finite()) {
        return Err(Error::InvalidConfig(format!("Up vector {:?} is zero or not finite", v.as_slice())));
    }
    Ok(UnitVec3::new_unchecked(v / n))
}

/// Resolves an Up direction. `FromPlanes` picks the largest plane within
/// 30° of +Y and orients its normal toward +Y.
pub fn resolve_up(spec: &UpSpec, planes: &[Plane]) -> Result<UnitVec3> {
    match spec {
        UpSpec::Vector(v) => normalized(*v),
        UpSpec::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            normalized(parse_vector(&text)?)
        }
        UpSpec::FromPlanes => {
            let y = Vec3::y();
            planes
                .iter()
                .map(|p| p.oriented_along(&y).0)
                .zip(planes)
                .filter(|(n, _)| angle_between(n, &y) < UP_SEARCH_ANGLE)
                .max_by_key(|(_, p)| p.inlier_count())
                .map(|(n, _)| n)
                .ok_or(Error::NoHorizontalPlane)
        }
    }
}

/// Batch evaluation input: one entry per view pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalManifest {
    pub pairs: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Estimated transform; absent when the pair did not register.
    #[serde(default)]
    pub transform: Option<PathBuf>,
    pub correspondences: PathBuf,
    #[serde(default)]
    pub elapsed_ms: f64,
}

/// Reads a manifest, resolving relative paths against its directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<EvalManifest> {
    let path = path.as_ref();
    let mut m: EvalManifest = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for e in &mut m.pairs {
        e.correspondences = base.join(&e.correspondences);
        e.transform = e.transform.as_ref().map(|t| base.join(t));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::fit_plane;

    fn plane(normal: Vec3, offset: f64, n: usize) -> Plane {
        let normal = normal.normalize();
        let u = normal.cross(&Vec3::new(0.3, 0.1, 0.9)).normalize();
        let v = normal.cross(&u);
        let pts = (0..n)
            .map(|i| normal * offset + u * (i % 7) as f64 * 0.1 + v * (i / 7) as f64 * 0.1)
            .collect();
        fit_plane(pts).unwrap()
    }

    #[test]
    fn transform_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        let m = RigidMotion::from_axis_angle(
            &UnitVec3::new_normalize(Vec3::new(0.2, 1.0, -0.3)),
            1.234567,
            Vec3::new(0.1, -1.0 / 3.0, 2.5e-7),
        );
        write_transform(&path, &m).unwrap();
        let back = read_transform(&path).unwrap();
        assert_eq!(back.to_homogeneous(), m.to_homogeneous());
    }

    #[test]
    fn transform_rejects_non_rigid() {
        let mut t = TransformFile::from_motion(&RigidMotion::identity());
        t.matrix[0][0] = 1.01;
        assert!(matches!(t.to_motion(), Err(Error::InvalidTransform(_))));
        let mut t = TransformFile::from_motion(&RigidMotion::identity());
        t.matrix[3][0] = 0.5;
        assert!(matches!(t.to_motion(), Err(Error::InvalidTransform(_))));
    }

    #[test]
    fn up_specs() {
        assert_eq!("from-planes".parse::<UpSpec>().unwrap(), UpSpec::FromPlanes);
        let up = resolve_up(&"0,2,0".parse().unwrap(), &[]).unwrap();
        assert_eq!(up.into_inner(), Vec3::y());
        assert!(resolve_up(&"0 0 0".parse().unwrap(), &[]).is_err());
        assert!("1,2".parse::<UpSpec>().is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("up.txt");
        std::fs::write(&path, "[0.0, -3.0, 0.0]\n").unwrap();
        let spec: UpSpec = format!("file:{}", path.display()).parse().unwrap();
        assert_eq!(resolve_up(&spec, &[]).unwrap().into_inner(), -Vec3::y());
    }

    #[test]
    fn up_from_planes() {
        let floor = plane(Vec3::y(), -1.2, 70);
        let wall = plane(Vec3::x(), 2.0, 140);
        let up = resolve_up(&UpSpec::FromPlanes, &[wall.clone(), floor]).unwrap();
        assert!((up.into_inner() - Vec3::y()).norm() < 1e-12);

        let tilt = 5f64.to_radians();
        let tilted_n = Vec3::new(tilt.sin(), tilt.cos(), 0.0);
        let tilted = plane(tilted_n, -1.2, 140);
        let ceiling = plane(-Vec3::y(), 1.0, 70);
        let up = resolve_up(&UpSpec::FromPlanes, &[ceiling, wall.clone(), tilted]).unwrap();
        assert!(angle_between(&up, &tilted_n) < 1e-12);

        assert!(matches!(resolve_up(&UpSpec::FromPlanes, &[wall]), Err(Error::NoHorizontalPlane)));
    }

    #[test]
    fn correspondences_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let set = CorrespondenceSet::new(vec![(Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.5))]);
        write_correspondences(&path, &set).unwrap();
        assert_eq!(read_correspondences(&path).unwrap(), set);
        std::fs::write(&path, "[]").unwrap();
        assert!(matches!(read_correspondences(&path), Err(Error::EmptyCorrespondences)));
    }

    #[test]
    fn manifest_paths_are_relative_to_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(
            &path,
            r#"{"pairs": [{"transform": "t.json", "correspondences": "c.json", "elapsed_ms": 4}, {"correspondences": "d.json"}]}"#,
        )
        .unwrap();
        let m = read_manifest(&path).unwrap();
        assert_eq!(m.pairs[0].transform.as_deref(), Some(dir.path().join("t.json").as_path()));
        assert_eq!(m.pairs[1].transform, None);
        assert_eq!(m.pairs[1].correspondences, dir.path().join("d.json"));
    }
}
