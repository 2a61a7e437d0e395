//! Gaussian classification of planes and plane pairs against the Up direction.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Plane, UnitVec3};

/// Probability floor below which no class is assigned.
pub const MIN_PROBABILITY: f64 = 0.5;
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassConfig {
    /// Angle to Up (or its orthogonal) at which a plane class reaches 0.5.
    pub alpha_thresh_up: f64,
    /// Relative angle at which a pair class reaches 0.5.
    pub alpha_thresh_rel: f64,
}

impl Default for ClassConfig {
    fn default() -> Self {
        let ten = 10f64.to_radians();
        Self {
            alpha_thresh_up: ten,
            alpha_thresh_rel: ten,
        }
    }
}

impl ClassConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("alpha_thresh_up", self.alpha_thresh_up),
            ("alpha_thresh_rel", self.alpha_thresh_rel),
        ] {
            if !(t > 0.0 && t < std::f64::consts::FRAC_PI_4) {
                return Err(Error::InvalidThreshold(format!(
                    "{name} must lie in (0, pi/4), got {t}"
                )));
            }
        }
        Ok(())
    }

    pub fn sigma_up(&self) -> f64 {
        self.alpha_thresh_up / (2.0 * std::f64::consts::LN_2).sqrt()
    }

    pub fn sigma_rel(&self) -> f64 {
        self.alpha_thresh_rel / (2.0 * std::f64::consts::LN_2).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneClass {
    Horizontal,
    Vertical,
    /// Oblique planes; excluded from matching.
    Unclassified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairClass {
    Horizontal,
    VerticalParallel,
    VerticalNonParallel,
    Other,
}

impl PairClass {
    /// Parallel pairs are scored by offset gaps, non-parallel ones by angles.
    pub fn is_parallel(self) -> bool {
        matches!(self, PairClass::Horizontal | PairClass::VerticalParallel)
    }
}

pub fn gaussian(alpha: f64, mu: f64, sigma: f64) -> f64 {
    let d = alpha - mu;
    (-(d * d) / (2.0 * sigma * sigma)).exp()
}

/// Standard deviation for which `gaussian(alpha_thresh, mu, sigma) == 0.5`.
pub fn sigma_from_threshold(alpha_thresh: f64, mu: f64) -> Result<f64> {
    let d = alpha_thresh - mu;
    if d == 0.0 || !d.is_finite() {
        return Err(Error::InvalidThreshold(format!(
            "threshold {alpha_thresh} must differ from the mean {mu}"
        )));
    }
    Ok((-(d * d) / (2.0 * 0.5f64.ln())).sqrt())
}

/// `arccos(|a·b|)`, in `[0, π/2]`.
pub fn unsigned_angle(a: &UnitVec3, b: &UnitVec3) -> f64 {
    // atan2 form keeps precision near 0 and π/2.
    let c = a.dot(b).abs();
    let s = a.cross(b).norm();
    s.atan2(c)
}

/// Argmax over two Gaussian scores with the 0.5 floor; `None` for ties or
/// when neither reaches the floor.
fn pick<T>(first: (T, f64), second: (T, f64)) -> Option<T> {
    if (first.1 - second.1).abs() <= TIE_TOLERANCE {
        return None;
    }
    let (class, p) = if first.1 > second.1 { first } else { second };
    (p >= MIN_PROBABILITY).then_some(class)
}

/// Classifies a normal by its angle to `up`. Returns the class and `α_up`.
pub fn classify_normal(normal: &UnitVec3, up: &UnitVec3, cfg: &ClassConfig) -> (PlaneClass, f64) {
    let alpha = unsigned_angle(normal, up);
    let sigma = cfg.sigma_up();
    let class = pick(
        (PlaneClass::Horizontal, gaussian(alpha, 0.0, sigma)),
        (PlaneClass::Vertical, gaussian(alpha, FRAC_PI_2, sigma)),
    )
    .unwrap_or(PlaneClass::Unclassified);
    (class, alpha)
}

pub fn classify_plane(plane: &Plane, up: &UnitVec3, cfg: &ClassConfig) -> (PlaneClass, f64) {
    classify_normal(&plane.normal, up, cfg)
}

/// Pair classification from already-classified planes. Returns the class and
/// `α_rel`.
pub fn classify_pair_normals(
    (na, ca): (&UnitVec3, PlaneClass),
    (nb, cb): (&UnitVec3, PlaneClass),
    cfg: &ClassConfig,
) -> (PairClass, f64) {
    let alpha = unsigned_angle(na, nb);
    let class = match (ca, cb) {
        (PlaneClass::Horizontal, PlaneClass::Horizontal) => PairClass::Horizontal,
        (PlaneClass::Vertical, PlaneClass::Vertical) => {
            let sigma = cfg.sigma_rel();
            pick(
                (PairClass::VerticalParallel, gaussian(alpha, 0.0, sigma)),
                (PairClass::VerticalNonParallel, gaussian(alpha, FRAC_PI_2, sigma)),
            )
            .unwrap_or(PairClass::Other)
        }
        _ => PairClass::Other,
    };
    (class, alpha)
}

pub fn classify_pair(a: &Plane, b: &Plane, up: &UnitVec3, cfg: &ClassConfig) -> (PairClass, f64) {
    let (ca, _) = classify_plane(a, up, cfg);
    let (cb, _) = classify_plane(b, up, cfg);
    classify_pair_normals((&a.normal, ca), (&b.normal, cb), cfg)
}
