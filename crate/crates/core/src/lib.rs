//! Plane-based pairwise registration of indoor 3D views.
//!
//! Planes are detected in each view, classified against the Up direction,
//! matched across views by pairs, and the rigid motion is estimated with its
//! degrees of freedom split between rotation, horizontal translation and
//! vertical translation.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod detect;
pub mod error;
pub mod eval;
pub mod geom;
pub mod hull;
pub mod io;
pub mod motion;
pub mod pair_match;
pub mod par;
pub mod synth;
pub mod toy_bench;
pub mod tracking;

pub use error::{Error, Result};
pub use geom::{Plane, RigidMotion, UnitVec3, Vec3, WorldFrame};
pub use par::Execution;
