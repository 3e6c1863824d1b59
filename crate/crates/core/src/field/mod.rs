//! Transfer-matrix evolution of point-to-point and plane-started partition
//! functions.

mod grid;
mod plane;
mod point;
mod source;

pub use plane::{
    plane_field_functional, required_half_width, Bump, PlaneField, PlaneSample, TestFunction, ZeroFunction,
    MAX_PLANE_SITES,
};
pub use point::{run_until_overshoot, Overshoot, PolymerField};
pub use source::{EnvSource, HashedEnv, Overridden, TableEnv};
