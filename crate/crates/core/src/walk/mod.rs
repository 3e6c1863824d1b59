//! Reference-walk kernels and the renewal structure of two-walk collisions.

mod kernel;
mod renewal;
mod returns;

pub use kernel::{KernelKind, Site, WalkKernel, MAX_TRUNCATED_SITES, TRUNCATION_TARGET};
pub use renewal::{first_collision_law, RenewalTable, RENEWAL_TOL};
pub use returns::{
    collision_probability, collision_probability_with, fitted_tail, green_on_grid, green_series_estimate,
    return_prob_series, return_probs, return_probs_box_dp, srw_return_probs, Collision, GreenMethod,
    DEFAULT_QUAD_POINTS,
};
