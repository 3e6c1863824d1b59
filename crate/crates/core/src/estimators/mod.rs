//! Monte Carlo estimators built on the replica engine.

mod conditional;
mod engine;
mod fluct;
mod moments;
mod tail;

pub use conditional::{
    endpoint_localization, localization_table, overshoot_boundedness, overshoot_moments, overshoot_table,
    supermultiplicativity_check, zeta, BoundednessVerdict, Localization, LocalizationRow, OvershootRow,
    SupermultiplicativityCell,
};
pub use engine::{
    run_replica, simulate, simulate_suprema, EngineConfig, HitRecord, ReplicaRecord, ReplicaSummary, SummaryMeta,
};
pub use fluct::{
    fluctuation_samples, fluctuation_scaling, plane_env, scaling_fit, variance_row, FluctuationScaling, SlopeFit,
    VarianceRow,
};
pub use moments::{
    growth_from_summary, moment_growth, pinning_free_energy, second_moment_check, GrowthRow, MomentGrowth, RateVerdict,
    SecondMomentCheck,
};
pub use tail::{default_k, hill_tail, HillPoint, TailFit};
