//! Variance scaling of the fluctuation field `X_n(f)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::env::EnvModel;
use crate::error::{Error, Result};
use crate::field::{plane_field_functional, required_half_width, HashedEnv, PlaneSample, TestFunction};
use crate::numeric::weighted_linear_fit;
use crate::rng::{tag, StreamKey};
use crate::walk::WalkKernel;

/// Environment of sample `replica` at horizon `n`.
pub fn plane_env(model: EnvModel, master_seed: u64, n: u32, replica: u64) -> HashedEnv {
    let key = StreamKey::new(master_seed)
        .child(tag::PLANE_ENVIRONMENT)
        .child(n as u64)
        .replica(replica);
    HashedEnv::new(model, key)
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceRow {
    pub n: u32,
    pub samples: usize,
    pub mean: f64,
    pub variance: f64,
    pub variance_se: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FluctuationScaling {
    pub rows: Vec<VarianceRow>,
    /// Weighted least squares of `log Var` on `log n`; absent when some variance is 0.
    pub fit: Option<SlopeFit>,
    /// `-(d - 2) / 2`, the slope when `W` is bounded in `L^2`.
    pub predicted_slope: f64,
    /// `-slope / 2`.
    pub xi_hat: Option<f64>,
    /// `(d - 2) / 4`.
    pub xi_l2: f64,
    /// The grid spans less than a decade.
    pub short_grid: bool,
}

/// Draws `replicas` samples of `X_n(f)` at horizon `n`.
pub fn fluctuation_samples(
    kernel: &WalkKernel,
    model: &EnvModel,
    beta: f64,
    f: &dyn TestFunction,
    n: u32,
    replicas: std::ops::Range<u64>,
    master_seed: u64,
) -> Result<Vec<PlaneSample>> {
    let half = required_half_width(kernel, n, f);
    replicas
        .into_par_iter()
        .map(|id| {
            let env = plane_env(*model, master_seed, n, id);
            plane_field_functional(kernel, model, beta, n, half, f, &env)
        })
        .collect()
}

pub fn variance_row(n: u32, samples: &[PlaneSample]) -> VarianceRow {
    let r = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.fluctuation).collect();
    let mean = xs.iter().sum::<f64>() / r;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / r;
    let variance = if r > 1.0 { m2 * r / (r - 1.0) } else { 0.0 };
    VarianceRow {
        n,
        samples: samples.len(),
        mean,
        variance,
        variance_se: ((m4 - m2 * m2).max(0.0) / r).sqrt(),
    }
}

/// Fits the log-log slope of `Var X_n(f)` across the grid rows.
pub fn scaling_fit(dim: usize, rows: Vec<VarianceRow>) -> Result<FluctuationScaling> {
    if rows.len() < 3 {
        return Err(Error::invalid(
            "run.ngrid",
            "the slope fit needs at least three grid points",
        ));
    }
    let lo = rows.iter().map(|r| r.n).min().unwrap() as f64;
    let hi = rows.iter().map(|r| r.n).max().unwrap() as f64;
    let fit = if rows.iter().all(|r| r.variance > 0.0 && r.variance_se > 0.0) {
        let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.variance.ln()).collect();
        let w: Vec<f64> = rows.iter().map(|r| (r.variance / r.variance_se).powi(2)).collect();
        let (slope, intercept, slope_se) = weighted_linear_fit(&xs, &ys, &w);
        Some(SlopeFit {
            slope,
            slope_se,
            intercept,
        })
    } else {
        None
    };
    let d = dim as f64;
    Ok(FluctuationScaling {
        rows,
        xi_hat: fit.map(|f| -f.slope / 2.0),
        fit,
        predicted_slope: -(d - 2.0) / 2.0,
        xi_l2: (d - 2.0) / 4.0,
        short_grid: hi < 10.0 * lo,
    })
}

/// Per-`n` variance of `X_n(f)` over `R` samples and its log-log slope.
#[allow(clippy::too_many_arguments)]
pub fn fluctuation_scaling(
    kernel: &WalkKernel,
    model: &EnvModel,
    beta: f64,
    f: &dyn TestFunction,
    n_grid: &[u32],
    replicas: u64,
    master_seed: u64,
) -> Result<FluctuationScaling> {
    if n_grid.len() < 3 {
        return Err(Error::invalid(
            "run.ngrid",
            "the slope fit needs at least three grid points",
        ));
    }
    if replicas < 2 {
        return Err(Error::invalid("run.R", "need at least two samples per n"));
    }
    let mut rows = Vec::new();
    for &n in n_grid {
        let s = fluctuation_samples(kernel, model, beta, f, n, 0..replicas, master_seed)?;
        rows.push(variance_row(n, &s));
    }
    scaling_fit(kernel.dim(), rows)
}
