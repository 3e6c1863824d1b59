//! Moment growth of `W_n` and the comparison with the exact second moment.

use serde::Serialize;

use super::engine::{simulate, EngineConfig, ReplicaSummary};
use crate::env::EnvModel;
use crate::error::{Error, Result};
use crate::exact::pinning_series;
use crate::numeric::mean_se;
use crate::walk::{first_collision_law, return_probs, RenewalTable, WalkKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateVerdict {
    IndistinguishableFromZero,
    AboveZero,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthRow {
    pub n: u32,
    /// Monte Carlo mean of `W_n^p`.
    pub moment: f64,
    pub moment_se: f64,
    /// `(1/n) log` of the Monte Carlo mean.
    pub rate: f64,
    pub rate_se: f64,
    /// `(1/n) log E[W_n^2]` from the pinning recursion, for `p = 2`.
    pub exact_rate: Option<f64>,
    /// Ratio of the moment estimates on the two halves of the sample.
    pub half_sample_ratio: f64,
    /// Largest single contribution to the sample sum of `W_n^p`.
    pub max_share: f64,
    pub verdict: RateVerdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentGrowth {
    pub p: f64,
    pub replicas: usize,
    pub rows: Vec<GrowthRow>,
    /// Exponential growth rate of the pinning partition function, for `p = 2`.
    pub exact_asymptotic_rate: Option<f64>,
    /// Monte Carlo moments of heavy-tailed variables are biased low.
    pub warning: &'static str,
}

const LOW_BIAS_WARNING: &str = "Monte Carlo moments of heavy-tailed W_n are biased low; treat rates as lower bounds";

/// Free energy `F` of the pinning model: the root of `chi sum_m K_m e^{-F m} = 1`,
/// or 0 when `chi sum_m K_m <= 1`. `K` is truncated at the table horizon.
pub fn pinning_free_energy(table: &RenewalTable, chi: f64) -> f64 {
    let k = table.k();
    let g = |f: f64| chi * (1..k.len()).map(|m| k[m] * (-f * m as f64).exp()).sum::<f64>() - 1.0;
    if g(0.0) <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while g(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Growth-rate curve of `E[W_n^p]` from a summary whose time grid is the `n` grid.
pub fn growth_from_summary(
    summary: &ReplicaSummary,
    p: f64,
    kernel: &WalkKernel,
    model: &EnvModel,
) -> Result<MomentGrowth> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::invalid("run.p", format!("need a finite p >= 1, got {p}")));
    }
    let grid = &summary.meta.time_grid;
    let r = summary.replicas();
    if r < 2 {
        return Err(Error::invalid("run.R", "need at least two replicas"));
    }
    let exact = if p == 2.0 && !grid.is_empty() {
        let horizon = (*grid.last().unwrap() as usize).max(1000);
        let table = first_collision_law(&return_probs(kernel, horizon)?)?;
        let chi = model.chi(summary.meta.beta)?;
        Some((pinning_series(&table, chi)?, pinning_free_energy(&table, chi)))
    } else {
        None
    };
    let mut rows = Vec::new();
    for (i, &n) in grid.iter().enumerate() {
        let wp: Vec<f64> = summary.records.iter().map(|rec| (p * rec.log_w_at[i]).exp()).collect();
        let (m, se) = mean_se(&wp);
        let half = r / 2;
        let (m1, _) = mean_se(&wp[..half]);
        let (m2, _) = mean_se(&wp[half..]);
        let total: f64 = wp.iter().sum();
        let nn = (n as f64).max(1.0);
        let rate = m.ln() / nn;
        let rate_se = se / m / nn;
        rows.push(GrowthRow {
            n,
            moment: m,
            moment_se: se,
            rate,
            rate_se,
            exact_rate: exact.as_ref().map(|(f, _)| f[n as usize].ln() / nn),
            half_sample_ratio: m1 / m2,
            max_share: wp.iter().copied().fold(0.0, f64::max) / total,
            verdict: if rate > 3.0 * rate_se {
                RateVerdict::AboveZero
            } else {
                RateVerdict::IndistinguishableFromZero
            },
        });
    }
    Ok(MomentGrowth {
        p,
        replicas: r,
        rows,
        exact_asymptotic_rate: exact.map(|(_, f)| f),
        warning: LOW_BIAS_WARNING,
    })
}

/// Simulates `R` replicas and estimates `(1/n) log E[W_n^p]` on `n_grid`.
#[allow(clippy::too_many_arguments)]
pub fn moment_growth(
    kernel: &WalkKernel,
    model: &EnvModel,
    beta: f64,
    p: f64,
    n_grid: &[u32],
    replicas: u64,
    master_seed: u64,
) -> Result<MomentGrowth> {
    let n_max = n_grid.iter().copied().max().unwrap_or(0);
    let cfg = EngineConfig::new(kernel.clone(), *model, beta, master_seed, n_max).with_times(n_grid.to_vec());
    growth_from_summary(&simulate(&cfg, 0..replicas)?, p, kernel, model)
}

/// Monte Carlo `E[W^2]` against an exact value, with `sigma` from the
/// empirical fourth moment.
#[derive(Debug, Clone, Serialize)]
pub struct SecondMomentCheck {
    pub estimate: f64,
    pub exact: f64,
    pub sigma: f64,
    /// `(estimate - exact) / sigma`.
    pub z: f64,
    /// Fourth-moment estimates on the two halves of the sample.
    pub fourth_halves: (f64, f64),
    /// The halves differ by more than a factor 2, so `sigma` is not trustworthy.
    pub unstable: bool,
}

pub fn second_moment_check(w: &[f64], exact: f64) -> Result<SecondMomentCheck> {
    if w.len() < 4 {
        return Err(Error::invalid("run.R", "need at least four samples"));
    }
    let n = w.len() as f64;
    let m2 = w.iter().map(|x| x * x).sum::<f64>() / n;
    let m4 = w.iter().map(|x| x.powi(4)).sum::<f64>() / n;
    let sigma = ((m4 - m2 * m2).max(0.0) / n).sqrt();
    let half = w.len() / 2;
    let fourth = |s: &[f64]| s.iter().map(|x| x.powi(4)).sum::<f64>() / s.len() as f64;
    let (a, b) = (fourth(&w[..half]), fourth(&w[half..]));
    Ok(SecondMomentCheck {
        estimate: m2,
        exact,
        sigma,
        z: (m2 - exact) / sigma,
        fourth_halves: (a, b),
        unstable: a.max(b) > 2.0 * a.min(b),
    })
}
