//! Estimators conditioned on overshoot events, and the tail supermultiplicativity check.

use serde::Serialize;

use super::engine::{check_levels, simulate, EngineConfig, ReplicaSummary};
use crate::env::EnvModel;
use crate::error::{Error, Result};
use crate::walk::WalkKernel;

/// One row of the overshoot table. Conditional fields are `None` without hits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OvershootRow {
    pub a: f64,
    pub n_max: u32,
    pub hits: usize,
    pub censored: usize,
    pub hit_prob: f64,
    pub hit_prob_se: f64,
    /// `E[(W_tau / A)^p | tau_A <= n_max]`.
    pub moment: Option<f64>,
    pub moment_se: Option<f64>,
}

/// Tabulates hit probabilities and normalized overshoot moments per level.
pub fn overshoot_table(summary: &ReplicaSummary, p: f64) -> Result<Vec<OvershootRow>> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::invalid("run.p", format!("need a finite p >= 1, got {p}")));
    }
    let r = summary.replicas();
    if r == 0 {
        return Err(Error::invalid("run.R", "empty summary"));
    }
    let rows = summary
        .meta
        .a_grid
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let vals: Vec<f64> = summary
                .records
                .iter()
                .filter_map(|rec| rec.hits[i])
                .map(|h| ((h.log_w - a.ln()) * p).exp())
                .collect();
            let hits = vals.len();
            let q = hits as f64 / r as f64;
            let (moment, moment_se) = match hits {
                0 => (None, None),
                1 => (Some(vals[0]), None),
                _ => {
                    let (m, se) = crate::numeric::mean_se(&vals);
                    (Some(m), Some(se))
                }
            };
            OvershootRow {
                a,
                n_max: summary.meta.n_max,
                hits,
                censored: r - hits,
                hit_prob: q,
                hit_prob_se: (q * (1.0 - q) / r as f64).sqrt(),
                moment,
                moment_se,
            }
        })
        .collect();
    Ok(rows)
}

/// Simulates `R` replicas up to `n_max` and tabulates overshoots at every level.
#[allow(clippy::too_many_arguments)]
pub fn overshoot_moments(
    kernel: &WalkKernel,
    model: &EnvModel,
    beta: f64,
    a_grid: &[f64],
    p: f64,
    replicas: u64,
    n_max: u32,
    master_seed: u64,
) -> Result<Vec<OvershootRow>> {
    check_levels(a_grid)?;
    let mut cfg = EngineConfig::new(kernel.clone(), *model, beta, master_seed, n_max).with_levels(a_grid.to_vec());
    cfg.stop_after_hits = true;
    overshoot_table(&simulate(&cfg, 0..replicas)?, p)
}

/// Verdict of the bounded-overshoot property on a level grid: no conditional
/// moment exceeds twice the smallest one, and the moments do not increase
/// monotonically along the whole grid.
#[derive(Debug, Clone, Serialize)]
pub struct BoundednessVerdict {
    pub empty_levels: Vec<f64>,
    pub max_over_min: Option<f64>,
    pub monotone_increase: bool,
    pub holds: bool,
}

pub fn overshoot_boundedness(rows: &[OvershootRow]) -> BoundednessVerdict {
    let empty_levels: Vec<f64> = rows.iter().filter(|r| r.moment.is_none()).map(|r| r.a).collect();
    let m: Vec<f64> = rows.iter().filter_map(|r| r.moment).collect();
    if !empty_levels.is_empty() || m.is_empty() {
        return BoundednessVerdict {
            empty_levels,
            max_over_min: None,
            monotone_increase: false,
            holds: false,
        };
    }
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let monotone_increase = m.len() > 1 && m.windows(2).all(|w| w[1] > w[0]);
    BoundednessVerdict {
        empty_levels,
        max_over_min: Some(hi / lo),
        monotone_increase,
        holds: hi <= 2.0 * lo && !monotone_increase,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalizationRow {
    pub u: f64,
    pub delta: f64,
    pub n_max: u32,
    pub hits: usize,
    pub censored: usize,
    /// `P(max_x mu_{tau_u}(x) >= delta | tau_u <= n_max)`.
    pub frequency: Option<f64>,
    pub frequency_se: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Localization {
    pub rows: Vec<LocalizationRow>,
    /// All observed `max_x mu_{tau_u}(x)`, per level, in replica order.
    pub max_mu: Vec<(f64, Vec<f64>)>,
}

/// Conditional localization frequencies from a summary whose levels are the `u` grid.
pub fn localization_table(summary: &ReplicaSummary, delta_grid: &[f64]) -> Result<Localization> {
    if delta_grid.iter().any(|&d| !(d > 0.0 && d <= 1.0)) {
        return Err(Error::invalid("run.delta", "every delta must lie in (0, 1]"));
    }
    let r = summary.replicas();
    let mut rows = Vec::new();
    let mut max_mu = Vec::new();
    for (i, &u) in summary.meta.a_grid.iter().enumerate() {
        let mus: Vec<f64> = summary
            .records
            .iter()
            .filter_map(|rec| rec.hits[i])
            .map(|h| h.max_mu)
            .collect();
        let hits = mus.len();
        for &delta in delta_grid {
            let (frequency, frequency_se) = if hits == 0 {
                (None, None)
            } else {
                let f = mus.iter().filter(|&&m| m >= delta).count() as f64 / hits as f64;
                (Some(f), Some((f * (1.0 - f) / hits as f64).sqrt()))
            };
            rows.push(LocalizationRow {
                u,
                delta,
                n_max: summary.meta.n_max,
                hits,
                censored: r - hits,
                frequency,
                frequency_se,
            });
        }
        max_mu.push((u, mus));
    }
    Ok(Localization { rows, max_mu })
}

#[allow(clippy::too_many_arguments)]
pub fn endpoint_localization(
    kernel: &WalkKernel,
    model: &EnvModel,
    beta: f64,
    u_grid: &[f64],
    delta_grid: &[f64],
    replicas: u64,
    n_max: u32,
    master_seed: u64,
) -> Result<Localization> {
    check_levels(u_grid)?;
    let mut cfg = EngineConfig::new(kernel.clone(), *model, beta, master_seed, n_max).with_levels(u_grid.to_vec());
    cfg.stop_after_hits = true;
    localization_table(&simulate(&cfg, 0..replicas)?, delta_grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupermultiplicativityCell {
    pub u: f64,
    pub v: f64,
    pub zeta_u: f64,
    pub zeta_v: f64,
    pub zeta_uv: f64,
    /// `zeta(uv) - zeta(u) zeta(v)`.
    pub difference: f64,
    pub sigma: f64,
    /// No replica exceeded `u` or `v`.
    pub empty: bool,
    /// `difference < -3 sigma` on a nonempty cell.
    pub violation: bool,
}

/// Empirical survival function `zeta(u) = P(sup What > u)`.
pub fn zeta(summary: &ReplicaSummary, u: f64) -> f64 {
    let lu = u.ln();
    let n = summary.records.iter().filter(|r| r.log_sup_hat_w > lu).count();
    n as f64 / summary.replicas() as f64
}

/// Checks `zeta(uv) >= zeta(u) zeta(v)` on all pairs of `u_grid`.
pub fn supermultiplicativity_check(summary: &ReplicaSummary, u_grid: &[f64]) -> Result<Vec<SupermultiplicativityCell>> {
    if u_grid.iter().any(|&u| !(u > 1.0) || !u.is_finite()) {
        return Err(Error::invalid("run.u", "every u must be a finite value > 1"));
    }
    if summary.replicas() == 0 {
        return Err(Error::invalid("run.R", "empty summary"));
    }
    let r = summary.replicas() as f64;
    let var = |z: f64| z * (1.0 - z) / r;
    let mut cells = Vec::new();
    for &u in u_grid {
        for &v in u_grid {
            let (zu, zv, zuv) = (zeta(summary, u), zeta(summary, v), zeta(summary, u * v));
            let difference = zuv - zu * zv;
            let sigma = (var(zuv) + zv * zv * var(zu) + zu * zu * var(zv)).sqrt();
            let empty = zu == 0.0 || zv == 0.0;
            cells.push(SupermultiplicativityCell {
                u,
                v,
                zeta_u: zu,
                zeta_v: zv,
                zeta_uv: zuv,
                difference,
                sigma,
                empty,
                violation: !empty && difference < -3.0 * sigma,
            });
        }
    }
    Ok(cells)
}
