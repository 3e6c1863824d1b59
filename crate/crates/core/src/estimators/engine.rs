//! The replica engine: independent polymers in independent environments.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::EnvModel;
use crate::error::{Error, Result};
use crate::field::{HashedEnv, PolymerField};
use crate::walk::WalkKernel;

/// What every replica of a run records.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub kernel: WalkKernel,
    pub model: EnvModel,
    pub beta: f64,
    pub master_seed: u64,
    /// Horizon `N`.
    pub n_max: u32,
    /// Overshoot levels `A > 1`, increasing.
    pub a_grid: Vec<f64>,
    /// Times at which `log W_n` is recorded, increasing and `<= n_max`.
    pub time_grid: Vec<u32>,
    /// Stop a replica once every level is hit and every grid time is passed.
    /// Suprema are then taken over the shorter run only.
    pub stop_after_hits: bool,
}

impl EngineConfig {
    pub fn new(kernel: WalkKernel, model: EnvModel, beta: f64, master_seed: u64, n_max: u32) -> Self {
        EngineConfig {
            kernel,
            model,
            beta,
            master_seed,
            n_max,
            a_grid: Vec::new(),
            time_grid: Vec::new(),
            stop_after_hits: false,
        }
    }

    pub fn with_levels(mut self, a_grid: Vec<f64>) -> Self {
        self.a_grid = a_grid;
        self
    }

    pub fn with_times(mut self, time_grid: Vec<u32>) -> Self {
        self.time_grid = time_grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(
                "run.beta",
                format!("must be a finite value >= 0, got {}", self.beta),
            ));
        }
        if self.n_max < 1 {
            return Err(Error::invalid("field.nmax", "need N >= 1"));
        }
        check_levels(&self.a_grid)?;
        if self.time_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("run.times", "time grid must be strictly increasing"));
        }
        if self.time_grid.last().is_some_and(|&t| t > self.n_max) {
            return Err(Error::invalid("run.times", "time grid extends past N"));
        }
        Ok(())
    }

    pub fn meta(&self) -> SummaryMeta {
        SummaryMeta {
            master_seed: self.master_seed,
            beta: self.beta,
            n_max: self.n_max,
            a_grid: self.a_grid.clone(),
            time_grid: self.time_grid.clone(),
        }
    }
}

pub(crate) fn check_levels(a_grid: &[f64]) -> Result<()> {
    if a_grid.iter().any(|&a| !(a > 1.0) || !a.is_finite()) {
        return Err(Error::invalid("run.A", "every level must be a finite value > 1"));
    }
    if a_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("run.A", "levels must be strictly increasing"));
    }
    Ok(())
}

/// First passage of `W_n` above a level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitRecord {
    pub tau: u32,
    pub log_w: f64,
    /// `max_x mu_tau(x)`.
    pub max_mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub replica: u64,
    /// Last time evolved (`N` unless the run stopped early).
    pub steps: u32,
    /// `log sup_{n <= steps} W_n`.
    pub log_sup_w: f64,
    /// `log sup_{n <= steps, x} What_n(x)`.
    pub log_sup_hat_w: f64,
    /// One entry per level; `None` when censored.
    pub hits: Vec<Option<HitRecord>>,
    /// `log W_n` at the grid times.
    pub log_w_at: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMeta {
    pub master_seed: u64,
    pub beta: f64,
    pub n_max: u32,
    pub a_grid: Vec<f64>,
    pub time_grid: Vec<u32>,
}

/// Replica records in increasing replica-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSummary {
    pub meta: SummaryMeta,
    pub records: Vec<ReplicaRecord>,
}

impl ReplicaSummary {
    pub fn empty(meta: SummaryMeta) -> Self {
        ReplicaSummary {
            meta,
            records: Vec::new(),
        }
    }

    pub fn replicas(&self) -> usize {
        self.records.len()
    }

    /// Union of two summaries of the same run. Records are kept sorted by
    /// replica id, so any merge order yields the same summary.
    pub fn merge(mut self, other: ReplicaSummary) -> Result<ReplicaSummary> {
        if self.meta != other.meta {
            return Err(Error::invalid(
                "merge",
                "summaries come from different run configurations",
            ));
        }
        let mut merged = Vec::with_capacity(self.records.len() + other.records.len());
        let mut a = std::mem::take(&mut self.records).into_iter().peekable();
        let mut b = other.records.into_iter().peekable();
        loop {
            let take_a = match (a.peek(), b.peek()) {
                (Some(x), Some(y)) => {
                    if x.replica == y.replica {
                        return Err(Error::invalid("merge", format!("replica {} appears twice", x.replica)));
                    }
                    x.replica < y.replica
                }
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            merged.push(if take_a { a.next() } else { b.next() }.unwrap());
        }
        self.records = merged;
        Ok(self)
    }

    pub fn sup_w(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.log_sup_w.exp()).collect()
    }

    pub fn sup_hat_w(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.log_sup_hat_w.exp()).collect()
    }

    /// `W_n` across replicas at the `i`-th grid time.
    pub fn w_at(&self, i: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.log_w_at[i].exp()).collect()
    }
}

/// Runs replica `id` of `cfg`.
pub fn run_replica(cfg: &EngineConfig, id: u64) -> Result<ReplicaRecord> {
    let env = HashedEnv::for_replica(cfg.model, cfg.master_seed, id);
    let mut field = PolymerField::init_point(&cfg.kernel, &cfg.model, cfg.beta)?;
    let log_a: Vec<f64> = cfg.a_grid.iter().map(|a| a.ln()).collect();
    let mut rec = ReplicaRecord {
        replica: id,
        steps: 0,
        log_sup_w: 0.0,
        log_sup_hat_w: 0.0,
        hits: vec![None; log_a.len()],
        log_w_at: vec![f64::NAN; cfg.time_grid.len()],
    };
    let mut next_time = 0;
    let mut pending_hits = log_a.len();
    if cfg.time_grid.first() == Some(&0) {
        rec.log_w_at[0] = 0.0;
        next_time = 1;
    }
    while field.time() < cfg.n_max {
        if cfg.stop_after_hits && pending_hits == 0 && next_time == cfg.time_grid.len() {
            break;
        }
        field.evolve_step(&env)?;
        let t = field.time();
        let lw = field.log_total_mass();
        rec.log_sup_w = rec.log_sup_w.max(lw);
        rec.log_sup_hat_w = rec.log_sup_hat_w.max(field.log_max_point_to_point());
        for (h, &la) in rec.hits.iter_mut().zip(&log_a) {
            if h.is_none() && lw >= la {
                *h = Some(HitRecord {
                    tau: t,
                    log_w: lw,
                    max_mu: field.max_endpoint_mass(),
                });
                pending_hits -= 1;
            }
        }
        if next_time < cfg.time_grid.len() && cfg.time_grid[next_time] == t {
            rec.log_w_at[next_time] = lw;
            next_time += 1;
        }
    }
    rec.steps = field.time();
    Ok(rec)
}

/// Runs the replicas `ids` in parallel on the current rayon pool and returns
/// them in id order.
pub fn simulate(cfg: &EngineConfig, ids: Range<u64>) -> Result<ReplicaSummary> {
    cfg.validate()?;
    let records = ids
        .into_par_iter()
        .map(|id| run_replica(cfg, id))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicaSummary {
        meta: cfg.meta(),
        records,
    })
}

/// `R` replicas recording `sup_{n <= N} W_n` and `sup_{n <= N, x} What_n(x)`.
pub fn simulate_suprema(
    kernel: &WalkKernel,
    model: &EnvModel,
    beta: f64,
    n_max: u32,
    replicas: u64,
    master_seed: u64,
) -> Result<ReplicaSummary> {
    if replicas < 1 {
        return Err(Error::invalid("run.R", "need R >= 1"));
    }
    let cfg = EngineConfig::new(kernel.clone(), *model, beta, master_seed, n_max);
    simulate(&cfg, 0..replicas)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn srw3() -> WalkKernel {
        WalkKernel::srw(3).unwrap()
    }

    #[test]
    fn no_disorder_means_unit_suprema() {
        let s = simulate_suprema(&srw3(), &EnvModel::gaussian(), 0.0, 6, 5, 1).unwrap();
        assert!(s.sup_w().iter().all(|&w| w == 1.0));
        assert!(s.sup_hat_w().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn point_to_point_supremum_is_dominated() {
        let s = simulate_suprema(&srw3(), &EnvModel::gaussian(), 0.6, 10, 20, 2).unwrap();
        for r in &s.records {
            assert!(r.log_sup_hat_w <= r.log_sup_w + 1e-12);
        }
    }

    #[test]
    fn more_replicas_keep_the_first_records() {
        let m = EnvModel::gaussian();
        let a = simulate_suprema(&srw3(), &m, 0.5, 8, 6, 3).unwrap();
        let b = simulate_suprema(&srw3(), &m, 0.5, 8, 12, 3).unwrap();
        assert_eq!(a.records[..], b.records[..6]);
    }

    #[test]
    fn merge_is_order_independent() {
        let cfg = EngineConfig::new(srw3(), EnvModel::gaussian(), 0.5, 4, 6)
            .with_levels(vec![1.2, 2.0])
            .with_times(vec![0, 3, 6]);
        let all = simulate(&cfg, 0..9).unwrap();
        let a = simulate(&cfg, 0..3).unwrap();
        let b = simulate(&cfg, 3..5).unwrap();
        let c = simulate(&cfg, 5..9).unwrap();
        let left = a.clone().merge(b.clone()).unwrap().merge(c.clone()).unwrap();
        let right = c.clone().merge(a.clone().merge(b.clone()).unwrap()).unwrap();
        assert_eq!(left, all);
        assert_eq!(right, all);
        assert!(a.clone().merge(a).is_err());
    }

    #[test]
    fn hits_overshoot_their_levels() {
        let cfg = EngineConfig::new(srw3(), EnvModel::gaussian(), 0.9, 5, 15).with_levels(vec![1.5, 3.0]);
        let s = simulate(&cfg, 0..30).unwrap();
        let mut any = false;
        for r in &s.records {
            for (h, a) in r.hits.iter().zip(&cfg.a_grid) {
                if let Some(h) = h {
                    any = true;
                    assert!(h.log_w >= a.ln());
                    assert!(h.tau >= 1);
                }
            }
            if let (Some(lo), Some(hi)) = (r.hits[0], r.hits[1]) {
                assert!(lo.tau <= hi.tau);
            }
        }
        assert!(any);
    }

    #[test]
    fn grid_times_match_a_direct_run() {
        let k = srw3();
        let m = EnvModel::gaussian();
        let cfg = EngineConfig::new(k.clone(), m, 0.4, 8, 7).with_times(vec![2, 7]);
        let rec = run_replica(&cfg, 3).unwrap();
        let env = HashedEnv::for_replica(m, 8, 3);
        let mut f = PolymerField::init_point(&k, &m, 0.4).unwrap();
        for _ in 0..7 {
            f.evolve_step(&env).unwrap();
            if f.time() == 2 {
                assert_eq!(rec.log_w_at[0], f.log_total_mass());
            }
        }
        assert_eq!(rec.log_w_at[1], f.log_total_mass());
    }

    #[test]
    fn bad_grids_are_rejected() {
        let cfg = EngineConfig::new(srw3(), EnvModel::gaussian(), 0.4, 8, 7);
        assert!(simulate(&cfg.clone().with_times(vec![8]), 0..1).is_err());
        assert!(simulate(&cfg.clone().with_levels(vec![2.0, 1.5]), 0..1).is_err());
        assert!(simulate(&cfg.with_levels(vec![1.0]), 0..1).is_err());
    }
}
