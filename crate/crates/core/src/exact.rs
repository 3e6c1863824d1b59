//! Exact oracles: path and environment enumeration, integer replica moments,
//! the pinning recursion for the second moment, and the `beta_2` root.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::env::EnvModel;
use crate::error::{Error, Result};
use crate::field::EnvSource;
use crate::numeric::{linear_fit, LogSumExp};
use crate::walk::{collision_probability, Collision, RenewalTable, Site, WalkKernel};

/// Hard caps on exhaustive enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnumerationBudget {
    /// Paths, path tuples or replica-state transitions.
    pub max_path_tuples: f64,
    /// Environment configurations.
    pub max_env_states: f64,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget {
            max_path_tuples: 1e8,
            max_env_states: 1e8,
        }
    }
}

fn annealed(model: &EnvModel, beta: f64) -> bool {
    beta == 0.0 || model.is_degenerate()
}

fn add(a: &[i64], b: &[i64]) -> Site {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `W_n` as an explicit sum over all `n`-step paths,
/// `sum_paths prod_i nu(step_i) exp(beta omega(i, path_i) - lambda)`.
pub fn exact_partition<E: EnvSource>(
    omega: &E,
    kernel: &WalkKernel,
    model: &EnvModel,
    beta: f64,
    n: u32,
    budget: &EnumerationBudget,
) -> Result<f64> {
    let lambda = model.log_mgf(beta)?;
    if annealed(model, beta) || n == 0 {
        return Ok(1.0);
    }
    let paths = (kernel.support_size() as f64).powi(n as i32);
    if paths > budget.max_path_tuples {
        return Err(Error::budget("exact_partition paths", paths, budget.max_path_tuples));
    }
    let log_mass: Vec<f64> = kernel.masses().iter().map(|m| m.ln()).collect();
    let mut acc = LogSumExp::new();
    #[allow(clippy::too_many_arguments)]
    fn dfs<E: EnvSource>(
        omega: &E,
        kernel: &WalkKernel,
        log_mass: &[f64],
        beta: f64,
        lambda: f64,
        n: u32,
        pos: &[i64],
        t: u32,
        logw: f64,
        acc: &mut LogSumExp,
    ) -> Result<()> {
        if t == n {
            acc.push(logw);
            return Ok(());
        }
        for (s, lm) in kernel.steps().iter().zip(log_mass) {
            let next = add(pos, s);
            let w = logw + lm + beta * omega.omega(t + 1, &next)? - lambda;
            dfs(omega, kernel, log_mass, beta, lambda, n, &next, t + 1, w, acc)?;
        }
        Ok(())
    }
    let origin = vec![0; kernel.dim()];
    dfs(omega, kernel, &log_mass, beta, lambda, n, &origin, 0, 0.0, &mut acc)?;
    Ok(acc.value().exp())
}

/// Sites reachable at each time `0..=n`.
fn reachable(kernel: &WalkKernel, n: u32) -> Vec<Vec<Site>> {
    let mut layers = vec![vec![vec![0; kernel.dim()]]];
    for _ in 0..n {
        let prev = layers.last().unwrap();
        let next: BTreeSet<Site> = prev
            .iter()
            .flat_map(|x| kernel.steps().iter().map(move |s| add(x, s)))
            .collect();
        layers.push(next.into_iter().collect());
    }
    layers
}

/// The exact law of `W_n` under a two-point environment, as
/// `(value, probability)` pairs sorted by value. Values within `1e-12`
/// (relative) of each other are merged.
pub fn exact_law_of_wn(
    model: &EnvModel,
    kernel: &WalkKernel,
    beta: f64,
    n: u32,
    budget: &EnumerationBudget,
) -> Result<Vec<(f64, f64)>> {
    let EnvModel::TwoPoint { a, b, p } = *model else {
        return Err(Error::invalid(
            "env.family",
            "the exact law of W_n needs a two-point environment",
        ));
    };
    let lambda = model.log_mgf(beta)?;
    if annealed(model, beta) || n == 0 {
        return Ok(vec![(1.0, 1.0)]);
    }
    let atoms: Vec<(f64, f64)> = [(a, p), (b, 1.0 - p)].into_iter().filter(|&(_, q)| q > 0.0).collect();
    let layers = reachable(kernel, n);
    let points: usize = layers[1..].iter().map(Vec::len).sum();
    let states = (atoms.len() as f64).powi(points as i32);
    if states > budget.max_env_states {
        return Err(Error::budget(
            "exact_law_of_Wn environment states",
            states,
            budget.max_env_states,
        ));
    }

    // For every layer and site: the (index in previous layer, nu) pairs feeding it.
    let mut feeds: Vec<Vec<Vec<(usize, f64)>>> = Vec::new();
    for t in 1..layers.len() {
        let index: BTreeMap<&Site, usize> = layers[t - 1].iter().enumerate().map(|(i, s)| (s, i)).collect();
        let layer_feeds = layers[t]
            .iter()
            .map(|x| {
                kernel
                    .steps()
                    .iter()
                    .zip(kernel.masses())
                    .filter_map(|(s, &m)| {
                        let y: Site = x.iter().zip(s).map(|(u, v)| u - v).collect();
                        index.get(&y).map(|&i| (i, m))
                    })
                    .collect()
            })
            .collect();
        feeds.push(layer_feeds);
    }
    let weights: Vec<f64> = atoms.iter().map(|&(w, _)| (beta * w - lambda).exp()).collect();
    let base = atoms.len();

    let mut out: Vec<(f64, f64)> = Vec::with_capacity(states as usize);
    let mut digits = vec![0usize; points];
    let mut prev = Vec::new();
    let mut cur = Vec::new();
    loop {
        let mut prob = 1.0;
        prev.clear();
        prev.push(1.0);
        let mut k = 0;
        for layer in &feeds {
            cur.clear();
            for inputs in layer {
                let d = digits[k];
                k += 1;
                prob *= atoms[d].1;
                let s: f64 = inputs.iter().map(|&(i, m)| m * prev[i]).sum();
                cur.push(weights[d] * s);
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        out.push((prev.iter().sum(), prob));
        // Next environment configuration, least significant point first.
        let mut i = 0;
        while i < points {
            digits[i] += 1;
            if digits[i] < base {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
        if i == points {
            break;
        }
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (v, q) in out {
        match merged.last_mut() {
            Some(last) if (v - last.0).abs() <= 1e-12 * v.abs().max(last.0.abs()) => last.1 += q,
            _ => merged.push((v, q)),
        }
    }
    Ok(merged)
}

/// `E[(W_n)^p]` through the replica formula
/// `E^{(p)}[exp(sum_{(i,x)} lambda(beta m_{i,x}) - p n lambda(beta))]`,
/// where `m_{i,x}` counts the replicas at `x` at time `i`. The expectation is
/// an exact dynamic program over unordered replica positions.
pub fn replica_moment(
    kernel: &WalkKernel,
    model: &EnvModel,
    beta: f64,
    p: u32,
    n: u32,
    budget: &EnumerationBudget,
) -> Result<f64> {
    if p == 0 {
        return Err(Error::invalid("run.p", "moment order must be >= 1"));
    }
    let lambda = model.log_mgf(beta)?;
    if p == 1 || n == 0 || annealed(model, beta) {
        return Ok(1.0);
    }
    let d = kernel.dim();
    let pu = p as usize;
    let steps = kernel.support_size();
    let combos = (steps as f64).powi(p as i32);
    let sites_at_n = reachable_count_bound(kernel, n);
    let states = sites_at_n.powi(p as i32).min((steps as f64).powi((p * n) as i32));
    let work = states * combos * n as f64;
    if work > budget.max_path_tuples {
        return Err(Error::budget(
            "replica_moment state transitions",
            work,
            budget.max_path_tuples,
        ));
    }
    // overlap[m] = lambda(beta m) - m lambda(beta)
    let overlap: Vec<f64> = (0..=p)
        .map(|m| Ok(model.log_mgf(beta * m as f64)? - m as f64 * lambda))
        .collect::<Result<_>>()?;

    let mut states: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    states.insert(vec![0; pu * d], 1.0);
    let mut choice = vec![0usize; pu];
    let mut next_pos: Vec<Site> = vec![vec![0; d]; pu];
    for _ in 0..n {
        let mut next: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
        for (state, &mass) in &states {
            choice.iter_mut().for_each(|c| *c = 0);
            loop {
                let mut prob = mass;
                for (j, &c) in choice.iter().enumerate() {
                    let s = &kernel.steps()[c];
                    for i in 0..d {
                        next_pos[j][i] = state[j * d + i] + s[i];
                    }
                    prob *= kernel.masses()[c];
                }
                next_pos.sort();
                let mut log_factor = 0.0;
                let mut run = 1;
                for j in 1..=pu {
                    if j < pu && next_pos[j] == next_pos[j - 1] {
                        run += 1;
                    } else {
                        log_factor += overlap[run];
                        run = 1;
                    }
                }
                let key: Vec<i64> = next_pos.iter().flatten().copied().collect();
                *next.entry(key).or_insert(0.0) += prob * log_factor.exp();

                let mut j = 0;
                while j < pu {
                    choice[j] += 1;
                    if choice[j] < steps {
                        break;
                    }
                    choice[j] = 0;
                    j += 1;
                }
                if j == pu {
                    break;
                }
            }
        }
        states = next;
    }
    Ok(states.values().sum())
}

/// Upper bound on the number of sites reachable in exactly `n` steps.
fn reachable_count_bound(kernel: &WalkKernel, n: u32) -> f64 {
    let side = (2 * kernel.max_step() * n as i64 + 1) as f64;
    side.powi(kernel.dim() as i32)
        .min((kernel.support_size() as f64).powi(n as i32))
}

fn check_chi(chi: f64) -> Result<()> {
    if !(chi >= 1.0) || !chi.is_finite() {
        return Err(Error::invalid("chi", format!("need a finite chi >= 1, got {chi}")));
    }
    Ok(())
}

/// `f(0), ..., f(N)` for the pinning recursion
/// `f(n) = Q(n) + chi sum_{m=1}^n K_m f(n-m)`, `f(0) = 1`, over the whole
/// table horizon `N`.
pub fn pinning_series(table: &RenewalTable, chi: f64) -> Result<Vec<f64>> {
    check_chi(chi)?;
    let k = table.k();
    let q = table.q();
    let mut f = vec![1.0; table.horizon() + 1];
    for n in 1..f.len() {
        let conv: f64 = (1..=n).map(|m| k[m] * f[n - m]).sum();
        f[n] = q[n] + chi * conv;
    }
    Ok(f)
}

/// `E[(W_n)^2] = f(n)` from the pinning recursion with `chi = exp(lambda(2 beta) - 2 lambda(beta))`.
pub fn second_moment_renewal(table: &RenewalTable, chi: f64, n: usize) -> Result<f64> {
    if n > table.horizon() {
        return Err(Error::invalid(
            "walk.horizon",
            format!("renewal table horizon {} is shorter than n = {n}", table.horizon()),
        ));
    }
    check_chi(chi)?;
    let k = &table.k()[..=n];
    let q = table.q();
    let mut f = vec![1.0; n + 1];
    for t in 1..=n {
        let conv: f64 = (1..=t).map(|m| k[m] * f[t - m]).sum();
        f[t] = q[t] + chi * conv;
    }
    Ok(f[n])
}

/// Upper end of the `beta_2` search.
pub const BETA2_RANGE_MAX: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Beta2Value {
    /// Root of `chi(beta) pi = 1`; zero for recurrent difference walks.
    Finite { beta2: f64 },
    /// `chi(beta) pi < 1` on the whole search range.
    InfiniteWithinRange { range_max: f64, chi_pi_at_max: f64 },
    /// No disorder, `chi = 1` identically.
    Infinite,
}

#[derive(Debug, Clone, Serialize)]
pub struct Beta2 {
    pub value: Beta2Value,
    /// `|chi(beta_2) pi - 1|` for a finite root, otherwise 0.
    pub residual: f64,
    pub collision: Collision,
}

impl Beta2 {
    pub fn finite(&self) -> Option<f64> {
        match self.value {
            Beta2Value::Finite { beta2 } => Some(beta2),
            _ => None,
        }
    }
}

/// Solves `exp(lambda(2 beta) - 2 lambda(beta)) = 1 / pi` on `[0, 16]`.
///
/// `tol` bounds both the residual `|chi pi - 1|` and the error requested
/// from the collision probability.
pub fn solve_beta2(kernel: &WalkKernel, model: &EnvModel, tol: f64) -> Result<Beta2> {
    if !(tol > 0.0) {
        return Err(Error::invalid("run.tol", "tolerance must be positive"));
    }
    let collision = collision_probability(kernel, tol.max(1e-12))?;
    let pi = collision.pi;
    if model.is_degenerate() {
        return Ok(Beta2 {
            value: Beta2Value::Infinite,
            residual: 0.0,
            collision,
        });
    }
    if collision.recurrent || pi >= 1.0 {
        return Ok(Beta2 {
            value: Beta2Value::Finite { beta2: 0.0 },
            residual: 0.0,
            collision,
        });
    }
    if pi <= 0.0 {
        return Ok(Beta2 {
            value: Beta2Value::InfiniteWithinRange {
                range_max: BETA2_RANGE_MAX,
                chi_pi_at_max: 0.0,
            },
            residual: 0.0,
            collision,
        });
    }
    let target = -pi.ln();
    let g = |b: f64| -> Result<f64> { Ok(model.log_chi(b)? - target) };
    let at_max = g(BETA2_RANGE_MAX)?;
    if at_max < 0.0 {
        return Ok(Beta2 {
            value: Beta2Value::InfiniteWithinRange {
                range_max: BETA2_RANGE_MAX,
                chi_pi_at_max: (at_max).exp(),
            },
            residual: 0.0,
            collision,
        });
    }
    // log chi is nondecreasing, so bisection on the sign of g is safe.
    let (mut lo, mut hi) = (0.0f64, BETA2_RANGE_MAX);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (glo, ghi) = (g(lo)?.abs(), g(hi)?.abs());
    let root = if glo <= ghi { lo } else { hi };
    let residual = (model.chi(root)? * pi - 1.0).abs();
    if residual > tol {
        return Err(Error::convergence(
            "solve_beta2",
            format!("bisection stalled at beta = {root} with |chi pi - 1| = {residual:e} > {tol:e}"),
        ));
    }
    Ok(Beta2 {
        value: Beta2Value::Finite { beta2: root },
        residual,
        collision,
    })
}

/// Least-squares growth exponent of the pinning partition function.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthFit {
    /// Slope of `log f(n)` against `log n`.
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    /// Slope of `log f(n)` against `log(n / log n)`; one at the critical point in `d = 4`.
    pub template_slope: f64,
    /// `|chi pi - 1|`.
    pub criticality: f64,
    /// `criticality <= 1e-8`.
    pub critical: bool,
    pub points: Vec<(usize, f64)>,
}

/// Fits the growth of `f(n) = E[(W_n)^2]` over `n_grid` at the given `chi`.
pub fn critical_growth_fit(table: &RenewalTable, chi: f64, pi: f64, n_grid: &[usize]) -> Result<GrowthFit> {
    if n_grid.len() < 3 {
        return Err(Error::invalid("run.ngrid", "need at least three grid points"));
    }
    let lo = *n_grid.iter().min().unwrap();
    let hi = *n_grid.iter().max().unwrap();
    if lo < 2 || (hi as f64) < 100.0 * lo as f64 {
        return Err(Error::invalid(
            "run.ngrid",
            format!("grid [{lo}, {hi}] must start at n >= 2 and span at least two decades"),
        ));
    }
    if hi > table.horizon() {
        return Err(Error::invalid(
            "walk.horizon",
            format!("renewal table horizon {} is shorter than {hi}", table.horizon()),
        ));
    }
    let f = pinning_series(table, chi)?;
    let points: Vec<(usize, f64)> = n_grid.iter().map(|&n| (n, f[n])).collect();
    let xs: Vec<f64> = points.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, v)| v.ln()).collect();
    let (slope, intercept, slope_se) = linear_fit(&xs, &ys);
    let xt: Vec<f64> = points.iter().map(|&(n, _)| (n as f64 / (n as f64).ln()).ln()).collect();
    let (template_slope, _, _) = linear_fit(&xt, &ys);
    let criticality = (chi * pi - 1.0).abs();
    Ok(GrowthFit {
        slope,
        slope_se,
        intercept,
        template_slope,
        criticality,
        critical: criticality <= 1e-8,
        points,
    })
}

/// Log-spaced integer grid from `lo` to `hi` (inclusive) with `per_decade` points per decade.
pub fn log_grid(lo: usize, hi: usize, per_decade: usize) -> Vec<usize> {
    let (a, b) = ((lo as f64).log10(), (hi as f64).log10());
    let k = ((b - a) * per_decade as f64).round().max(1.0) as usize;
    let mut g: Vec<usize> = (0..=k)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / k as f64).round() as usize)
        .collect();
    g.dedup();
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{HashedEnv, PolymerField, TableEnv};
    use crate::walk::{first_collision_law, return_probs};

    #[test]
    fn exact_partition_small_cases() {
        let k = WalkKernel::srw(1).unwrap();
        let model = EnvModel::two_point(-1.0, 1.0, 0.5).unwrap();
        let env = HashedEnv::for_replica(model, 4, 0);
        let b = EnumerationBudget::default();
        assert_eq!(exact_partition(&env, &k, &model, 0.0, 5, &b).unwrap(), 1.0);
        let beta = 0.7;
        let lam = model.log_mgf(beta).unwrap();
        let w1 = exact_partition(&env, &k, &model, beta, 1, &b).unwrap();
        let expected = ((beta * env.value(1, &[-1])).exp() + (beta * env.value(1, &[1])).exp()) / (2.0 * lam.exp());
        assert!((w1 - expected).abs() < 1e-14);
    }

    #[test]
    fn exact_partition_needs_every_point() {
        let k = WalkKernel::srw(1).unwrap();
        let model = EnvModel::gaussian();
        let mut t = TableEnv::new();
        t.insert(1, vec![1], 0.3);
        let err = exact_partition(&t, &k, &model, 0.5, 1, &EnumerationBudget::default()).unwrap_err();
        assert!(matches!(err, Error::MissingEnvironment { .. }));
        let small = EnumerationBudget {
            max_path_tuples: 100.0,
            max_env_states: 100.0,
        };
        assert!(matches!(
            exact_partition(&t, &k, &model, 0.5, 7, &small),
            Err(Error::Budget { .. })
        ));
    }

    #[test]
    fn exact_partition_matches_field_on_asymmetric_kernel() {
        let k = WalkKernel::finite_support(2, [(vec![1, 0], 0.2), (vec![0, 1], 0.5), (vec![-1, -1], 0.3)]).unwrap();
        let model = EnvModel::uniform(-1.0, 2.0).unwrap();
        let env = HashedEnv::for_replica(model, 10, 3);
        let mut f = PolymerField::init_point(&k, &model, 0.9).unwrap();
        for n in 1..=6 {
            f.evolve_step(&env).unwrap();
            let w = exact_partition(&env, &k, &model, 0.9, n, &EnumerationBudget::default()).unwrap();
            assert!((w - f.total_mass()).abs() <= 1e-12 * w, "{n}");
        }
    }

    #[test]
    fn field_agrees_with_path_sum_over_many_seeds() {
        let k = WalkKernel::srw(1).unwrap();
        let model = EnvModel::two_point(-0.5, 1.5, 0.6).unwrap();
        let b = EnumerationBudget::default();
        for seed in 0..100 {
            let env = HashedEnv::for_replica(model, seed, 0);
            let mut f = PolymerField::init_point(&k, &model, 0.8).unwrap();
            for n in 1..=6 {
                f.evolve_step(&env).unwrap();
                let w = exact_partition(&env, &k, &model, 0.8, n, &b).unwrap();
                assert!((w - f.total_mass()).abs() <= 1e-12 * w, "seed {seed} n {n}");
            }
        }
    }

    #[test]
    fn law_of_wn_trivial_cases() {
        let k = WalkKernel::srw(1).unwrap();
        let model = EnvModel::two_point(0.0, 1.0, 0.4).unwrap();
        let b = EnumerationBudget::default();
        assert_eq!(exact_law_of_wn(&model, &k, 0.8, 0, &b).unwrap(), vec![(1.0, 1.0)]);
        assert_eq!(exact_law_of_wn(&model, &k, 0.0, 3, &b).unwrap(), vec![(1.0, 1.0)]);
        assert!(exact_law_of_wn(&EnvModel::gaussian(), &k, 0.8, 1, &b).is_err());
    }

    #[test]
    fn law_of_wn_moments() {
        let k = WalkKernel::srw(1).unwrap();
        let model = EnvModel::two_point(-1.0, 2.0, 0.3).unwrap();
        let b = EnumerationBudget::default();
        for n in 1..=3 {
            let law = exact_law_of_wn(&model, &k, 0.6, n, &b).unwrap();
            let total: f64 = law.iter().map(|x| x.1).sum();
            let mean: f64 = law.iter().map(|x| x.0 * x.1).sum();
            let second: f64 = law.iter().map(|x| x.0 * x.0 * x.1).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!((mean - 1.0).abs() < 1e-12);
            let rep = replica_moment(&k, &model, 0.6, 2, n, &b).unwrap();
            assert!((second - rep).abs() < 1e-10 * rep, "{n}: {second} vs {rep}");
            for w in law.windows(2) {
                assert!(w[1].0 > w[0].0 * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn law_of_wn_two_steps() {
        let k = WalkKernel::srw(1).unwrap();
        let model = EnvModel::two_point(0.0, 1.0, 0.5).unwrap();
        let law = exact_law_of_wn(&model, &k, 1.0, 2, &EnumerationBudget::default()).unwrap();
        let total: f64 = law.iter().map(|x| x.1).sum();
        let mean: f64 = law.iter().map(|x| x.0 * x.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((mean - 1.0).abs() < 1e-12);
        // Five space-time points; W_2 takes fewer values than the 32 assignments.
        assert!(law.len() < 32);
    }

    #[test]
    fn replica_moment_values() {
        let b = EnumerationBudget::default();
        let model = EnvModel::gaussian();
        let k3 = WalkKernel::srw(3).unwrap();
        assert_eq!(replica_moment(&k3, &model, 0.4, 1, 5, &b).unwrap(), 1.0);
        let chi = model.chi(0.4).unwrap();
        let m = replica_moment(&k3, &model, 0.4, 2, 1, &b).unwrap();
        assert!((m - (1.0 + (chi - 1.0) / 6.0)).abs() < 1e-14);
    }

    #[test]
    fn replica_matches_renewal() {
        let b = EnumerationBudget::default();
        for d in [1, 2] {
            let k = WalkKernel::srw(d).unwrap();
            let table = first_collision_law(&return_probs(&k, 8).unwrap()).unwrap();
            for model in [EnvModel::gaussian(), EnvModel::two_point(-1.0, 1.0, 0.5).unwrap()] {
                for beta in [0.2, 0.5] {
                    let chi = model.chi(beta).unwrap();
                    for n in 0..=8 {
                        let rep = replica_moment(&k, &model, beta, 2, n, &b).unwrap();
                        let ren = second_moment_renewal(&table, chi, n as usize).unwrap();
                        assert!((rep - ren).abs() <= 1e-10 * ren, "d={d} n={n}: {rep} vs {ren}");
                    }
                }
            }
        }
    }

    #[test]
    fn third_moment_by_environment_enumeration() {
        let k = WalkKernel::srw(1).unwrap();
        let model = EnvModel::two_point(0.0, 1.0, 0.5).unwrap();
        let b = EnumerationBudget::default();
        let law = exact_law_of_wn(&model, &k, 1.1, 3, &b).unwrap();
        let third: f64 = law.iter().map(|x| x.0.powi(3) * x.1).sum();
        let rep = replica_moment(&k, &model, 1.1, 3, 3, &b).unwrap();
        assert!((third - rep).abs() < 1e-10 * rep);
    }

    #[test]
    fn renewal_second_moment_properties() {
        let k = WalkKernel::srw(3).unwrap();
        let table = first_collision_law(&return_probs(&k, 50).unwrap()).unwrap();
        assert_eq!(second_moment_renewal(&table, 1.7, 0).unwrap(), 1.0);
        let r1 = table.r()[1];
        let f1 = second_moment_renewal(&table, 1.7, 1).unwrap();
        assert!((f1 - (1.0 + 0.7 * r1)).abs() < 1e-15);
        let ones = pinning_series(&table, 1.0).unwrap();
        assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let f = pinning_series(&table, 1.3).unwrap();
        assert!(f.windows(2).all(|w| w[1] >= w[0]));
        assert!(second_moment_renewal(&table, 1.3, 51).is_err());
        assert!(second_moment_renewal(&table, 0.9, 3).is_err());
    }

    #[test]
    fn beta2_cases() {
        let g = EnvModel::gaussian();
        let b1 = solve_beta2(&WalkKernel::srw(1).unwrap(), &g, 1e-10).unwrap();
        assert_eq!(b1.value, Beta2Value::Finite { beta2: 0.0 });
        let k3 = WalkKernel::srw(3).unwrap();
        let b3 = solve_beta2(&k3, &g, 1e-10).unwrap();
        let pi = b3.collision.pi;
        let beta2 = b3.finite().unwrap();
        assert!((beta2 - (-pi.ln()).sqrt()).abs() < 1e-9);
        assert!(b3.residual <= 1e-10);
        let flat = EnvModel::two_point(0.5, 0.5, 0.3).unwrap();
        assert_eq!(solve_beta2(&k3, &flat, 1e-10).unwrap().value, Beta2Value::Infinite);
        // chi increases to 1 / P(omega = b): 5 for the first law, 1.25 < 1 / pi for the second.
        let capped = EnvModel::two_point(0.0, 1.0, 0.8).unwrap();
        let capped_low = EnvModel::two_point(0.0, 1.0, 0.2).unwrap();
        assert!(matches!(
            solve_beta2(&k3, &capped_low, 1e-10).unwrap().value,
            Beta2Value::InfiniteWithinRange { .. }
        ));
        assert!(solve_beta2(&k3, &capped, 1e-10).unwrap().finite().is_some());
    }

    #[test]
    fn growth_fit_rejects_short_grids_and_flags_subcritical() {
        let k = WalkKernel::srw(3).unwrap();
        let table = first_collision_law(&return_probs(&k, 2000).unwrap()).unwrap();
        assert!(critical_growth_fit(&table, 1.5, 0.34, &[10, 20, 50]).is_err());
        let fit = critical_growth_fit(&table, 1.5, 0.3405, &log_grid(10, 2000, 5)).unwrap();
        assert!(!fit.critical);
        assert!(fit.slope > 0.0 && fit.slope < 0.05, "{}", fit.slope);
    }
}
