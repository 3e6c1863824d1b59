//! Point-started partition functions `W_n` and `What_n(x)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::grid::{Grid, Shift};
use super::source::EnvSource;
use crate::env::EnvModel;
use crate::error::{Error, Result};
use crate::walk::{Site, WalkKernel};

/// The field `x -> What_n(x)` of a polymer started at the origin.
///
/// Internally the endpoint measure `mu_n = What_n / W_n` is stored together
/// with `log W_n`; this keeps every stored number of order one however large
/// or small `W_n` becomes.
#[derive(Debug, Clone)]
pub struct PolymerField {
    shifts: Vec<Shift>,
    beta: f64,
    lambda: f64,
    annealed: bool,
    time: u32,
    mu: Grid,
    spare: Grid,
    log_w: f64,
    max_mu: f64,
}

impl PolymerField {
    /// `n = 0`, `What_0 = delta_0`, `W_0 = 1`.
    pub fn init_point(kernel: &WalkKernel, env: &EnvModel, beta: f64) -> Result<Self> {
        let lambda = env.log_mgf(beta)?;
        let dim = kernel.dim();
        let parity = |s: &Site| s.iter().sum::<i64>().rem_euclid(2);
        let stride = if kernel.steps().iter().all(|s| parity(s) == parity(&kernel.steps()[0])) {
            2
        } else {
            1
        };
        Ok(PolymerField {
            shifts: Shift::forward(kernel),
            beta,
            lambda,
            annealed: beta == 0.0 || env.is_degenerate(),
            time: 0,
            mu: Grid::single(&vec![0; dim], 1.0, stride),
            spare: Grid::empty(dim, stride),
            log_w: 0.0,
            max_mu: 1.0,
        })
    }

    /// Advances to `n + 1` using `omega(n + 1, .)` from `env`.
    pub fn evolve_step<E: EnvSource>(&mut self, env: &E) -> Result<()> {
        self.step(env, None)
    }

    fn step<E: EnvSource>(&mut self, env: &E, order: Option<&[usize]>) -> Result<()> {
        let layout = self.mu.dilate(&self.shifts);
        self.spare.reset(layout, 0.0);
        self.mu.convolve_into(&mut self.spare, &self.shifts);
        std::mem::swap(&mut self.mu, &mut self.spare);
        let t = self.time + 1;
        if !self.annealed {
            weigh(&mut self.mu, env, t, self.beta, self.lambda, order)?;
        }
        let ratio = self.mu.sum();
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(Error::convergence(
                "field evolution",
                format!("mass ratio W_{t}/W_{} = {ratio}", self.time),
            ));
        }
        let inv = 1.0 / ratio;
        let mut max = 0.0f64;
        for v in self.mu.values.iter_mut() {
            *v *= inv;
            max = max.max(*v);
        }
        self.max_mu = max;
        if !self.annealed {
            self.log_w += ratio.ln();
        }
        self.time = t;
        Ok(())
    }

    pub fn time(&self) -> u32 {
        self.time
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `log W_n`.
    pub fn log_total_mass(&self) -> f64 {
        self.log_w
    }

    /// `W_n`.
    pub fn total_mass(&self) -> f64 {
        self.log_w.exp()
    }

    /// Number of sites carrying positive mass.
    pub fn support_size(&self) -> usize {
        self.mu.values.iter().filter(|&&v| v > 0.0).count()
    }

    /// `mu_n(x) = What_n(x) / W_n` on its support.
    pub fn endpoint_measure(&self) -> BTreeMap<Site, f64> {
        let mut out = BTreeMap::new();
        self.mu.for_each(|s, v| {
            if v > 0.0 {
                out.insert(s.to_vec(), v);
            }
        });
        out
    }

    /// `max_x mu_n(x)`.
    pub fn max_endpoint_mass(&self) -> f64 {
        self.max_mu
    }

    /// The first site (in lexicographic order) attaining `max_x mu_n(x)`.
    pub fn argmax_endpoint(&self) -> Site {
        let mut best = (f64::NEG_INFINITY, Vec::new());
        self.mu.for_each(|s, v| {
            if v > best.0 {
                best = (v, s.to_vec());
            }
        });
        best.1
    }

    /// `log max_x What_n(x)`.
    pub fn log_max_point_to_point(&self) -> f64 {
        self.max_mu.ln() + self.log_w
    }

    /// `log What_n(x)`; `-inf` off the support.
    pub fn log_point_to_point(&self, site: &[i64]) -> f64 {
        self.mu.get(site).ln() + self.log_w
    }

    /// `x -> log What_n(x)` on the support.
    pub fn logw(&self) -> BTreeMap<Site, f64> {
        let lw = self.log_w;
        self.endpoint_measure()
            .into_iter()
            .map(|(s, m)| (s, m.ln() + lw))
            .collect()
    }
}

/// Multiplies every site of `grid` carrying mass by `exp(beta omega - lambda)`.
/// With `order`, sites are visited in that permutation of the canonical order.
fn weigh<E: EnvSource>(
    grid: &mut Grid,
    env: &E,
    time: u32,
    beta: f64,
    lambda: f64,
    order: Option<&[usize]>,
) -> Result<()> {
    match order {
        None => {
            let mut omega = Vec::new();
            grid.for_each_row_mut(|site, lo, stride, vals| {
                omega.clear();
                omega.resize(vals.len(), 0.0);
                env.omega_row(time, site, lo, stride, vals, &mut omega)?;
                for (v, &w) in vals.iter_mut().zip(&omega) {
                    if *v != 0.0 {
                        *v *= (beta * w - lambda).exp();
                    }
                }
                Ok(())
            })
        }
        Some(order) => {
            let sites = grid.sites();
            for &i in order {
                if grid.values[i] != 0.0 {
                    grid.values[i] *= (beta * env.omega(time, &sites[i])? - lambda).exp();
                }
            }
            Ok(())
        }
    }
}

/// Result of running a polymer until `W_n >= A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum Overshoot {
    /// `tau_A = tau <= n_max`, with `log W_tau`, `max_x mu_tau(x)` and
    /// `log max_x What_tau(x)`.
    Hit {
        tau: u32,
        log_w: f64,
        max_mu: f64,
        log_max_hat_w: f64,
    },
    /// `W_n < A` for every `1 <= n <= n_max`.
    Censored { n_max: u32, log_w: f64 },
}

impl Overshoot {
    pub fn is_hit(&self) -> bool {
        matches!(self, Overshoot::Hit { .. })
    }
}

/// Evolves until `tau_A = inf{n >= 1 : W_n >= A}` or `n_max`, whichever first.
pub fn run_until_overshoot<E: EnvSource>(
    kernel: &WalkKernel,
    model: &EnvModel,
    beta: f64,
    a: f64,
    n_max: u32,
    env: &E,
) -> Result<Overshoot> {
    if !(a > 1.0) || !a.is_finite() {
        return Err(Error::invalid("run.A", format!("need a finite A > 1, got {a}")));
    }
    if n_max < 1 {
        return Err(Error::invalid("field.nmax", "need n_max >= 1"));
    }
    let log_a = a.ln();
    let mut field = PolymerField::init_point(kernel, model, beta)?;
    while field.time() < n_max {
        field.evolve_step(env)?;
        if field.log_total_mass() >= log_a {
            return Ok(Overshoot::Hit {
                tau: field.time(),
                log_w: field.log_total_mass(),
                max_mu: field.max_endpoint_mass(),
                log_max_hat_w: field.log_max_point_to_point(),
            });
        }
    }
    Ok(Overshoot::Censored {
        n_max,
        log_w: field.log_total_mass(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::source::{HashedEnv, Overridden};
    use crate::numeric::logsumexp;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    #[test]
    fn initial_state() {
        let k = WalkKernel::srw(2).unwrap();
        let f = PolymerField::init_point(&k, &EnvModel::gaussian(), 0.7).unwrap();
        assert_eq!(f.total_mass(), 1.0);
        assert_eq!(f.support_size(), 1);
        assert_eq!(f.endpoint_measure(), [(vec![0, 0], 1.0)].into());
    }

    #[test]
    fn zero_beta_keeps_unit_mass_and_walk_law() {
        let k = WalkKernel::srw(1).unwrap();
        let env = HashedEnv::for_replica(EnvModel::gaussian(), 3, 0);
        let mut f = PolymerField::init_point(&k, &EnvModel::gaussian(), 0.0).unwrap();
        for _ in 0..2 {
            f.evolve_step(&env).unwrap();
            assert_eq!(f.total_mass(), 1.0);
        }
        let mu = f.endpoint_measure();
        assert_eq!(mu, [(vec![-2], 0.25), (vec![0], 0.5), (vec![2], 0.25)].into());
    }

    #[test]
    fn one_step_two_point() {
        let model = EnvModel::two_point(-1.0, 1.0, 0.5).unwrap();
        let beta = 0.8;
        let env = HashedEnv::for_replica(model, 17, 2);
        let k = WalkKernel::srw(1).unwrap();
        let mut f = PolymerField::init_point(&k, &model, beta).unwrap();
        f.evolve_step(&env).unwrap();
        let lam = model.log_mgf(beta).unwrap();
        let expected = ((beta * env.value(1, &[-1])).exp() + (beta * env.value(1, &[1])).exp()) / (2.0 * lam.exp());
        assert!((f.total_mass() - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn logw_is_consistent_with_total_mass() {
        let k = WalkKernel::srw(3).unwrap();
        let model = EnvModel::gaussian();
        let env = HashedEnv::for_replica(model, 5, 1);
        let mut f = PolymerField::init_point(&k, &model, 1.5).unwrap();
        for _ in 0..12 {
            f.evolve_step(&env).unwrap();
            let lse = logsumexp(f.logw().into_values());
            assert!((lse - f.log_total_mass()).abs() < 1e-10);
            let total: f64 = f.endpoint_measure().values().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn site_visiting_order_does_not_matter() {
        let k = WalkKernel::srw(2).unwrap();
        let model = EnvModel::gaussian();
        let env = HashedEnv::for_replica(model, 77, 0);
        let mut plain = PolymerField::init_point(&k, &model, 0.9).unwrap();
        let mut shuffled = plain.clone();
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        for _ in 0..8 {
            plain.evolve_step(&env).unwrap();
            // The next layout has the same size in both copies.
            let layout = shuffled.mu.dilate(&shuffled.shifts);
            let mut probe = Grid::empty(2, shuffled.mu.stride());
            probe.reset(layout, 0.0);
            let mut order: Vec<usize> = (0..probe.len()).collect();
            order.shuffle(&mut rng);
            shuffled.step(&env, Some(&order)).unwrap();
            assert_eq!(plain.log_total_mass().to_bits(), shuffled.log_total_mass().to_bits());
            assert_eq!(plain.mu.values, shuffled.mu.values);
        }
    }

    #[test]
    fn mass_is_nondecreasing_in_each_omega() {
        let k = WalkKernel::srw(2).unwrap();
        let model = EnvModel::uniform(0.0, 1.0).unwrap();
        let base = HashedEnv::for_replica(model, 4, 4);
        let run = |env: &dyn EnvSource| {
            let mut f = PolymerField::init_point(&k, &model, 1.0).unwrap();
            for _ in 0..6 {
                f.evolve_step(&env).unwrap();
            }
            f.log_total_mass()
        };
        let w0 = run(&base);
        for (t, site) in [
            (1u32, vec![1i64, 0]),
            (3, vec![0, 1]),
            (6, vec![2, -2]),
            (4, vec![1, 1]),
        ] {
            let mut o = Overridden::new(base);
            o.set(t, site.clone(), base.value(t, &site) + 0.25);
            let w1 = run(&o);
            assert!(w1 >= w0, "{t} {site:?}");
        }
    }

    #[test]
    fn overshoot_contract() {
        let k = WalkKernel::srw(1).unwrap();
        let model = EnvModel::gaussian();
        let env = HashedEnv::for_replica(model, 0, 0);
        let out = run_until_overshoot(&k, &model, 0.0, 1.5, 50, &env).unwrap();
        assert_eq!(out, Overshoot::Censored { n_max: 50, log_w: 0.0 });
        assert!(run_until_overshoot(&k, &model, 1.0, 1.0, 5, &env).is_err());
        for r in 0..200 {
            let env = HashedEnv::for_replica(model, 12, r);
            if let Overshoot::Hit { tau, log_w, .. } = run_until_overshoot(&k, &model, 1.2, 2.0, 30, &env).unwrap() {
                assert!(log_w >= 2f64.ln());
                let mut f = PolymerField::init_point(&k, &model, 1.2).unwrap();
                for _ in 1..tau {
                    f.evolve_step(&env).unwrap();
                    assert!(f.total_mass() < 2.0);
                }
            }
        }
    }
}
